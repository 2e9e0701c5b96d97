"""Core syntax: sorts, values, expressions, labels, types, processes, messages.

All nodes are frozen dataclasses, immutable after construction and safe to
share.  Substitution, free names and the syntactic predicates (roles, actors,
nsr, unr) live here as well.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Mapping, Optional, Union


class SyntaxError_(Exception):
    """Malformed term or ill-typed construction."""


class EvalError(Exception):
    """Expression evaluation failure (unbound name, sort mismatch)."""


# ---------------------------------------------------------------------------
# Sorts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sort:
    pass


@dataclass(frozen=True)
class BaseSort(Sort):
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class TupleSort(Sort):
    elems: tuple[Sort, ...]

    def __str__(self) -> str:
        return "(" + ", ".join(str(s) for s in self.elems) + ")"


@dataclass(frozen=True)
class EndpointSort(Sort):
    """Sort of a delegated session endpoint; opaque payload sort."""

    role: int

    def __str__(self) -> str:
        return f"EP[{self.role}]"


NAT = BaseSort("Nat")
BOOL = BaseSort("Bool")
BEL = BaseSort("Bel")    # belief values, the two-element set {0, 1}
ACK = BaseSort("Ack")    # acknowledgements, {true, false}


def sort_le(s1: Sort, s2: Sort) -> bool:
    """s1 usable where s2 is expected.  Bel values are naturals, acks are booleans."""
    if s1 == s2:
        return True
    if s1 == BEL and s2 == NAT:
        return True
    if s1 == ACK and s2 == BOOL:
        return True
    if isinstance(s1, TupleSort) and isinstance(s2, TupleSort):
        return len(s1.elems) == len(s2.elems) and all(
            sort_le(a, b) for a, b in zip(s1.elems, s2.elems))
    return False


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Value:
    pass


@dataclass(frozen=True)
class NatV(Value):
    n: int

    def __str__(self) -> str:
        return str(self.n)


@dataclass(frozen=True)
class BoolV(Value):
    b: bool

    def __str__(self) -> str:
        return "true" if self.b else "false"


@dataclass(frozen=True)
class BotV(Value):
    """The distinguished absent value; inhabits every sort."""

    def __str__(self) -> str:
        return "bot"


@dataclass(frozen=True)
class TupleV(Value):
    items: tuple[Value, ...]

    def __str__(self) -> str:
        return "(" + ", ".join(str(v) for v in self.items) + ")"


BOT = BotV()
TRUE = BoolV(True)
FALSE = BoolV(False)


def has_sort(v: Value, s: Sort) -> bool:
    """Value membership in a sort.  BotV inhabits every sort."""
    if isinstance(v, BotV):
        return True
    if isinstance(v, NatV):
        if s == NAT:
            return v.n >= 0
        return s == BEL and v.n in (0, 1)
    if isinstance(v, BoolV):
        return s in (BOOL, ACK)
    if isinstance(v, TupleV):
        return (isinstance(s, TupleSort) and len(s.elems) == len(v.items)
                and all(has_sort(x, t) for x, t in zip(v.items, s.elems)))
    return False


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Lit(Expr):
    value: Value


@dataclass(frozen=True)
class Name(Expr):
    x: str


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + * mod = < >=
    left: Expr
    right: Expr


@dataclass(frozen=True)
class TupleE(Expr):
    items: tuple[Expr, ...]


@dataclass(frozen=True)
class IndexE(Expr):
    """Knowledge-vector read: tup[idx], zero-based."""

    tup: Expr
    idx: Expr


@dataclass(frozen=True)
class UpdateE(Expr):
    """Knowledge-vector functional update: tup{idx := val}."""

    tup: Expr
    idx: Expr
    val: Expr


@dataclass(frozen=True)
class Apply(Expr):
    """Application of a registered pure function (best, countAck, countKnown)."""

    fn: str
    args: tuple[Expr, ...]


def _fn_best(args: list[Value]) -> Value:
    (k,) = args
    if not isinstance(k, TupleV):
        raise EvalError("best expects a tuple")
    beliefs = [v.n for v in k.items if isinstance(v, NatV)]
    if not beliefs:
        raise EvalError("best of a vector with no belief entries")
    # most frequent belief, ties broken toward the smaller value
    counts = {b: beliefs.count(b) for b in set(beliefs)}
    best = min(sorted(counts), key=lambda b: (-counts[b], b))
    return NatV(best)


def _fn_count_ack(args: list[Value]) -> Value:
    (k,) = args
    if not isinstance(k, TupleV):
        raise EvalError("countAck expects a tuple")
    return NatV(sum(1 for v in k.items if v == TRUE))


def _fn_count_known(args: list[Value]) -> Value:
    (k,) = args
    if not isinstance(k, TupleV):
        raise EvalError("countKnown expects a tuple")
    return NatV(sum(1 for v in k.items if not isinstance(v, BotV)))


# name -> (arity, implementation, result sort)
FUNCTIONS: dict[str, tuple[int, Callable[[list[Value]], Value], Sort]] = {
    "best": (1, _fn_best, BEL),
    "countAck": (1, _fn_count_ack, NAT),
    "countKnown": (1, _fn_count_known, NAT),
}


def register_function(name: str, arity: int,
                      impl: Callable[[list[Value]], Value], result: Sort) -> None:
    """Extend the expression language with a pure named function."""
    FUNCTIONS[name] = (arity, impl, result)


Env = Mapping[str, Value]


def eval_expr(e: Expr, env: Env) -> Value:
    """Evaluate a closed-under-env expression to a value.  Deterministic."""
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Name):
        if e.x not in env:
            raise EvalError(f"unbound name {e.x!r}")
        return env[e.x]
    if isinstance(e, BinOp):
        l = eval_expr(e.left, env)
        r = eval_expr(e.right, env)
        if e.op in ("+", "*", "mod"):
            if not isinstance(l, NatV) or not isinstance(r, NatV):
                raise EvalError(f"arithmetic {e.op} on non-naturals")
            if e.op == "+":
                return NatV(l.n + r.n)
            if e.op == "*":
                return NatV(l.n * r.n)
            if r.n == 0:
                raise EvalError("mod by zero")
            return NatV(l.n % r.n)
        if e.op == "=":
            return BoolV(l == r)
        if e.op in ("<", ">="):
            if not isinstance(l, NatV) or not isinstance(r, NatV):
                raise EvalError(f"comparison {e.op} on non-naturals")
            return BoolV(l.n < r.n if e.op == "<" else l.n >= r.n)
        raise EvalError(f"unknown operator {e.op}")
    if isinstance(e, TupleE):
        return TupleV(tuple(eval_expr(x, env) for x in e.items))
    if isinstance(e, IndexE):
        t = eval_expr(e.tup, env)
        i = eval_expr(e.idx, env)
        if not isinstance(t, TupleV) or not isinstance(i, NatV):
            raise EvalError("index expects tuple and natural")
        if i.n >= len(t.items):
            raise EvalError("index out of range")
        return t.items[i.n]
    if isinstance(e, UpdateE):
        t = eval_expr(e.tup, env)
        i = eval_expr(e.idx, env)
        v = eval_expr(e.val, env)
        if not isinstance(t, TupleV) or not isinstance(i, NatV):
            raise EvalError("update expects tuple and natural")
        if i.n >= len(t.items):
            raise EvalError("update index out of range")
        items = list(t.items)
        items[i.n] = v
        return TupleV(tuple(items))
    if isinstance(e, Apply):
        if e.fn not in FUNCTIONS:
            raise EvalError(f"unknown function {e.fn!r}")
        arity, impl, _ = FUNCTIONS[e.fn]
        if len(e.args) != arity:
            raise EvalError(f"{e.fn} expects {arity} argument(s)")
        return impl([eval_expr(a, env) for a in e.args])
    raise EvalError(f"cannot evaluate {e!r}")


def nat(n: int) -> Expr:
    return Lit(NatV(n))


def expr_names(e: Expr) -> frozenset[str]:
    if isinstance(e, Name):
        return frozenset({e.x})
    if isinstance(e, Lit):
        return frozenset()
    if isinstance(e, BinOp):
        return expr_names(e.left) | expr_names(e.right)
    if isinstance(e, TupleE):
        return frozenset().union(*[expr_names(x) for x in e.items]) if e.items else frozenset()
    if isinstance(e, IndexE):
        return expr_names(e.tup) | expr_names(e.idx)
    if isinstance(e, UpdateE):
        return expr_names(e.tup) | expr_names(e.idx) | expr_names(e.val)
    if isinstance(e, Apply):
        return frozenset().union(*[expr_names(a) for a in e.args]) if e.args else frozenset()
    raise SyntaxError_(f"not an expression: {e!r}")


def subst_expr(e: Expr, sub: Mapping[str, Expr]) -> Expr:
    if not sub:
        return e
    if isinstance(e, Name):
        return sub.get(e.x, e)
    if isinstance(e, Lit):
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, subst_expr(e.left, sub), subst_expr(e.right, sub))
    if isinstance(e, TupleE):
        return TupleE(tuple(subst_expr(x, sub) for x in e.items))
    if isinstance(e, IndexE):
        return IndexE(subst_expr(e.tup, sub), subst_expr(e.idx, sub))
    if isinstance(e, UpdateE):
        return UpdateE(subst_expr(e.tup, sub), subst_expr(e.idx, sub), subst_expr(e.val, sub))
    if isinstance(e, Apply):
        return Apply(e.fn, tuple(subst_expr(a, sub) for a in e.args))
    raise SyntaxError_(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Label:
    """A label with a static symbol and an optional runtime part.

    Only the static part takes part in compatibility; runtime parts carry
    run-specific data such as round numbers.
    """

    name: str
    runtime: tuple[Expr, ...] = ()


def labels_compatible(l1: Label, l2: Label) -> bool:
    return l1.name == l2.name


def label_runtime_values(l: Label, env: Env = {}) -> tuple[Value, ...]:
    return tuple(eval_expr(e, env) for e in l.runtime)


# ---------------------------------------------------------------------------
# Global types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalType:
    pass


@dataclass(frozen=True)
class GCommR(GlobalType):
    sender: int
    receiver: int
    sort: Sort
    cont: GlobalType


@dataclass(frozen=True)
class GCommU(GlobalType):
    sender: int
    receiver: int
    label: Label
    sort: Sort
    cont: GlobalType


@dataclass(frozen=True)
class GBranR(GlobalType):
    selector: int
    chooser_target: int
    branches: tuple[tuple[Label, GlobalType], ...]


@dataclass(frozen=True)
class GBranW(GlobalType):
    selector: int
    targets: frozenset[int]
    branches: tuple[tuple[Label, GlobalType], ...]
    default: Label  # must be one of the branch labels


@dataclass(frozen=True)
class GPar(GlobalType):
    left: GlobalType
    right: GlobalType


@dataclass(frozen=True)
class GRec(GlobalType):
    tvar: str
    counter: str
    body: GlobalType


@dataclass(frozen=True)
class GVar(GlobalType):
    tvar: str


@dataclass(frozen=True)
class GEnd(GlobalType):
    pass


@dataclass(frozen=True)
class GLoop(GlobalType):
    roles: frozenset[int]
    ident: Expr
    counter: str
    sort0: Sort            # sort of loop-call values
    program: GlobalType
    sort2: Sort            # sort of loop-exit values
    cont: GlobalType


@dataclass(frozen=True)
class GCall(GlobalType):
    ident: Expr


@dataclass(frozen=True)
class GDeleg(GlobalType):
    sender: int
    receiver: int
    chan: str
    role: int
    dtype: "LocalType"
    cont: GlobalType


# ---------------------------------------------------------------------------
# Local types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalType:
    pass


@dataclass(frozen=True)
class LSendR(LocalType):
    to: int
    sort: Sort
    cont: LocalType


@dataclass(frozen=True)
class LGetR(LocalType):
    frm: int
    sort: Sort
    cont: LocalType


@dataclass(frozen=True)
class LSendU(LocalType):
    to: int
    label: Label
    sort: Sort
    cont: LocalType


@dataclass(frozen=True)
class LGetU(LocalType):
    frm: int
    label: Label
    sort: Sort
    cont: LocalType


@dataclass(frozen=True)
class LSelR(LocalType):
    to: int
    branches: tuple[tuple[Label, LocalType], ...]


@dataclass(frozen=True)
class LBranR(LocalType):
    frm: int
    branches: tuple[tuple[Label, LocalType], ...]


@dataclass(frozen=True)
class LSelW(LocalType):
    to: frozenset[int]
    branches: tuple[tuple[Label, LocalType], ...]


@dataclass(frozen=True)
class LBranW(LocalType):
    frm: int
    branches: tuple[tuple[Label, LocalType], ...]
    default: Label


@dataclass(frozen=True)
class LRec(LocalType):
    tvar: str
    counter: str
    value: int
    body: LocalType


@dataclass(frozen=True)
class LVar(LocalType):
    tvar: str


@dataclass(frozen=True)
class LEnd(LocalType):
    pass


@dataclass(frozen=True)
class LLoop(LocalType):
    roles: frozenset[int]
    ident: Expr
    counter: str
    value: int
    sort0: Sort
    program: LocalType
    body: LocalType
    sort2: Sort
    cont: LocalType


@dataclass(frozen=True)
class LCallT(LocalType):
    ident: Expr


@dataclass(frozen=True)
class LDelegSend(LocalType):
    to: int
    chan: str
    role: int
    dtype: LocalType
    cont: LocalType


@dataclass(frozen=True)
class LDelegRecv(LocalType):
    frm: int
    chan: str
    role: int
    dtype: LocalType
    cont: LocalType


# ---------------------------------------------------------------------------
# Messages and message types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Message:
    pass


@dataclass(frozen=True)
class MsgR(Message):
    value: Value


@dataclass(frozen=True)
class MsgU(Message):
    label_name: str
    runtime: tuple[Value, ...]
    value: Value

    @property
    def label(self) -> Label:
        return Label(self.label_name, tuple(Lit(v) for v in self.runtime))


@dataclass(frozen=True)
class MsgBR(Message):
    label_name: str
    runtime: tuple[Value, ...]


@dataclass(frozen=True)
class MsgBW(Message):
    label_name: str
    runtime: tuple[Value, ...]


@dataclass(frozen=True)
class MsgExit(Message):
    """Exit notice for a loop; the identifier is always an evaluated value."""

    ident: Value
    value: Value


@dataclass(frozen=True)
class MsgDeleg(Message):
    chan: str
    role: int


@dataclass(frozen=True)
class MessageType:
    pass


@dataclass(frozen=True)
class MTR(MessageType):
    sort: Sort


@dataclass(frozen=True)
class MTU(MessageType):
    label_name: str
    sort: Sort


@dataclass(frozen=True)
class MTBR(MessageType):
    label_name: str


@dataclass(frozen=True)
class MTBW(MessageType):
    label_name: str


@dataclass(frozen=True)
class MTExit(MessageType):
    ident: Expr
    sort: Sort


@dataclass(frozen=True)
class MTDeleg(MessageType):
    chan: str
    role: int


# ---------------------------------------------------------------------------
# Processes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Process:
    pass


@dataclass(frozen=True)
class PReq(Process):
    chan: str
    n: int
    session: str   # binder
    body: Process


@dataclass(frozen=True)
class PAcc(Process):
    chan: str
    role: int
    session: str   # binder
    body: Process


@dataclass(frozen=True)
class PSendR(Process):
    session: str
    me: int
    to: int
    expr: Expr
    cont: Process


@dataclass(frozen=True)
class PGetR(Process):
    session: str
    me: int
    frm: int
    binder: str
    cont: Process


@dataclass(frozen=True)
class PSendU(Process):
    session: str
    me: int
    to: int
    label: Label
    expr: Expr
    cont: Process


@dataclass(frozen=True)
class PGetU(Process):
    session: str
    me: int
    frm: int
    label: Label
    default: Expr
    binder: str
    cont: Process


@dataclass(frozen=True)
class PSelR(Process):
    session: str
    me: int
    to: int
    label: Label
    cont: Process


@dataclass(frozen=True)
class PBranR(Process):
    session: str
    me: int
    frm: int
    branches: tuple[tuple[Label, Process], ...]


@dataclass(frozen=True)
class PSelW(Process):
    session: str
    me: int
    to: frozenset[int]
    label: Label
    cont: Process


@dataclass(frozen=True)
class PBranW(Process):
    session: str
    me: int
    frm: int
    branches: tuple[tuple[Label, Process], ...]
    default: Label


@dataclass(frozen=True)
class PPar(Process):
    left: Process
    right: Process


@dataclass(frozen=True)
class PRec(Process):
    pvar: str
    counter: str
    value: int
    body: Process


@dataclass(frozen=True)
class PVar(Process):
    pvar: str


@dataclass(frozen=True)
class PEnd(Process):
    pass


@dataclass(frozen=True)
class PLoop(Process):
    session: str
    me: int
    roles: frozenset[int]
    ident: Expr
    counter: str
    value: int
    binder_x: str
    program: Process
    body: Process
    binder_y: str
    cont: Process


@dataclass(frozen=True)
class PCall(Process):
    ident: Expr
    arg: Expr


@dataclass(frozen=True)
class PExit(Process):
    ident: Expr
    arg: Expr


@dataclass(frozen=True)
class PIf(Process):
    guard: Expr
    then: Process
    els: Process


@dataclass(frozen=True)
class PRes(Process):
    name: str
    body: Process
    sort: Optional[Sort] = None  # optional annotation for value restrictions


@dataclass(frozen=True)
class PCrash(Process):
    pass


@dataclass(frozen=True)
class PDelegSend(Process):
    session: str
    me: int
    to: int
    chan: str
    role: int
    cont: Process


@dataclass(frozen=True)
class PDelegRecv(Process):
    session: str
    me: int
    frm: int
    chan_binder: str
    role_binder: str
    cont: Process


@dataclass(frozen=True)
class PQueue(Process):
    session: str
    frm: int
    to: int
    messages: tuple[Message, ...]


END = PEnd()
CRASH = PCrash()
GEND = GEnd()
LEND = LEnd()

Term = Union[Process, GlobalType, LocalType]


# ---------------------------------------------------------------------------
# Parallel flattening helpers
# ---------------------------------------------------------------------------

def par_parts(p: Process) -> list[Process]:
    """Flatten nested parallel composition into a list."""
    if isinstance(p, PPar):
        return par_parts(p.left) + par_parts(p.right)
    return [p]


def par(parts: Iterable[Process]) -> Process:
    """Right-fold a list of processes into a parallel composition."""
    parts = [q for q in parts]
    if not parts:
        return END
    out = parts[-1]
    for q in reversed(parts[:-1]):
        out = PPar(q, out)
    return out


# ---------------------------------------------------------------------------
# Free names
# ---------------------------------------------------------------------------

def _label_names(l: Label) -> frozenset[str]:
    out: frozenset[str] = frozenset()
    for e in l.runtime:
        out |= expr_names(e)
    return out


def free_names(p: Process) -> frozenset[str]:
    """Free names of a process: session/shared channels and value names.

    Roles are naturals, not names.  Process and type variables are tracked
    separately by free_pvars.
    """
    if isinstance(p, (PEnd, PCrash, PVar)):
        return frozenset()
    if isinstance(p, PReq):
        return frozenset({p.chan}) | (free_names(p.body) - {p.session})
    if isinstance(p, PAcc):
        return frozenset({p.chan}) | (free_names(p.body) - {p.session})
    if isinstance(p, PSendR):
        return frozenset({p.session}) | expr_names(p.expr) | free_names(p.cont)
    if isinstance(p, PGetR):
        return frozenset({p.session}) | (free_names(p.cont) - {p.binder})
    if isinstance(p, PSendU):
        return frozenset({p.session}) | _label_names(p.label) | expr_names(p.expr) | free_names(p.cont)
    if isinstance(p, PGetU):
        return (frozenset({p.session}) | _label_names(p.label) | expr_names(p.default)
                | (free_names(p.cont) - {p.binder}))
    if isinstance(p, PSelR):
        return frozenset({p.session}) | _label_names(p.label) | free_names(p.cont)
    if isinstance(p, (PBranR, PBranW)):
        out = frozenset({p.session})
        for l, q in p.branches:
            out |= _label_names(l) | free_names(q)
        return out
    if isinstance(p, PSelW):
        return frozenset({p.session}) | _label_names(p.label) | free_names(p.cont)
    if isinstance(p, PPar):
        return free_names(p.left) | free_names(p.right)
    if isinstance(p, PRec):
        return free_names(p.body) - {p.counter}
    if isinstance(p, PLoop):
        prog = free_names(p.program) - {p.binder_x, p.counter}
        body = free_names(p.body)
        cont = free_names(p.cont) - {p.binder_y}
        return frozenset({p.session}) | expr_names(p.ident) | prog | body | cont
    if isinstance(p, (PCall, PExit)):
        return expr_names(p.ident) | expr_names(p.arg)
    if isinstance(p, PIf):
        return expr_names(p.guard) | free_names(p.then) | free_names(p.els)
    if isinstance(p, PRes):
        return free_names(p.body) - {p.name}
    if isinstance(p, PDelegSend):
        return frozenset({p.session, p.chan}) | free_names(p.cont)
    if isinstance(p, PDelegRecv):
        return frozenset({p.session}) | (free_names(p.cont) - {p.chan_binder, p.role_binder})
    if isinstance(p, PQueue):
        out = frozenset({p.session})
        for m in p.messages:
            if isinstance(m, MsgDeleg):
                out |= {m.chan}
        return out
    raise SyntaxError_(f"free_names: not a process: {p!r}")


def free_pvars(p: Process) -> frozenset[str]:
    if isinstance(p, PVar):
        return frozenset({p.pvar})
    if isinstance(p, PRec):
        return free_pvars(p.body) - {p.pvar}
    out: frozenset[str] = frozenset()
    for q in _child_processes(p):
        out |= free_pvars(q)
    return out


def _child_processes(p: Process) -> list[Process]:
    out = []
    for f in fields(p):
        v = getattr(p, f.name)
        if isinstance(v, Process):
            out.append(v)
        elif isinstance(v, tuple):
            for item in v:
                if isinstance(item, tuple) and len(item) == 2 and isinstance(item[1], Process):
                    out.append(item[1])
    return out


# ---------------------------------------------------------------------------
# Fresh name supply
# ---------------------------------------------------------------------------

def fresh_name(base: str, avoid: frozenset[str] | set[str]) -> str:
    if base not in avoid:
        return base
    for i in itertools.count():
        cand = f"{base}_{i}"
        if cand not in avoid:
            return cand
    raise AssertionError


# ---------------------------------------------------------------------------
# Substitution on processes (names -> expressions, pvars -> processes)
# ---------------------------------------------------------------------------

def _sub_label(l: Label, sub: Mapping[str, Expr]) -> Label:
    if not l.runtime:
        return l
    return Label(l.name, tuple(subst_expr(e, sub) for e in l.runtime))


def _repl_names(sub: Mapping[str, Expr]) -> frozenset[str]:
    out: frozenset[str] = frozenset()
    for e in sub.values():
        out |= expr_names(e)
    return out


def _narrow(sub: Mapping[str, Expr], bound: Iterable[str]) -> dict[str, Expr]:
    return {k: v for k, v in sub.items() if k not in set(bound)}


def _chan_of(sub: Mapping[str, Expr], c: str) -> str:
    """Channel positions only admit name-for-name substitution."""
    e = sub.get(c)
    if e is None:
        return c
    if isinstance(e, Name):
        return e.x
    raise SyntaxError_(f"cannot substitute non-name {e!r} for channel {c!r}")


def _role_of(sub: Mapping[str, Expr], r: int | str) -> int | str:
    """Role positions hold naturals, or names bound by delegation reception."""
    if isinstance(r, int):
        return r
    e = sub.get(r)
    if e is None:
        return r
    if isinstance(e, Lit) and isinstance(e.value, NatV):
        return e.value.n
    if isinstance(e, Name):
        return e.x
    raise SyntaxError_(f"cannot substitute {e!r} into role position")


def subst_process(p: Process, sub: Mapping[str, Expr]) -> Process:
    """Capture-avoiding substitution of names by expressions in a process."""
    if not sub:
        return p

    def freshen(binder: str, body: Process, sub: dict[str, Expr]) -> tuple[str, Process]:
        # rename a binder that would capture a name introduced by sub
        if binder in _repl_names(sub):
            nb = fresh_name(binder, _repl_names(sub) | free_names(body) | set(sub))
            return nb, subst_process(body, {binder: Name(nb)})
        return binder, body

    def go(p: Process, sub: dict[str, Expr]) -> Process:
        if not sub:
            return p
        if isinstance(p, (PEnd, PCrash, PVar)):
            return p
        if isinstance(p, PReq):
            s2 = _narrow(sub, [p.session])
            b, body = freshen(p.session, p.body, s2)
            return PReq(_chan_of(sub, p.chan), p.n, b, go(body, s2))
        if isinstance(p, PAcc):
            s2 = _narrow(sub, [p.session])
            b, body = freshen(p.session, p.body, s2)
            return PAcc(_chan_of(sub, p.chan), p.role, b, go(body, s2))
        if isinstance(p, PSendR):
            return PSendR(_chan_of(sub, p.session), p.me, p.to,
                          subst_expr(p.expr, sub), go(p.cont, sub))
        if isinstance(p, PGetR):
            s2 = _narrow(sub, [p.binder])
            b, cont = freshen(p.binder, p.cont, s2)
            return PGetR(_chan_of(sub, p.session), p.me, p.frm, b, go(cont, s2))
        if isinstance(p, PSendU):
            return PSendU(_chan_of(sub, p.session), p.me, p.to, _sub_label(p.label, sub),
                          subst_expr(p.expr, sub), go(p.cont, sub))
        if isinstance(p, PGetU):
            s2 = _narrow(sub, [p.binder])
            b, cont = freshen(p.binder, p.cont, s2)
            return PGetU(_chan_of(sub, p.session), p.me, p.frm, _sub_label(p.label, sub),
                         subst_expr(p.default, sub), b, go(cont, s2))
        if isinstance(p, PSelR):
            return PSelR(_chan_of(sub, p.session), p.me, p.to, _sub_label(p.label, sub),
                         go(p.cont, sub))
        if isinstance(p, PBranR):
            return PBranR(_chan_of(sub, p.session), p.me, p.frm,
                          tuple((_sub_label(l, sub), go(q, sub)) for l, q in p.branches))
        if isinstance(p, PSelW):
            return PSelW(_chan_of(sub, p.session), p.me, p.to, _sub_label(p.label, sub),
                         go(p.cont, sub))
        if isinstance(p, PBranW):
            return PBranW(_chan_of(sub, p.session), p.me, p.frm,
                          tuple((_sub_label(l, sub), go(q, sub)) for l, q in p.branches),
                          _sub_label(p.default, sub))
        if isinstance(p, PPar):
            return PPar(go(p.left, sub), go(p.right, sub))
        if isinstance(p, PRec):
            s2 = _narrow(sub, [p.counter])
            c, body = freshen(p.counter, p.body, s2)
            return PRec(p.pvar, c, p.value, go(body, s2))
        if isinstance(p, PLoop):
            sp = _narrow(sub, [p.binder_x, p.counter])
            bx, prog = freshen(p.binder_x, p.program, sp)
            bc, prog = freshen(p.counter, prog, sp)
            sc = _narrow(sub, [p.binder_y])
            by, cont = freshen(p.binder_y, p.cont, sc)
            return PLoop(_chan_of(sub, p.session), p.me, p.roles,
                         subst_expr(p.ident, sub), bc, p.value,
                         bx, go(prog, sp), go(p.body, sub),
                         by, go(cont, sc))
        if isinstance(p, PCall):
            return PCall(subst_expr(p.ident, sub), subst_expr(p.arg, sub))
        if isinstance(p, PExit):
            return PExit(subst_expr(p.ident, sub), subst_expr(p.arg, sub))
        if isinstance(p, PIf):
            return PIf(subst_expr(p.guard, sub), go(p.then, sub), go(p.els, sub))
        if isinstance(p, PRes):
            s2 = _narrow(sub, [p.name])
            b, body = freshen(p.name, p.body, s2)
            return PRes(b, go(body, s2), p.sort)
        if isinstance(p, PDelegSend):
            return PDelegSend(_chan_of(sub, p.session), p.me, _role_of(sub, p.to),
                              _chan_of(sub, p.chan), _role_of(sub, p.role), go(p.cont, sub))
        if isinstance(p, PDelegRecv):
            s2 = _narrow(sub, [p.chan_binder, p.role_binder])
            return PDelegRecv(_chan_of(sub, p.session), p.me, p.frm,
                              p.chan_binder, p.role_binder, go(p.cont, s2))
        if isinstance(p, PQueue):
            return PQueue(_chan_of(sub, p.session), p.frm, p.to, p.messages)
        raise SyntaxError_(f"substitute: not a process: {p!r}")

    return go(p, dict(sub))


def subst_pvar(p: Process, pvar: str, repl: Process) -> Process:
    """Substitute a process for a process variable (recursion unfolding)."""
    if isinstance(p, PVar):
        return repl if p.pvar == pvar else p
    if isinstance(p, PRec) and p.pvar == pvar:
        return p

    def rebuild(q: Process) -> Process:
        return subst_pvar(q, pvar, repl)

    if isinstance(p, (PEnd, PCrash, PQueue, PCall, PExit)):
        return p
    if isinstance(p, PReq):
        return PReq(p.chan, p.n, p.session, rebuild(p.body))
    if isinstance(p, PAcc):
        return PAcc(p.chan, p.role, p.session, rebuild(p.body))
    if isinstance(p, PSendR):
        return PSendR(p.session, p.me, p.to, p.expr, rebuild(p.cont))
    if isinstance(p, PGetR):
        return PGetR(p.session, p.me, p.frm, p.binder, rebuild(p.cont))
    if isinstance(p, PSendU):
        return PSendU(p.session, p.me, p.to, p.label, p.expr, rebuild(p.cont))
    if isinstance(p, PGetU):
        return PGetU(p.session, p.me, p.frm, p.label, p.default, p.binder, rebuild(p.cont))
    if isinstance(p, PSelR):
        return PSelR(p.session, p.me, p.to, p.label, rebuild(p.cont))
    if isinstance(p, PBranR):
        return PBranR(p.session, p.me, p.frm, tuple((l, rebuild(q)) for l, q in p.branches))
    if isinstance(p, PSelW):
        return PSelW(p.session, p.me, p.to, p.label, rebuild(p.cont))
    if isinstance(p, PBranW):
        return PBranW(p.session, p.me, p.frm,
                      tuple((l, rebuild(q)) for l, q in p.branches), p.default)
    if isinstance(p, PPar):
        return PPar(rebuild(p.left), rebuild(p.right))
    if isinstance(p, PRec):
        return PRec(p.pvar, p.counter, p.value, rebuild(p.body))
    if isinstance(p, PLoop):
        return PLoop(p.session, p.me, p.roles, p.ident, p.counter, p.value,
                     p.binder_x, rebuild(p.program), rebuild(p.body),
                     p.binder_y, rebuild(p.cont))
    if isinstance(p, PIf):
        return PIf(p.guard, rebuild(p.then), rebuild(p.els))
    if isinstance(p, PRes):
        return PRes(p.name, rebuild(p.body), p.sort)
    if isinstance(p, PDelegSend):
        return PDelegSend(p.session, p.me, p.to, p.chan, p.role, rebuild(p.cont))
    if isinstance(p, PDelegRecv):
        return PDelegRecv(p.session, p.me, p.frm, p.chan_binder, p.role_binder,
                          rebuild(p.cont))
    raise SyntaxError_(f"subst_pvar: not a process: {p!r}")


# ---------------------------------------------------------------------------
# Substitution on types (names -> expressions, tvars -> local types)
# ---------------------------------------------------------------------------

def subst_gtype(g: GlobalType, sub: Mapping[str, Expr]) -> GlobalType:
    if not sub:
        return g
    if isinstance(g, (GEnd, GVar)):
        return g
    if isinstance(g, GCommR):
        return GCommR(g.sender, g.receiver, g.sort, subst_gtype(g.cont, sub))
    if isinstance(g, GCommU):
        return GCommU(g.sender, g.receiver, _sub_label(g.label, sub), g.sort,
                      subst_gtype(g.cont, sub))
    if isinstance(g, GBranR):
        return GBranR(g.selector, g.chooser_target,
                      tuple((_sub_label(l, sub), subst_gtype(b, sub)) for l, b in g.branches))
    if isinstance(g, GBranW):
        return GBranW(g.selector, g.targets,
                      tuple((_sub_label(l, sub), subst_gtype(b, sub)) for l, b in g.branches),
                      _sub_label(g.default, sub))
    if isinstance(g, GPar):
        return GPar(subst_gtype(g.left, sub), subst_gtype(g.right, sub))
    if isinstance(g, GRec):
        return GRec(g.tvar, g.counter, subst_gtype(g.body, _narrow(sub, [g.counter])))
    if isinstance(g, GLoop):
        return GLoop(g.roles, subst_expr(g.ident, sub), g.counter, g.sort0,
                     subst_gtype(g.program, _narrow(sub, [g.counter])),
                     g.sort2, subst_gtype(g.cont, sub))
    if isinstance(g, GCall):
        return GCall(subst_expr(g.ident, sub))
    if isinstance(g, GDeleg):
        return GDeleg(g.sender, g.receiver, g.chan, g.role, g.dtype,
                      subst_gtype(g.cont, sub))
    raise SyntaxError_(f"subst_gtype: not a global type: {g!r}")


def subst_ltype(t: LocalType, sub: Mapping[str, Expr]) -> LocalType:
    if not sub:
        return t
    if isinstance(t, (LEnd, LVar)):
        return t
    if isinstance(t, LSendR):
        return LSendR(t.to, t.sort, subst_ltype(t.cont, sub))
    if isinstance(t, LGetR):
        return LGetR(t.frm, t.sort, subst_ltype(t.cont, sub))
    if isinstance(t, LSendU):
        return LSendU(t.to, _sub_label(t.label, sub), t.sort, subst_ltype(t.cont, sub))
    if isinstance(t, LGetU):
        return LGetU(t.frm, _sub_label(t.label, sub), t.sort, subst_ltype(t.cont, sub))
    if isinstance(t, LSelR):
        return LSelR(t.to, tuple((_sub_label(l, sub), subst_ltype(b, sub)) for l, b in t.branches))
    if isinstance(t, LBranR):
        return LBranR(t.frm, tuple((_sub_label(l, sub), subst_ltype(b, sub)) for l, b in t.branches))
    if isinstance(t, LSelW):
        return LSelW(t.to, tuple((_sub_label(l, sub), subst_ltype(b, sub)) for l, b in t.branches))
    if isinstance(t, LBranW):
        return LBranW(t.frm, tuple((_sub_label(l, sub), subst_ltype(b, sub)) for l, b in t.branches),
                      _sub_label(t.default, sub))
    if isinstance(t, LRec):
        return LRec(t.tvar, t.counter, t.value, subst_ltype(t.body, _narrow(sub, [t.counter])))
    if isinstance(t, LLoop):
        return LLoop(t.roles, subst_expr(t.ident, sub), t.counter, t.value, t.sort0,
                     subst_ltype(t.program, _narrow(sub, [t.counter])),
                     subst_ltype(t.body, sub), t.sort2, subst_ltype(t.cont, sub))
    if isinstance(t, LCallT):
        return LCallT(subst_expr(t.ident, sub))
    if isinstance(t, LDelegSend):
        return LDelegSend(t.to, t.chan, t.role, t.dtype, subst_ltype(t.cont, sub))
    if isinstance(t, LDelegRecv):
        return LDelegRecv(t.frm, t.chan, t.role, t.dtype, subst_ltype(t.cont, sub))
    raise SyntaxError_(f"subst_ltype: not a local type: {t!r}")


def subst_tvar(t: LocalType, tvar: str, repl: LocalType) -> LocalType:
    if isinstance(t, LVar):
        return repl if t.tvar == tvar else t
    if isinstance(t, LRec) and t.tvar == tvar:
        return t
    if isinstance(t, (LEnd, LCallT)):
        return t
    if isinstance(t, LSendR):
        return LSendR(t.to, t.sort, subst_tvar(t.cont, tvar, repl))
    if isinstance(t, LGetR):
        return LGetR(t.frm, t.sort, subst_tvar(t.cont, tvar, repl))
    if isinstance(t, LSendU):
        return LSendU(t.to, t.label, t.sort, subst_tvar(t.cont, tvar, repl))
    if isinstance(t, LGetU):
        return LGetU(t.frm, t.label, t.sort, subst_tvar(t.cont, tvar, repl))
    if isinstance(t, LSelR):
        return LSelR(t.to, tuple((l, subst_tvar(b, tvar, repl)) for l, b in t.branches))
    if isinstance(t, LBranR):
        return LBranR(t.frm, tuple((l, subst_tvar(b, tvar, repl)) for l, b in t.branches))
    if isinstance(t, LSelW):
        return LSelW(t.to, tuple((l, subst_tvar(b, tvar, repl)) for l, b in t.branches))
    if isinstance(t, LBranW):
        return LBranW(t.frm, tuple((l, subst_tvar(b, tvar, repl)) for l, b in t.branches), t.default)
    if isinstance(t, LRec):
        return LRec(t.tvar, t.counter, t.value, subst_tvar(t.body, tvar, repl))
    if isinstance(t, LLoop):
        return LLoop(t.roles, t.ident, t.counter, t.value, t.sort0,
                     subst_tvar(t.program, tvar, repl), subst_tvar(t.body, tvar, repl),
                     t.sort2, subst_tvar(t.cont, tvar, repl))
    if isinstance(t, LDelegSend):
        return LDelegSend(t.to, t.chan, t.role, t.dtype, subst_tvar(t.cont, tvar, repl))
    if isinstance(t, LDelegRecv):
        return LDelegRecv(t.frm, t.chan, t.role, t.dtype, subst_tvar(t.cont, tvar, repl))
    raise SyntaxError_(f"subst_tvar: not a local type: {t!r}")


# ---------------------------------------------------------------------------
# Roles and actors
# ---------------------------------------------------------------------------

def roles(g: GlobalType) -> frozenset[int]:
    """All roles occurring in prefixes, loop role sets, or delegation."""
    if isinstance(g, (GEnd, GVar, GCall)):
        return frozenset()
    if isinstance(g, GCommR) or isinstance(g, GCommU):
        return frozenset({g.sender, g.receiver}) | roles(g.cont)
    if isinstance(g, GBranR):
        out = frozenset({g.selector, g.chooser_target})
        for _, b in g.branches:
            out |= roles(b)
        return out
    if isinstance(g, GBranW):
        out = frozenset({g.selector}) | g.targets
        for _, b in g.branches:
            out |= roles(b)
        return out
    if isinstance(g, GPar):
        return roles(g.left) | roles(g.right)
    if isinstance(g, GRec):
        return roles(g.body)
    if isinstance(g, GLoop):
        return g.roles | roles(g.program) | roles(g.cont)
    if isinstance(g, GDeleg):
        return frozenset({g.sender, g.receiver, g.role}) | roles(g.cont)
    raise SyntaxError_(f"roles: not a global type: {g!r}")


def actors(p: Process) -> frozenset[tuple[str, int]]:
    """Actors s[p]: action prefixes or loops on session s naming p first."""
    if isinstance(p, (PEnd, PCrash, PVar, PCall, PExit, PQueue)):
        return frozenset()
    if isinstance(p, (PReq, PAcc)):
        return frozenset({a for a in actors(p.body) if a[0] != p.session})
    if isinstance(p, (PSendR, PGetR, PSendU, PGetU, PSelR, PSelW, PDelegSend)):
        return frozenset({(p.session, p.me)}) | actors(p.cont)
    if isinstance(p, (PBranR, PBranW)):
        out = frozenset({(p.session, p.me)})
        for _, q in p.branches:
            out |= actors(q)
        return out
    if isinstance(p, PDelegRecv):
        return frozenset({(p.session, p.me)}) | actors(p.cont)
    if isinstance(p, PPar):
        return actors(p.left) | actors(p.right)
    if isinstance(p, PRec):
        return actors(p.body)
    if isinstance(p, PLoop):
        return (frozenset({(p.session, p.me)}) | actors(p.program)
                | actors(p.body) | actors(p.cont))
    if isinstance(p, PIf):
        return actors(p.then) | actors(p.els)
    if isinstance(p, PRes):
        return frozenset({a for a in actors(p.body) if a[0] != p.name})
    raise SyntaxError_(f"actors: not a process: {p!r}")


# ---------------------------------------------------------------------------
# nsr / unr predicates
# ---------------------------------------------------------------------------

_RELIABLE_P = (PSendR, PGetR, PSelR, PBranR, PDelegSend, PDelegRecv, PReq, PAcc)
_RELIABLE_L = (LSendR, LGetR, LSelR, LBranR, LDelegSend, LDelegRecv)


def nsr(a: Union[Process, LocalType, GlobalType]) -> bool:
    """No strongly reliable or delegation prefixes, and no message queues."""
    if isinstance(a, Process):
        if isinstance(a, _RELIABLE_P) or isinstance(a, PQueue):
            return False
        return all(nsr(q) for q in _child_processes(a))
    if isinstance(a, LocalType):
        if isinstance(a, _RELIABLE_L):
            return False
        return all(nsr(t) for t in _child_ltypes(a))
    if isinstance(a, GlobalType):
        if isinstance(a, (GCommR, GBranR, GDeleg)):
            return False
        return all(nsr(g) for g in _child_gtypes(a))
    raise SyntaxError_(f"nsr: unsupported {a!r}")


def unr(a: Union[Process, LocalType, GlobalType]) -> bool:
    """nsr and no weakly reliable branching prefixes."""
    if not nsr(a):
        return False

    def scan(x) -> bool:
        if isinstance(x, (PSelW, PBranW, LSelW, LBranW, GBranW)):
            return False
        if isinstance(x, Process):
            return all(scan(q) for q in _child_processes(x))
        if isinstance(x, LocalType):
            return all(scan(t) for t in _child_ltypes(x))
        if isinstance(x, GlobalType):
            return all(scan(g) for g in _child_gtypes(x))
        return True

    return scan(a)


def _child_ltypes(t: LocalType) -> list[LocalType]:
    out = []
    for f in fields(t):
        v = getattr(t, f.name)
        if isinstance(v, LocalType):
            out.append(v)
        elif isinstance(v, tuple):
            for item in v:
                if isinstance(item, tuple) and len(item) == 2 and isinstance(item[1], LocalType):
                    out.append(item[1])
    return out


def _child_gtypes(g: GlobalType) -> list[GlobalType]:
    out = []
    for f in fields(g):
        v = getattr(g, f.name)
        if isinstance(v, GlobalType):
            out.append(v)
        elif isinstance(v, tuple):
            for item in v:
                if isinstance(item, tuple) and len(item) == 2 and isinstance(item[1], GlobalType):
                    out.append(item[1])
    return out
