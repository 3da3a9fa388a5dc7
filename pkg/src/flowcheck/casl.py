"""Context-aware separation-logic checking: triples, contextualization, scenarios."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .errors import (
    ConfigError,
    ContractViolation,
    InconclusiveError,
    InputError,
    InternalInvariantError,
)
from .keyspace import AtomUniverse, FlowValue, interval_bits, value_to_json
from .flowgraph import (
    EdgeFn,
    FlowGraph,
    NodeId,
    StarFailure,
    edge_fn_from_json,
    empty_graph,
    graph_from_json,
    graph_to_json,
    make_graph,
    star,
    unique_decompose,
)
from .estimator import (
    DEFAULT_EXPANSION_CAP,
    ClosureFamily,
    Estimator,
    approx_physical_update,
    closure,
    ctx_estimate,
    estimator_from_json,
)
from . import bst
from . import registry as reg

DEFAULT_LOOP_CAP = 64

State = Any


# ---------------------------------------------------------------- predicates


@dataclass(frozen=True)
class Predicate:
    """Top or a finite set of instance states, ordered by inclusion."""

    top: bool
    state_set: frozenset = frozenset()

    def __post_init__(self) -> None:
        if self.top and self.state_set:
            raise ContractViolation("Top carries no state set")

    @classmethod
    def of(cls, states: Iterable[State]) -> "Predicate":
        return cls(False, frozenset(states))

    @property
    def tag(self) -> str:
        return "top" if self.top else "states"

    @property
    def is_top(self) -> bool:
        return self.top

    def states(self) -> tuple[State, ...]:
        """The states in a deterministic order."""
        return tuple(sorted(self.state_set, key=repr))

    def leq(self, other: "Predicate") -> bool:
        if other.top:
            return True
        if self.top:
            return False
        return self.state_set <= other.state_set

    def join(self, other: "Predicate") -> "Predicate":
        if self.top or other.top:
            return TOP
        return Predicate(False, self.state_set | other.state_set)


TOP = Predicate(True)
EMPTY = Predicate.of(())


@dataclass(frozen=True)
class ClosurePredicate:
    """A symbolic union of closure families, standing in for unbounded contexts."""

    families: tuple

    @property
    def is_top(self) -> bool:
        return False

    def contains(self, state: State) -> bool:
        return any(f.contains(state) for f in self.families)


def _pred_has(p: "Predicate | ClosurePredicate", state: State) -> bool:
    if isinstance(p, Predicate):
        return p.top or state in p.state_set
    return p.contains(state)


def star_states(s: State, t: State) -> State | None:
    """Star of two instance states; None when the pair is undefined."""
    if isinstance(s, FlowGraph) and isinstance(t, FlowGraph):
        out = star(s, t)
        return out if isinstance(out, FlowGraph) else None
    if isinstance(s, reg.RegistryState) and isinstance(t, reg.RegistryState):
        out = reg.star(s, t)
        return out if isinstance(out, reg.RegistryState) else None
    raise ConfigError(
        f"no separation structure across {type(s).__name__} and {type(t).__name__}"
    )


def sep_conj(a: Predicate, b: Predicate) -> Predicate:
    """Pointwise star; Top absorbs and undefined pairs are dropped."""
    if a.top or b.top:
        return TOP
    out = set()
    for s in a.state_set:
        for t in b.state_set:
            c = star_states(s, t)
            if c is not None:
                out.add(c)
    return Predicate.of(out)


def emp_for(state: State) -> State:
    """The unit that composes with a given state."""
    if isinstance(state, FlowGraph):
        return empty_graph(state.universe)
    if isinstance(state, reg.RegistryState):
        return reg.RegistryState.of(state.history)
    raise ConfigError(f"no unit for {type(state).__name__}")


def _is_emp(c: Predicate) -> bool:
    if c.top or not c.state_set:
        return False
    for s in c.state_set:
        if isinstance(s, FlowGraph) and s.is_empty():
            continue
        if isinstance(s, reg.RegistryState) and not s.entries:
            continue
        return False
    return True


# ---------------------------------------------------------------- commands


@dataclass(frozen=True)
class Command:
    """A primitive command: standard semantics plus an optional core update."""

    name: str
    std: Callable[[State], State | None]
    core: Callable[[State], State | None] | None = None
    event: tuple[Any, Any] | None = None

    def __repr__(self) -> str:
        return f"Command({self.name})"


def skip_command() -> Command:
    return Command("skip", lambda s: s)


def abort_command() -> Command:
    return Command("abort", lambda s: None)


def _rewrite_edges(
    g: FlowGraph,
    new_edges: Mapping[tuple[NodeId, NodeId], EdgeFn],
    footprint: frozenset[NodeId],
) -> FlowGraph | None:
    if not footprint <= g.node_set:
        return None
    edges = {k: fn for k, fn in g.edge_map.items() if k[0] not in footprint}
    edges.update(new_edges)
    return make_graph(g.universe, g.nodes, edges, g.inflow_map)


def flow_update_command(
    name: str,
    new_edges: Mapping[tuple[NodeId, NodeId], EdgeFn],
    footprint: Iterable[NodeId],
) -> Command:
    """Replace the footprint's out-edges; aborts unless the change is frame-silent."""
    foot = frozenset(footprint)
    for (src, _dst) in new_edges:
        if src not in foot:
            raise InputError(f"edge source {src} escapes the footprint")

    def core(g: State) -> State | None:
        return _rewrite_edges(g, new_edges, foot)

    def std(g: State) -> State | None:
        u = core(g)
        if u is None:
            return None
        report = ctx_estimate(g, u, Estimator.eq())
        if report.verdict == "inconclusive":
            raise InconclusiveError("transfer-equality guard over the expansion cap")
        return u if report.holds else None

    return Command(name, std, core)


def raw_flow_write_command(
    name: str,
    new_edges: Mapping[tuple[NodeId, NodeId], EdgeFn],
    footprint: Iterable[NodeId],
) -> Command:
    """The same rewrite with no abort guard; deliberately non-local."""
    foot = frozenset(footprint)

    def core(g: State) -> State | None:
        return _rewrite_edges(g, new_edges, foot)

    return Command(name, core, core)


def heap_write_command(
    name: str, writes: Iterable[tuple[NodeId, str, Any]]
) -> Command:
    """Grouped field writes on a heap or on the shared half of a product state."""
    ws = tuple(writes)

    def apply_heap(h: bst.Heap) -> bst.Heap:
        for node, fld, value in ws:
            h = h.with_field(node, fld, value)
        return h

    def std(state: State) -> State | None:
        if isinstance(state, ProductState):
            return ProductState(apply_heap(state.shared), state.local)
        if isinstance(state, bst.Heap):
            return apply_heap(state)
        raise ConfigError(f"heap write on {type(state).__name__}")

    return Command(name, std)


def upsert_command(key: Any, value: Any) -> Command:
    """Publish one event: extend the history and settle the obligations it meets."""

    def std(state: State) -> State | None:
        return reg.apply_upsert(state, key, value)

    def core(state: State) -> State | None:
        return reg.core_update_upsert(state, key, value)

    shown = "null" if value is reg.TOMBSTONE else repr(value)
    return Command(f"upsert({key!r},{shown})", std, core, event=(key, value))


def approx_update(
    com: Command, s: State, est: Estimator | None, cap: int = DEFAULT_EXPANSION_CAP
) -> tuple[State, ...] | None:
    """The strengthened footprint update; None signals Top."""
    if com.core is None:
        raise ContractViolation(f"command {com.name} has no core update")
    if isinstance(s, FlowGraph):
        if est is None:
            raise ConfigError("flow updates need an estimator to approximate")
        return approx_physical_update(com.core, s, est, cap)
    out = com.core(s)
    return None if out is None else (out,)


# ---------------------------------------------------------------- programs


@dataclass(frozen=True)
class Program:
    """Commands composed by sequence, choice, and looping."""

    shape: str
    command: Command | None = None
    parts: tuple["Program", ...] = ()

    def __post_init__(self) -> None:
        if self.shape not in ("com", "seq", "choice", "loop"):
            raise InputError(f"bad program shape: {self.shape!r}")

    @classmethod
    def of(cls, command: Command) -> "Program":
        return cls("com", command)

    @classmethod
    def seq(cls, *parts: "Program") -> "Program":
        return cls("seq", None, tuple(parts))

    @classmethod
    def choice(cls, *parts: "Program") -> "Program":
        return cls("choice", None, tuple(parts))

    @classmethod
    def loop(cls, body: "Program") -> "Program":
        return cls("loop", None, (body,))


def _program_commands(st: Program) -> list[Command]:
    if st.shape == "com":
        return [st.command]
    out = []
    for p in st.parts:
        out.extend(_program_commands(p))
    return out


def sem(st: Program, a: Predicate, loop_cap: int = DEFAULT_LOOP_CAP) -> Predicate:
    """Strongest-post transformer; strict in Top and join-distributive."""
    if a.top:
        return TOP
    match st.shape:
        case "com":
            out = set()
            for s in a.state_set:
                r = st.command.std(s)
                if r is None:
                    return TOP
                if isinstance(r, (tuple, list, set, frozenset)):
                    out.update(r)
                else:
                    out.add(r)
            return Predicate.of(out)
        case "seq":
            cur = a
            for p in st.parts:
                cur = sem(p, cur, loop_cap)
            return cur
        case "choice":
            cur = EMPTY
            for p in st.parts:
                cur = cur.join(sem(p, a, loop_cap))
            return cur
        case "loop":
            acc = a
            for _ in range(loop_cap):
                nxt = acc.join(sem(st.parts[0], acc, loop_cap))
                if nxt == acc:
                    return acc
                acc = nxt
            raise InconclusiveError(f"loop failed to stabilize within {loop_cap} rounds")
    raise InternalInvariantError(f"unhandled program shape {st.shape!r}")


# ---------------------------------------------------------------- triples


@dataclass(frozen=True)
class Verdict:
    """Outcome of one check, with a witness state when it fails."""

    ok: bool
    reason: str = ""
    witness: Any = None


def _pred_leq(p: Predicate, q: "Predicate | ClosurePredicate") -> tuple[bool, Any]:
    if isinstance(q, Predicate) and q.top:
        return True, None
    if p.top:
        return False, "top"
    for s in p.states():
        if not _pred_has(q, s):
            return False, s
    return True, None


def check_hoare(
    a: Predicate,
    st: Program,
    b: "Predicate | ClosurePredicate",
    loop_cap: int = DEFAULT_LOOP_CAP,
) -> Verdict:
    """Validity of {a} st {b}: the strongest post stays inside b."""
    result = sem(st, a, loop_cap)
    ok, witness = _pred_leq(result, b)
    if ok:
        return Verdict(True)
    if witness == "top":
        return Verdict(False, "computation aborts", None)
    return Verdict(False, "reachable state escapes the postcondition", witness)


def _forced_flow_member(s: FlowGraph, fam: ClosureFamily) -> FlowGraph | None:
    # the one family member whose interface can match s, if it is a member at all
    base = fam.base
    if s.universe != base.universe or s.node_set & base.node_set:
        return None
    pinned: dict[tuple[NodeId, NodeId], FlowValue] = {}
    for src, dst, fn in s.edges:
        if dst in base.node_set:
            v = fn.apply(s.flow[src])
            if not v.is_bot:
                pinned[(src, dst)] = v
    inflow = {
        (x, y): v for (x, y), v in base.inflow_map.items() if x not in s.node_set
    }
    inflow.update(pinned)
    m = base.with_inflow(inflow)
    return m if fam.contains(m) else None


def _registry_members(
    s: reg.RegistryState,
    fam: reg.RegistryClosure,
    events: Iterable[tuple[Any, Any]],
    depth: int = 1,
    cap: int = 4096,
) -> list[reg.RegistryState]:
    # bounded compatible sample of the closure, always including its base
    taken = {t for t, _ in s.entries} | {t for t, _ in fam.base.entries}
    tids = []
    i = 0
    while len(tids) < 2:
        cand = f"aux{i}"
        if cand not in taken:
            tids.append(cand)
        i += 1
    pool = set(fam.base.history) | set(s.history) | set(events)
    members = fam.explore(sorted(pool, key=repr), tids, depth, cap)
    return [m for m in members if m.history == s.history]


def star_with_context(
    a: Predicate,
    c: "Predicate | ClosurePredicate",
    events: Iterable[tuple[Any, Any]] = (),
) -> Predicate:
    """a ⋆ c as a finite predicate, composing through closure families symbolically."""
    if a.top:
        return TOP
    if isinstance(c, Predicate):
        return sep_conj(a, c)
    out = set()
    for s in a.state_set:
        for fam in c.families:
            if isinstance(fam, ClosureFamily):
                if not isinstance(s, FlowGraph):
                    raise ConfigError("flow closure composed with a non-graph state")
                m = _forced_flow_member(s, fam)
                if m is not None:
                    comp = star(s, m)
                    if isinstance(comp, FlowGraph):
                        out.add(comp)
            else:
                if not isinstance(s, reg.RegistryState):
                    raise ConfigError("registry closure composed with a non-registry state")
                for m in _registry_members(s, fam, events):
                    comp = reg.star(s, m)
                    if isinstance(comp, reg.RegistryState):
                        out.add(comp)
    return Predicate.of(out)


def _in_starred(
    u: State, b: "Predicate | ClosurePredicate", c: ClosurePredicate
) -> bool:
    # membership of u in b ⋆ c, by splitting u along each family's region
    if isinstance(b, Predicate) and b.top:
        return True
    if isinstance(u, FlowGraph):
        for fam in c.families:
            if not isinstance(fam, ClosureFamily):
                continue
            region = fam.base.node_set
            if not region <= u.node_set:
                continue
            foot = sorted(u.node_set - region)
            uf, uc = unique_decompose(u, foot, region)
            if fam.contains(uc) and _pred_has(b, uf):
                return True
        return False
    if isinstance(u, reg.RegistryState):
        if not isinstance(b, Predicate):
            raise ConfigError("registry posts must be finite predicates")
        u_tids = [t for t, _ in u.entries]
        for fam in c.families:
            if isinstance(fam, ClosureFamily):
                continue
            for sb in b.states():
                dom = {t for t, _ in sb.entries}
                if not dom <= set(u_tids):
                    continue
                uf, uc = reg.unique_decompose(
                    u, dom, [t for t in u_tids if t not in dom]
                )
                if uf == sb and fam.contains(uc):
                    return True
        return False
    raise ConfigError(f"no starred membership for {type(u).__name__}")


def check_casl(
    c: "Predicate | ClosurePredicate",
    a: Predicate,
    st: Program,
    b: "Predicate | ClosurePredicate",
    loop_cap: int = DEFAULT_LOOP_CAP,
) -> Verdict:
    """Validity of the contextual triple <c>{a} st {b}."""
    if isinstance(c, Predicate) and isinstance(b, Predicate):
        return check_hoare(sep_conj(a, c), st, sep_conj(b, c), loop_cap)
    events = [com.event for com in _program_commands(st) if com.event is not None]
    if isinstance(c, Predicate):
        pre = sep_conj(a, c)
    else:
        pre = star_with_context(a, c, events)
    result = sem(st, pre, loop_cap)
    if result.top:
        if isinstance(b, Predicate) and b.top:
            return Verdict(True)
        return Verdict(False, "computation aborts under the context", None)
    if isinstance(c, Predicate):
        # b is symbolic: test each post-composite against b ⋆ c pointwise
        for u in result.states():
            hit = False
            for t in c.states():
                m = _split_off(u, t)
                if m is not None and _pred_has(b, m):
                    hit = True
                    break
            if not hit:
                return Verdict(False, "post-composite escapes the contextual post", u)
        return Verdict(True)
    for u in result.states():
        if not _in_starred(u, b, c):
            return Verdict(False, "post-composite escapes the contextual post", u)
    return Verdict(True)


def _split_off(u: State, t: State) -> State | None:
    # the unique complement of t inside u, if t embeds as a separate part
    if isinstance(u, FlowGraph) and isinstance(t, FlowGraph):
        if not t.node_set <= u.node_set:
            return None
        foot = sorted(u.node_set - t.node_set)
        uf, uc = unique_decompose(u, foot, t.node_set)
        return uf if uc == t else None
    if isinstance(u, reg.RegistryState) and isinstance(t, reg.RegistryState):
        dom = {x for x, _ in t.entries}
        u_tids = [x for x, _ in u.entries]
        if not dom <= set(u_tids):
            return None
        uf, uc = reg.unique_decompose(u, dom, [x for x in u_tids if x not in dom])
        return uf if uc == t else None
    return None


# ---------------------------------------------------------------- mediation and locality


def induced_transformer(
    com: Command,
    c: "Predicate | ClosurePredicate",
    est: Estimator | None,
    closure_cap: int = DEFAULT_EXPANSION_CAP,
    delegate_emp: bool = True,
) -> Callable[[Predicate], "Predicate | ClosurePredicate"]:
    """The context-aware semantics a context induces for one command."""

    def run(a: Predicate) -> "Predicate | ClosurePredicate":
        if a.top:
            return TOP
        if delegate_emp and isinstance(c, Predicate) and _is_emp(c):
            return sem(Program.of(com), a)
        out: Predicate | ClosurePredicate = EMPTY
        fams: list = []
        for s in a.state_set:
            ts = approx_update(com, s, est, closure_cap)
            if ts is None:
                return TOP
            for t in ts:
                if not _fixed_under_closure(c, t, est, closure_cap):
                    return TOP
                piece = _closure_apply(c, t, est, closure_cap)
                if isinstance(piece, ClosurePredicate):
                    fams.extend(piece.families)
                else:
                    out = out.join(piece)
        if fams:
            if isinstance(out, Predicate) and out.state_set:
                raise InternalInvariantError("mixed symbolic and finite context image")
            return ClosurePredicate(tuple(fams))
        return out

    return run


def _fixed_under_closure(
    c: "Predicate | ClosurePredicate", t: State, est: Estimator | None, cap: int
) -> bool:
    # does the closure over the update's region leave the context where it is
    if isinstance(c, ClosurePredicate):
        for fam in c.families:
            if isinstance(fam, ClosureFamily):
                if not isinstance(t, FlowGraph) or fam.sources != t.node_set:
                    return False
        return True
    if c.top:
        return True
    for m in c.state_set:
        if isinstance(m, FlowGraph):
            members = closure(m, t.node_set, est).materialize(cap)
            if any(mm not in c.state_set for mm in members):
                return False
        else:
            return False
    return True


def _closure_apply(
    c: "Predicate | ClosurePredicate", t: State, est: Estimator | None, cap: int
) -> "Predicate | ClosurePredicate":
    # [c]#(t): close the updated footprint over the context's region
    if isinstance(c, ClosurePredicate):
        fams = []
        registryish = False
        for fam in c.families:
            if isinstance(fam, ClosureFamily):
                fams.append(closure(t, fam.base.node_set, est))
            else:
                registryish = True
        if registryish and not fams:
            return Predicate.of((t,))
        return ClosurePredicate(tuple(fams))
    out: set = set()
    for m in c.state_set:
        if isinstance(m, FlowGraph):
            out.update(closure(t, m.node_set, est).materialize(cap))
        elif isinstance(m, reg.RegistryState):
            out.add(t)
        else:
            raise ConfigError(f"no closure over {type(m).__name__}")
    return Predicate.of(out)


def check_mediation(
    com: Command,
    c: "Predicate | ClosurePredicate",
    sample_preds: Iterable[Predicate],
    est: Estimator | None,
    ca: Callable[[Predicate], "Predicate | ClosurePredicate"] | None = None,
    loop_cap: int = DEFAULT_LOOP_CAP,
) -> Verdict:
    """Standard semantics under the context land inside the induced image times it."""
    prog = Program.of(com)
    ca = ca if ca is not None else induced_transformer(com, c, est)
    events = [com.event] if com.event is not None else []
    for a in sample_preds:
        lhs = sem(prog, star_with_context(a, c, events), loop_cap)
        rhs_core = ca(a)
        if lhs.top:
            if isinstance(rhs_core, Predicate) and rhs_core.top:
                continue
            return Verdict(False, "standard semantics abort but the induced image is finite", a)
        for u in lhs.states():
            if isinstance(rhs_core, Predicate) and rhs_core.top:
                break
            if isinstance(c, Predicate) and isinstance(rhs_core, Predicate):
                ok = u in sep_conj(rhs_core, c).state_set
            else:
                cc = c if isinstance(c, ClosurePredicate) else None
                if cc is None:
                    ok = any(
                        _pred_has(rhs_core, m)
                        for t in c.states()
                        if (m := _split_off(u, t)) is not None
                    )
                else:
                    ok = _in_starred(u, rhs_core, cc)
            if not ok:
                return Verdict(False, "mediation inclusion fails", u)
    return Verdict(True)


def check_locality(
    com: Command,
    sample_pairs: Iterable[tuple[Predicate, Predicate]],
    loop_cap: int = DEFAULT_LOOP_CAP,
) -> Verdict:
    """Frame preservation of the standard semantics on sampled pairs."""
    prog = Program.of(com)
    for a, b in sample_pairs:
        lhs = sem(prog, sep_conj(a, b), loop_cap)
        rhs_core = sem(prog, a, loop_cap)
        rhs = TOP if rhs_core.top else sep_conj(rhs_core, b)
        ok, witness = _pred_leq(lhs, rhs)
        if not ok:
            return Verdict(False, "locality fails on a sampled pair", witness)
    return Verdict(True)


# ---------------------------------------------------------------- contextualization


def contextualize(
    com: Command,
    a: Predicate,
    d: Predicate,
    est: Estimator | None = None,
    closure_cap: int = DEFAULT_EXPANSION_CAP,
    loop_cap: int = DEFAULT_LOOP_CAP,
    verify: bool = True,
) -> tuple["Predicate | ClosurePredicate", "Predicate | ClosurePredicate"]:
    """Split-and-widen: (b, c) with <c>{a} com {b} valid and d below c."""
    if a.top or d.top:
        return TOP, TOP
    aprime: list[State] = []
    for s in a.states():
        ts = approx_update(com, s, est, closure_cap)
        if ts is None:
            return TOP, TOP
        aprime.extend(ts)
    if not aprime or not d.state_set:
        return Predicate.of(aprime), Predicate.of(d.state_set)
    if isinstance(aprime[0], FlowGraph):
        foot_nodes = aprime[0].node_set
        if any(t.node_set != foot_nodes for t in aprime):
            raise ContractViolation("footprint states must share a node set")
        ctx_nodes = {m.node_set for m in d.state_set}
        if len(ctx_nodes) != 1:
            raise ContractViolation("context states must share a node set")
        c = ClosurePredicate(tuple(closure(m, foot_nodes, est) for m in d.states()))
        b = ClosurePredicate(
            tuple(closure(t, next(iter(ctx_nodes)), est) for t in aprime)
        )
    else:
        c = ClosurePredicate(tuple(reg.closure_pred(m) for m in d.states()))
        b = Predicate.of(aprime)
    if verify:
        for m in d.states():
            if not c.contains(m):
                raise InternalInvariantError("context does not cover its seed")
        verdict = check_casl(c, a, Program.of(com), b, loop_cap)
        if not verdict.ok:
            raise InternalInvariantError(
                f"contextualization postcondition failed: {verdict.reason}"
            )
    return b, c


# ---------------------------------------------------------------- interference


@dataclass(frozen=True)
class ProductState:
    """A shared global state paired with one thread's local bindings."""

    shared: Any
    local: tuple[tuple[str, Any], ...] = ()

    def binding(self, name: str) -> Any:
        for k, v in self.local:
            if k == name:
                return v
        return None


@dataclass(frozen=True)
class Interference:
    """A command some thread may run, with the product states it runs from."""

    command: Command
    pred: Predicate

    def __post_init__(self) -> None:
        if self.pred.top:
            raise ContractViolation("interference predicates are finite")


def check_interference_free(
    assertions: Iterable[Predicate], interferences: Iterable[Interference]
) -> Verdict:
    """Replay each interfering command on matching globals; assertions must absorb it."""
    for intf in interferences:
        for b in assertions:
            if b.top:
                continue
            for sb in b.states():
                for si in intf.pred.states():
                    if not isinstance(sb, ProductState) or not isinstance(si, ProductState):
                        raise ConfigError("interference runs over product states")
                    if sb.shared != si.shared:
                        continue
                    if (
                        sb.binding("thread") is not None
                        and sb.binding("thread") == si.binding("thread")
                    ):
                        continue
                    out = intf.command.std(si)
                    if out is None:
                        return Verdict(False, "interfering command aborts", si)
                    cand = ProductState(out.shared, sb.local)
                    if cand not in b.state_set:
                        return Verdict(
                            False,
                            f"assertion unstable under {intf.command.name}",
                            cand,
                        )
    return Verdict(True)


# ---------------------------------------------------------------- scenario reports


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str = ""
    witness: Any = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "ok": self.ok}
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass(frozen=True)
class StepReport:
    index: int
    label: str
    ok: bool
    checks: tuple[CheckResult, ...] = ()
    note: str = ""

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "index": self.index,
            "label": self.label,
            "ok": self.ok,
            "checks": [c.to_json() for c in self.checks],
        }
        if self.note:
            out["note"] = self.note
        return out


@dataclass(frozen=True)
class ScenarioReport:
    verdict: str
    steps: tuple[StepReport, ...]
    counterexample: dict[str, Any] | None = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "verdict": self.verdict,
            "steps": [s.to_json() for s in self.steps],
        }
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample
        return out


def witness_json(obj: Any) -> Any:
    """Serialize a witness for reports; falls back to its repr."""
    if obj is None:
        return None
    if isinstance(obj, FlowGraph):
        return graph_to_json(obj)
    if isinstance(obj, FlowValue):
        return value_to_json(obj)
    if isinstance(obj, bst.Heap):
        return bst.heap_to_json(obj)
    if isinstance(obj, reg.RegistryState):
        return reg.state_to_json(obj)
    if isinstance(obj, ProductState):
        return {"shared": witness_json(obj.shared), "local": [list(kv) for kv in obj.local]}
    if isinstance(obj, (list, tuple)):
        return [witness_json(x) for x in obj]
    if isinstance(obj, (str, int, float, bool)):
        return obj
    return repr(obj)


def _counterexample(step: StepReport) -> dict[str, Any]:
    failing = next((c for c in step.checks if not c.ok), None)
    out: dict[str, Any] = {"step": step.index, "label": step.label}
    if failing is not None:
        out["check"] = failing.name
        if failing.detail:
            out["detail"] = failing.detail
        out["witness"] = witness_json(failing.witness)
    return out


# ---------------------------------------------------------------- scenario runner


def run_scenario(
    source: "dict | str | Path",
    seed: int = 0,
    closure_cap: int = DEFAULT_EXPANSION_CAP,
    loop_cap: int = DEFAULT_LOOP_CAP,
) -> ScenarioReport:
    """Check one proof scenario end to end."""
    if isinstance(source, (str, Path)):
        try:
            data = json.loads(Path(source).read_text())
        except FileNotFoundError as exc:
            raise InputError(f"no such scenario file: {source}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed scenario JSON: {exc}") from exc
    else:
        data = source
    if not isinstance(data, dict):
        raise InputError("a scenario is a JSON object")
    algebra = data.get("algebra")
    if algebra not in ("flow", "bst", "registry"):
        raise InputError(f"unknown algebra: {algebra!r}")
    if "init" not in data or "steps" not in data:
        raise InputError("a scenario needs init and steps")
    try:
        if data.get("concurrent"):
            if algebra != "bst":
                raise InputError("concurrent scenarios run on the tree algebra")
            return _run_concurrent(data, seed)
        match algebra:
            case "flow":
                return _run_flow(data, seed, closure_cap, loop_cap)
            case "bst":
                return _run_bst(data, seed, closure_cap, loop_cap)
            case _:
                return _run_registry(data, seed, closure_cap, loop_cap)
    except InconclusiveError as exc:
        return ScenarioReport(
            "inconclusive",
            (StepReport(-1, "scenario", False, (), note=str(exc)),),
        )


def _finish(steps: list[StepReport]) -> ScenarioReport:
    bad = next((s for s in steps if not s.ok), None)
    if bad is None:
        return ScenarioReport("pass", tuple(steps))
    return ScenarioReport("fail", tuple(steps), _counterexample(bad))


def _graph_casl_checks(
    g: FlowGraph,
    com: Command,
    foot: frozenset[NodeId],
    est: Estimator,
    rule: str,
    closure_cap: int,
    loop_cap: int,
    label: str,
) -> tuple[list[CheckResult], FlowGraph | None]:
    # one proof step on a graph: split, estimate, widen or frame, recompose
    checks: list[CheckResult] = []
    ctx_ids = sorted(g.node_set - foot)
    s, d = unique_decompose(g, sorted(foot), ctx_ids)
    post = com.core(g)
    if post is None:
        raise InternalInvariantError("core update undefined on the composite")
    up = approx_update(com, s, est, closure_cap)
    if up is None:
        report = ctx_estimate(s, com.core(s), est, closure_cap)
        checks.append(
            CheckResult(
                "casl",
                False,
                f"{label}: update is not estimator-above the footprint at target "
                f"{report.at}",
                report.witness,
            )
        )
        return checks, None
    s2 = up[0]
    if rule == "frame":
        out = star(s2, d)
        if isinstance(out, StarFailure):
            checks.append(
                CheckResult(
                    "casl",
                    False,
                    f"{label}: frame recomposition fails: {out.reason} at {out.at}",
                    d,
                )
            )
            return checks, None
        if out != post:
            checks.append(
                CheckResult("casl", False, f"{label}: frame recomposition drifts", out)
            )
            return checks, None
        checks.append(CheckResult("casl", True, f"{label}: frame rule holds"))
        return checks, post
    b, c = contextualize(
        com,
        Predicate.of((s,)),
        Predicate.of((d,)),
        est,
        closure_cap=closure_cap,
        loop_cap=loop_cap,
        verify=True,
    )
    checks.append(
        CheckResult(
            "casl",
            True,
            f"{label}: contextual triple holds over {len(ctx_ids)} context nodes",
        )
    )
    return checks, post


def _run_flow(
    data: dict, seed: int, closure_cap: int, loop_cap: int
) -> ScenarioReport:
    g = graph_from_json(data["init"])
    u = g.universe
    default_est_raw = data.get("estimator", "eq")
    steps: list[StepReport] = []
    for idx, raw in enumerate(data["steps"]):
        label = raw.get("label", f"step{idx}")
        cmd = raw.get("command")
        if not isinstance(cmd, dict) or "set_edges" not in cmd:
            raise InputError(f"flow step {idx} needs a set_edges command")
        if "footprint" not in raw:
            raise InputError(f"flow step {idx} needs a footprint")
        foot = frozenset(raw["footprint"])
        ctx = frozenset(raw.get("context", sorted(g.node_set - foot)))
        if foot | ctx != g.node_set or foot & ctx:
            raise InputError(f"step {idx}: footprint and context must partition the nodes")
        est = estimator_from_json(u, raw.get("estimator", default_est_raw))
        new_edges = {}
        for e in cmd["set_edges"]:
            if not isinstance(e, dict) or not {"src", "dst", "fn"} <= set(e):
                raise InputError(f"bad edge rewrite: {e!r}")
            new_edges[(e["src"], e["dst"])] = edge_fn_from_json(u, e["fn"])
        com = flow_update_command(label, new_edges, foot)
        rule = raw.get("rule", "context")
        wanted = raw.get("checks", ["casl"])
        checks: list[CheckResult] = []
        post = com.core(g)
        if "casl" in wanted:
            checks, post = _graph_casl_checks(
                g, com, foot, est, rule, closure_cap, loop_cap, label
            )
        ok = all(ch.ok for ch in checks)
        steps.append(StepReport(idx, label, ok, tuple(checks)))
        if not ok:
            break
        g = post
    return _finish(steps)


def trace_step_estimator(
    tstep: bst.OpStep, g_pre: FlowGraph, override: Any
) -> Estimator:
    u = g_pre.universe
    if override is not None:
        return estimator_from_json(u, override)
    match tstep.estimator:
        case "eq":
            return Estimator.eq()
        case "simple":
            return Estimator.simple()
        case "complex":
            x = tstep.writes[0][0]
            inset = g_pre.flow[x]
            window = interval_bits(u, tstep.pivot, tstep.release_hi, True, False)
            bits = u.full_bits if inset.is_top else (0 if inset.is_bot else inset.bits)
            return Estimator.complex(tstep.pivot, window & bits)
        case _:
            raise InternalInvariantError(f"bad estimator hint {tstep.estimator!r}")


def _run_bst(data: dict, seed: int, closure_cap: int, loop_cap: int) -> ScenarioReport:
    h = bst.heap_from_json(data["init"])
    endpoints = data.get("endpoints", h.keys_present())
    universe = AtomUniverse.from_endpoints(endpoints)
    model = _live_keys(h)
    steps: list[StepReport] = []
    for idx, raw in enumerate(data["steps"]):
        op = bst.op_from_json(raw.get("command"))
        label = raw.get("label", op.name)
        wanted = raw.get("checks", [])
        step_seed = raw.get("seed", seed + idx)
        out = bst.run_op(h, op, seed=step_seed)
        if out.result == bst.SKIPPED:
            steps.append(StepReport(idx, label, True, (), note="skipped"))
            continue
        checks: list[CheckResult] = []
        declared = frozenset(raw["footprint"]) if "footprint" in raw else None
        if "casl" in wanted:
            cur = h
            for tstep in out.trace:
                pre_heap = cur.add_node(*tstep.alloc) if tstep.alloc else cur
                cur = bst.apply_step(cur, tstep)
                if not tstep.writes:
                    checks.append(
                        CheckResult("casl", True, f"{tstep.label}: allocation")
                    )
                    continue
                foot = frozenset(tstep.footprint)
                if declared is not None and not foot <= declared:
                    raise InputError(
                        f"step {idx}: trace footprint {sorted(foot)} escapes the "
                        f"declared one"
                    )
                g_pre = bst.derive_flowgraph(pre_heap, universe)
                g_post = bst.derive_flowgraph(cur, universe)
                est = trace_step_estimator(tstep, g_pre, raw.get("estimator"))
                new_edges = {
                    (src, dst): fn for src, dst, fn in g_post.edges if src in foot
                }
                com = flow_update_command(tstep.label, new_edges, foot)
                sub, post = _graph_casl_checks(
                    g_pre,
                    com,
                    foot,
                    est,
                    raw.get("rule", "context"),
                    closure_cap,
                    loop_cap,
                    tstep.label,
                )
                checks.extend(sub)
                if post is None:
                    break
                if post != g_post:
                    raise InternalInvariantError("graph recomposition drifted")
        h = out.heap
        if op.name == "insert" and out.result is True:
            model.add(op.key)
        if op.name == "delete" and out.result is True:
            model.discard(op.key)
        if "inv" in wanted and all(c.ok for c in checks):
            rep = bst.check_inv(h, universe=universe)
            detail = "" if rep.ok else "; ".join(rep.violations)
            checks.append(CheckResult("inv", rep.ok, detail))
        if "contents" in wanted and all(c.ok for c in checks):
            actual = _live_keys(h)
            okc = actual == model
            checks.append(
                CheckResult(
                    "contents",
                    okc,
                    "" if okc else f"have {sorted(actual)}, want {sorted(model)}",
                )
            )
        ok = all(c.ok for c in checks)
        steps.append(StepReport(idx, label, ok, tuple(checks)))
        if not ok:
            break
    return _finish(steps)


def _live_keys(h: bst.Heap) -> set:
    live = set()
    for x in h.reachable():
        f = h.get(x)
        if x != h.root and not f.deleted:
            live.add(f.key)
    return live


def _run_registry(
    data: dict, seed: int, closure_cap: int, loop_cap: int
) -> ScenarioReport:
    state = reg.state_from_json(data["init"])
    steps: list[StepReport] = []
    for idx, raw in enumerate(data["steps"]):
        cmd = raw.get("command")
        if not isinstance(cmd, dict):
            raise InputError(f"bad registry command at step {idx}")
        wanted = raw.get("checks", [])
        checks: list[CheckResult] = []
        if "upsert" in cmd:
            key, value = cmd["upsert"]
            label = raw.get("label", f"upsert {key!r}")
            if raw.get("footprint"):
                raise InputError("an upsert's footprint is the history alone")
            com = upsert_command(key, value)
            if "casl" in wanted:
                tids = [t for t, _ in state.entries]
                a_state, d_state = reg.unique_decompose(state, (), tids)
                b, c = contextualize(
                    com,
                    Predicate.of((a_state,)),
                    Predicate.of((d_state,)),
                    closure_cap=closure_cap,
                    loop_cap=loop_cap,
                    verify=True,
                )
                checks.append(
                    CheckResult(
                        "casl",
                        True,
                        f"{label}: contextual triple holds over {len(tids)} threads",
                    )
                )
            state = reg.apply_upsert(state, key, value)
        elif "spawn" in cmd:
            tid, key, value = cmd["spawn"]
            label = raw.get("label", f"spawn {tid}")
            state = reg.spawn_search(state, tid, key, value)
            checks.append(CheckResult("spawn", True, f"{label}: search registered"))
        else:
            raise InputError(f"unknown registry command: {sorted(cmd)!r}")
        if "inv" in wanted:
            okv = state.is_valid()
            checks.append(CheckResult("inv", okv, "" if okv else "validity broken"))
        ok = all(c.ok for c in checks)
        steps.append(StepReport(idx, label, ok, tuple(checks)))
        if not ok:
            break
    return _finish(steps)


# ---------------------------------------------------------------- concurrent scenarios


_FIELDS = {"key", "left", "right", "del", "dup"}


def _conds_hold(h: bst.Heap, conds: Iterable[Mapping[str, Any]]) -> bool:
    for cond in conds:
        node = cond.get("node")
        fld = cond.get("field")
        if fld not in _FIELDS:
            raise InputError(f"bad assertion field: {fld!r}")
        f = h.nodes.get(node)
        if f is None:
            return False
        actual = f.deleted if fld == "del" else getattr(f, fld)
        if actual != cond.get("equals"):
            return False
    return True


def _run_concurrent(data: dict, seed: int) -> ScenarioReport:
    h0 = bst.heap_from_json(data["init"])
    conc = data["concurrent"]
    depth = conc.get("interleaveDepth", 6)
    threads: dict[str, list[dict]] = {}
    for idx, raw in enumerate(data["steps"]):
        tid = raw.get("thread")
        if tid is None:
            raise InputError(f"concurrent step {idx} needs a thread")
        cmd = raw.get("command", {})
        if "writes" not in cmd:
            raise InputError(f"concurrent step {idx} needs a writes command")
        threads.setdefault(str(tid), []).append(raw)
    if "threads" in conc and conc["threads"] != len(threads):
        raise InputError("declared thread count does not match the steps")
    order = sorted(threads)
    programs = {
        tid: [
            (
                heap_write_command(
                    raw.get("label", f"{tid}{i}"),
                    [tuple(w) for w in raw["command"]["writes"]],
                ),
                raw.get("assert", []),
            )
            for i, raw in enumerate(threads[tid])
        ]
        for tid in order
    }

    # bounded interleaving exploration, collecting control-point state sets
    start = tuple(0 for _ in order)
    seen = {(start, h0)}
    frontier = [(start, h0)]
    fired: dict[tuple[str, int], set[bst.Heap]] = {}
    at_point: dict[tuple[str, int], set[bst.Heap]] = {}
    explorer_witness = None
    while frontier:
        nxt = []
        for pcs, h in frontier:
            for ti, tid in enumerate(order):
                pc = pcs[ti]
                if pc >= len(programs[tid]) or sum(pcs) >= depth:
                    continue
                com, conds = programs[tid][pc]
                h2 = com.std(h)
                fired.setdefault((tid, pc), set()).add(h)
                at_point.setdefault((tid, pc), set()).add(h2)
                if conds and not _conds_hold(h2, conds) and explorer_witness is None:
                    explorer_witness = (tid, pc, h2)
                pcs2 = pcs[:ti] + (pc + 1,) + pcs[ti + 1 :]
                if (pcs2, h2) not in seen:
                    seen.add((pcs2, h2))
                    nxt.append((pcs2, h2))
        frontier = nxt
    # states at a control point include later progress by the other threads
    for (pcs, h) in seen:
        for ti, tid in enumerate(order):
            if pcs[ti] > 0:
                at_point.setdefault((tid, pcs[ti] - 1), set()).add(h)

    assertions: list[Predicate] = []
    broken: list[tuple[str, int]] = []
    for (tid, pc), heaps in sorted(at_point.items()):
        conds = programs[tid][pc][1]
        if not conds:
            continue
        good = {hh for hh in heaps if _conds_hold(hh, conds)}
        if len(good) != len(heaps):
            broken.append((tid, pc))
        assertions.append(
            Predicate.of(
                ProductState(hh, (("pc", pc), ("thread", tid))) for hh in good
            )
        )
    interferences = [
        Interference(
            programs[tid][pc][0],
            Predicate.of(
                ProductState(hh, (("pc", pc), ("thread", tid))) for hh in heaps
            ),
        )
        for (tid, pc), heaps in sorted(fired.items())
    ]
    og = check_interference_free(assertions, interferences)
    og_ok = og.ok and not broken
    checks = [
        CheckResult(
            "og",
            og_ok,
            "interference-free" if og_ok else og.reason or f"assertion broken at {broken}",
            og.witness,
        ),
        CheckResult(
            "explorer",
            explorer_witness is None,
            "no interleaving breaks an assertion"
            if explorer_witness is None
            else f"thread {explorer_witness[0]} step {explorer_witness[1]} fails",
            explorer_witness[2] if explorer_witness else None,
        ),
        CheckResult(
            "agreement",
            og_ok == (explorer_witness is None),
            "replay and exploration agree",
        ),
    ]
    ok = all(c.ok for c in checks)
    steps = [StepReport(0, "concurrent", ok, tuple(checks))]
    return _finish(steps)
