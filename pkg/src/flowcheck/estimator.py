"""Estimator relations on flow values and graphs, closures, and approximate updates."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Iterable, Mapping

from .errors import ConfigError, InconclusiveError, InputError
from .keyspace import (
    AtomUniverse,
    FlowValue,
    Key,
    all_values,
    format_key,
    key_to_json,
    natural_leq,
    oplus,
    parse_interval_set,
    parse_key,
    bits_to_intervals,
)
from .flowgraph import EdgeFn, FlowGraph, NodeId, compute_flow, star_defined

DEFAULT_EXPANSION_CAP = 4096


@dataclass(frozen=True)
class Estimator:
    """Named relation on flow values, liftable to graphs as the context estimate.

    Kinds: eq, leq (the natural order), simple (equal, or both proper sets with
    containment), complex (simple, or shrink by at most the release set K when
    the pivot key is absent), custom (an explicit pair table, for adversarial
    axiom tests only).
    """

    kind: str
    pivot: Key | None = None
    release_bits: int = 0
    table: frozenset[tuple[FlowValue, FlowValue]] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("eq", "leq", "simple", "complex", "custom"):
            raise InputError(f"bad estimator kind: {self.kind!r}")
        if self.kind == "complex" and self.pivot is None:
            raise InputError("complex estimator needs a pivot key")
        if self.kind == "custom" and self.table is None:
            raise InputError("custom estimator needs a relation table")

    @classmethod
    def eq(cls) -> "Estimator":
        return cls("eq")

    @classmethod
    def leq(cls) -> "Estimator":
        return cls("leq")

    @classmethod
    def simple(cls) -> "Estimator":
        return cls("simple")

    @classmethod
    def complex(cls, pivot: Key, release_bits: int) -> "Estimator":
        return cls("complex", pivot=pivot, release_bits=release_bits)

    @classmethod
    def custom(cls, pairs: Iterable[tuple[FlowValue, FlowValue]]) -> "Estimator":
        return cls("custom", table=frozenset(pairs))

    def describe(self) -> str:
        if self.kind == "complex":
            return f"complex(pivot={format_key(self.pivot)})"
        return self.kind


def relates(est: Estimator, m: FlowValue, n: FlowValue) -> bool:
    """Decide m est-below n."""
    if m.universe != n.universe:
        raise ConfigError("flow values from different atom universes")
    if est.kind == "eq":
        return m == n
    if est.kind == "leq":
        return natural_leq(m, n)
    if est.kind == "custom":
        return (m, n) in est.table
    if m == n:
        return True
    if not (m.is_set and n.is_set):
        return False
    if m.bits & ~n.bits == 0:
        return True
    if est.kind == "complex" and not m.contains_key(est.pivot):
        return (m.bits & ~est.release_bits) & ~n.bits == 0
    return False


def related_values(
    est: Estimator, m: FlowValue, cap: int = DEFAULT_EXPANSION_CAP
) -> list[FlowValue]:
    """All n with m est-below n, in a canonical order; capped for sanity."""
    u = m.universe
    if est.kind == "custom":
        # adversarial tables live on tiny universes; filter directly
        vals = [n for n in all_values(u) if relates(est, m, n)]
        if len(vals) > cap:
            raise InconclusiveError(f"{len(vals)} related values exceed the cap {cap}")
        return vals
    if est.kind == "eq":
        return [m]
    if est.kind == "leq":
        if m.is_top:
            return [m]
        if m.is_bot:
            count = u.full_bits + 3
            if count > cap:
                raise InconclusiveError(f"{count} related values exceed the cap {cap}")
            return list(all_values(u))
        return [FlowValue.top(u), m]
    # simple or complex: exactly the supersets of a base mask
    if m.is_top or m.is_bot:
        return [m]
    base = m.bits
    if est.kind == "complex" and not m.contains_key(est.pivot):
        base &= ~est.release_bits
    free = u.full_bits & ~base
    count = 1 << free.bit_count()
    if count > cap:
        raise InconclusiveError(f"{count} related values exceed the cap {cap}")
    out = []
    t = 0
    while True:
        out.append(FlowValue.from_bits(u, base | t))
        if t == free:
            break
        t = (t - free) & free
    return out


# ---------------------------------------------------------------- axioms


@dataclass(frozen=True)
class AxiomReport:
    """Outcome of the estimator axiom check, with the violating instance if any."""

    ok: bool
    axiom: str | None = None
    witness: tuple | None = None

    def __str__(self) -> str:
        if self.ok:
            return "axioms hold"
        parts = ", ".join(str(w) for w in self.witness or ())
        return f"{self.axiom} violated at ({parts})"


def check_estimator_axioms(
    est: Estimator, universe: AtomUniverse, value_cap: int = DEFAULT_EXPANSION_CAP
) -> AxiomReport:
    """Exhaustively verify reflexivity/transitivity, sum-compatibility, and
    edge-function monotonicity; chain-join stability is discharged by the
    ascending chain condition of the finite lattice."""
    lattice_size = universe.full_bits + 3
    if lattice_size > value_cap:
        raise InconclusiveError(
            f"lattice of {lattice_size} values exceeds the cap {value_cap}"
        )
    vals = list(all_values(universe))
    for m in vals:
        if not relates(est, m, m):
            return AxiomReport(False, "E1-reflexive", (m,))
    rel = {(m, n) for m in vals for n in vals if relates(est, m, n)}
    pairs = [(m, n) for m in vals for n in vals if (m, n) in rel]
    for m, n in pairs:
        for o in vals:
            if (n, o) in rel and (m, o) not in rel:
                return AxiomReport(False, "E1-transitive", (m, n, o))
    for m, n in pairs:
        for o in vals:
            if not relates(est, oplus(m, o), oplus(n, o)):
                return AxiomReport(False, "E2-sum-compatible", (m, n, o))
    # ascending chain condition: strict ascents exist only out of Bot or into Top
    for m in vals:
        for n in vals:
            if natural_leq(m, n) and m != n and not (m.is_bot or n.is_top):
                return AxiomReport(False, "E3-ascending-chain", (m, n))
    fns = [EdgeFn.const_bot(), EdgeFn.const_top()]
    fns.extend(EdgeFn.filter(bits) for bits in range(universe.full_bits + 1))
    for fn in fns:
        for m, n in rel:
            if not relates(est, fn.apply(m), fn.apply(n)):
                return AxiomReport(False, "E4-edge-monotone", (fn, m, n))
    return AxiomReport(True)


# ---------------------------------------------------------------- graph lift


Inflow = Mapping[tuple[NodeId, NodeId], FlowValue]


@dataclass(frozen=True)
class CtxEstimateReport:
    """Verdict of the graph-level estimate, with a failing inflow and node if any."""

    verdict: str
    witness: tuple[tuple[tuple[NodeId, NodeId], FlowValue], ...] | None = None
    at: NodeId | None = None

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"


def _down_set(value: FlowValue) -> list[FlowValue]:
    # pointwise candidates below one inflow entry
    if value.is_top:
        return list(all_values(value.universe))
    return [FlowValue.bot(value.universe), value]


def ctx_estimate(
    s: FlowGraph,
    t: FlowGraph,
    est: Estimator,
    cap: int = DEFAULT_EXPANSION_CAP,
) -> CtxEstimateReport:
    """Decide s below t as graphs: same nodes and inflow, and every inflow at or
    below the recorded one transfers est-related values to every external target."""
    return _ctx_estimate_impl(s, t, est, cap)


@lru_cache(maxsize=32768)
def _ctx_estimate_impl(
    s: FlowGraph, t: FlowGraph, est: Estimator, cap: int
) -> CtxEstimateReport:
    # commands re-ask the same question the estimator guard already answered

    if s.universe != t.universe:
        raise ConfigError("graphs from different atom universes")
    if s.nodes != t.nodes or s.inflow != t.inflow:
        return CtxEstimateReport("fails", ())
    entries = list(s.inflow)
    options = [_down_set(v) for _, _, v in entries]
    total = 1
    for opt in options:
        total *= len(opt)
        if total > cap:
            return CtxEstimateReport("inconclusive")
    targets = sorted(set(s.external_targets) | set(t.external_targets))
    bot = FlowValue.bot(s.universe)
    for combo in itertools.product(*options):
        inflow = {
            (src, dst): v
            for (src, dst, _), v in zip(entries, combo)
            if not v.is_bot
        }
        flow_s = compute_flow(s.with_inflow(inflow))
        flow_t = compute_flow(t.with_inflow(inflow))
        for y in targets:
            out_s = out_t = bot
            for src, dst, fn in s.edges:
                if dst == y:
                    out_s = oplus(out_s, fn.apply(flow_s[src]))
            for src, dst, fn in t.edges:
                if dst == y:
                    out_t = oplus(out_t, fn.apply(flow_t[src]))
            if not relates(est, out_s, out_t):
                witness = tuple(((src, dst), v) for (src, dst, _), v in zip(entries, combo))
                return CtxEstimateReport("fails", witness, y)
    return CtxEstimateReport("holds")


def inflow_rel(
    in1: Inflow,
    in2: Inflow,
    region: Iterable[NodeId],
    est: Estimator,
    nodes: Iterable[NodeId],
) -> bool:
    """Inflow order relative to a source region: agreement outside the region,
    est-related per-target sums over sources inside it."""
    region = set(region)
    outside1 = {k: v for k, v in in1.items() if k[0] not in region and not v.is_bot}
    outside2 = {k: v for k, v in in2.items() if k[0] not in region and not v.is_bot}
    if outside1 != outside2:
        return False
    universe = None
    for v in list(in1.values()) + list(in2.values()):
        universe = v.universe
        break
    if universe is None:
        return True
    bot = FlowValue.bot(universe)
    for x in nodes:
        sum1 = sum2 = bot
        for (src, dst), v in in1.items():
            if dst == x and src in region:
                sum1 = oplus(sum1, v)
        for (src, dst), v in in2.items():
            if dst == x and src in region:
                sum2 = oplus(sum2, v)
        if not relates(est, sum1, sum2):
            return False
    return True


# ---------------------------------------------------------------- closures


@dataclass(frozen=True)
class ClosureFamily:
    """The graphs coinciding with a base graph except for region-larger inflow.

    Membership is exact and cheap; materialization is exact but may exceed the
    expansion cap, in which case only the membership test remains available.
    """

    base: FlowGraph
    sources: frozenset[NodeId]
    est: Estimator

    def contains(self, g: FlowGraph) -> bool:
        """Exact membership test."""
        if g.universe != self.base.universe:
            return False
        if g.nodes != self.base.nodes or g.edges != self.base.edges:
            return False
        return inflow_rel(
            self.base.inflow_map, g.inflow_map, self.sources, self.est, self.base.nodes
        )

    def materialize(self, cap: int = DEFAULT_EXPANSION_CAP) -> list[FlowGraph]:
        """Every member, in a canonical order; inconclusive over the cap."""
        base = self.base
        u = base.universe
        bot = FlowValue.bot(u)
        outside = {
            (src, dst): v for (src, dst), v in base.inflow_map.items() if src not in self.sources
        }
        sums: dict[NodeId, FlowValue] = {x: bot for x in base.nodes}
        for (src, dst), v in base.inflow_map.items():
            if src in self.sources:
                sums[dst] = oplus(sums[dst], v)
        srcs = sorted(self.sources)
        per_node_choices: list[list[dict[tuple[NodeId, NodeId], FlowValue]]] = []
        count = 1
        for x in base.nodes:
            choices = []
            for val in related_values(self.est, sums[x], cap):
                choices.extend(_splittings(val, srcs, x))
            per_node_choices.append(choices)
            count *= len(choices)
            if count > cap:
                raise InconclusiveError(f"closure larger than the cap {cap}")
        members = []
        for combo in itertools.product(*per_node_choices):
            inflow = dict(outside)
            for part in combo:
                inflow.update(part)
            members.append(base.with_inflow(inflow))
        return members

def _splittings(
    total: FlowValue, sources: list[NodeId], dst: NodeId
) -> list[dict[tuple[NodeId, NodeId], FlowValue]]:
    # ways to distribute a per-node sum across the region's sources
    u = total.universe
    if total.is_bot or not sources:
        return [{}] if total.is_bot else []
    if len(sources) == 1:
        return [{(sources[0], dst): total}]
    out = []
    if total.is_set:
        # a set sums only as itself plus Bot elsewhere
        for carrier in sources:
            out.append({(carrier, dst): total})
        return out
    # Top: any assignment whose sum is Top
    options = list(all_values(u))
    for combo in itertools.product(options, repeat=len(sources)):
        acc = FlowValue.bot(u)
        for v in combo:
            acc = oplus(acc, v)
        if acc == total:
            out.append(
                {(src, dst): v for src, v in zip(sources, combo) if not v.is_bot}
            )
    return out


def closure(
    g: FlowGraph, region: Iterable[NodeId], est: Estimator
) -> ClosureFamily:
    """Closure of a graph under region-larger inflow, as a first-class family."""
    return ClosureFamily(g, frozenset(region), est)


# ---------------------------------------------------------------- approximations

# updates and update approximations signal abort (Top) with None
CoreUpdate = Callable[[FlowGraph], "FlowGraph | None"]


def approx_physical_update(
    up: CoreUpdate,
    s: FlowGraph,
    est: Estimator,
    cap: int = DEFAULT_EXPANSION_CAP,
) -> tuple[FlowGraph, ...] | None:
    """Strengthened update: the updated graph when it is est-above the original
    at every inflow, Top (None) otherwise."""
    t = up(s)
    if t is None:
        return None
    report = ctx_estimate(s, t, est, cap)
    if not report.holds:
        return None
    return (t,)


def approx_ghost_mult(
    t: FlowGraph,
    u: FlowGraph,
    est: Estimator,
    witnesses: Iterable[FlowGraph] = (),
    cap: int = DEFAULT_EXPANSION_CAP,
) -> ClosureFamily | None:
    """Curried approximate multiplication [t]#(u): the closure of u over t's
    nodes when some recorded pre-state certifies compatibility, Top otherwise.

    The certificate is a graph est-below t composing with u, or one est-below u
    composing with t; both directions make the pair jointly consistent.
    """
    for w in witnesses:
        if ctx_estimate(w, t, est, cap).holds and star_defined(w, u):
            return closure(u, t.node_set, est)
        if ctx_estimate(w, u, est, cap).holds and star_defined(w, t):
            return closure(u, t.node_set, est)
    return None


def estimator_from_json(universe: AtomUniverse, raw: Any) -> Estimator:
    """Decode "eq" | "leq" | "simple" | {"complex": {"kx": key, "K": intervals}}."""
    if raw == "eq":
        return Estimator.eq()
    if raw == "leq":
        return Estimator.leq()
    if raw == "simple":
        return Estimator.simple()
    if isinstance(raw, dict) and set(raw) == {"complex"}:
        body = raw["complex"]
        if not isinstance(body, dict) or not {"kx", "K"} <= set(body):
            raise InputError(f"bad complex estimator: {raw!r}")
        return Estimator.complex(
            parse_key(body["kx"]), parse_interval_set(universe, body["K"])
        )
    raise InputError(f"bad estimator: {raw!r}")


def estimator_to_json(universe: AtomUniverse, est: Estimator) -> Any:
    if est.kind in ("eq", "leq", "simple"):
        return est.kind
    if est.kind == "complex":
        ivs = [
            [key_to_json(lo), key_to_json(hi), lo_open, hi_open]
            for lo, hi, lo_open, hi_open in bits_to_intervals(universe, est.release_bits)
        ]
        return {"complex": {"kx": key_to_json(est.pivot), "K": ivs}}
    raise InputError("custom estimators have no JSON form")
