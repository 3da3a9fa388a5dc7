"""Brute-force twins of the engine's fast paths, exhaustive graph enumeration,
and instance-level checks of the framework's lemma and theorem statements."""

from __future__ import annotations

import hashlib
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

from . import bst, casl
from .errors import InconclusiveError, InputError, InternalInvariantError
from .estimator import (
    Estimator,
    ctx_estimate,
    inflow_rel,
)
from .flowgraph import (
    EdgeFn,
    FlowGraph,
    NodeId,
    compute_flow,
    ghost_mult,
    graph_to_json,
    make_graph,
    restrict,
    star,
    unique_decompose,
)
from .keyspace import (
    NEG_INF,
    AtomUniverse,
    FlowValue,
    all_values,
    interval_bits,
    oplus,
)

DEFAULT_CASE_BUDGET = 200_000
SOURCES = (-1, -2)
SINK = -3
ENDPOINT_GRID = (4, 8, 12, 16)
TREE_KEY_GRID = tuple(range(1, 18))

THEOREMS = (
    "UniqueDecomp",
    "MultCoincides",
    "ShapeIndependent",
    "Contextualization",
    "ConservativeExt",
    "KeysetDisjoint",
)


# ---------------------------------------------------------------- randomness


def rng_for(suite: str, index: int, seed: int) -> random.Random:
    """Counter-based generator: any single case replays without the rest."""
    digest = hashlib.sha256(f"{suite}:{index}:{seed}".encode()).digest()
    return random.Random(int.from_bytes(digest, "big"))


# ---------------------------------------------------------------- naive flow


def _naive_flow_raw(
    universe: AtomUniverse,
    nodes: Iterable[NodeId],
    edges: Iterable[tuple[NodeId, NodeId, EdgeFn]],
    inflow: dict[tuple[NodeId, NodeId], FlowValue],
) -> dict[NodeId, FlowValue]:
    # simultaneous re-evaluation from all-Bot; no worklist, no in-place sweep
    node_list = list(nodes)
    node_set = set(node_list)
    bot = FlowValue.bot(universe)
    base: dict[NodeId, FlowValue] = {x: bot for x in node_list}
    for (src, dst), v in inflow.items():
        if dst in node_set and not v.is_bot:
            base[dst] = oplus(base[dst], v)
    internal = [(s, d, fn) for s, d, fn in edges if s in node_set and d in node_set]
    cur = {x: bot for x in node_list}
    cap = 2 * len(node_list) + 2
    for _ in range(cap + 1):
        nxt = dict(base)
        for s, d, fn in internal:
            nxt[d] = oplus(nxt[d], fn.apply(cur[s]))
        if nxt == cur:
            return cur
        cur = nxt
    raise InternalInvariantError(f"naive flow did not stabilize in {cap} rounds")


def naive_flow(g: FlowGraph, max_iter: int | None = None) -> dict[NodeId, FlowValue]:
    """Least solution of the flow equation by full Jacobi rounds."""
    del max_iter  # the lattice-height bound always suffices
    return _naive_flow_raw(g.universe, g.nodes, g.edges, dict(g.inflow_map))


def natural_leq_search(m: FlowValue, n: FlowValue) -> bool:
    """The natural order by its existential definition: some o completes m to n."""
    return any(oplus(m, o) == n for o in all_values(m.universe))


# ---------------------------------------------------------------- enumeration


@dataclass(frozen=True)
class EnumBounds:
    """Size knobs for the exhaustive graph space."""

    max_nodes: int = 3
    max_endpoints: int = 2
    max_edge_fns: int = 3
    max_inflow_values: int = 4

    def __post_init__(self) -> None:
        if self.max_nodes < 0 or self.max_endpoints < 0:
            raise InputError("enumeration bounds must be non-negative")
        if not 1 <= self.max_edge_fns <= 5:
            raise InputError("edge function pool holds between 1 and 5 kinds")
        if not 1 <= self.max_inflow_values <= 5:
            raise InputError("inflow pool holds between 1 and 5 values")
        if self.max_endpoints > len(ENDPOINT_GRID):
            raise InputError(f"at most {len(ENDPOINT_GRID)} endpoints are available")


def universe_for(bounds: EnumBounds) -> AtomUniverse:
    return AtomUniverse.from_endpoints(ENDPOINT_GRID[: bounds.max_endpoints])


def _edge_fn_pool(universe: AtomUniverse, count: int) -> list[EdgeFn]:
    low = _low_bits(universe)
    pool = [
        EdgeFn.const_bot(),
        EdgeFn.filter(low),
        EdgeFn.const_top(),
        EdgeFn.filter(universe.full_bits & ~low),
        EdgeFn.filter(universe.full_bits),
    ]
    return pool[:count]


def _inflow_pool(universe: AtomUniverse, count: int) -> list[FlowValue]:
    low = _low_bits(universe)
    pool = [
        FlowValue.bot(universe),
        FlowValue.from_bits(universe, low),
        FlowValue.from_bits(universe, universe.full_bits & ~low),
        FlowValue.from_bits(universe, universe.full_bits),
        FlowValue.top(universe),
    ]
    return pool[:count]


def _low_bits(universe: AtomUniverse) -> int:
    if not universe.finite_endpoints:
        return universe.full_bits
    first = universe.finite_endpoints[0]
    return interval_bits(universe, NEG_INF, first, True, False)


def _pair_count(n: int) -> int:
    return n * (n - 1)


def count_cases(bounds: EnumBounds) -> int:
    """Closed-form size of the enumeration, for budget checks and tests."""
    total = 0
    for n in range(bounds.max_nodes + 1):
        cases = bounds.max_edge_fns ** _pair_count(n)
        if n >= 1:
            cases *= bounds.max_inflow_values ** len(SOURCES)
        total += cases
    return total


def enumerate_graphs(
    bounds: EnumBounds, budget: int = DEFAULT_CASE_BUDGET
) -> Iterator[FlowGraph]:
    """Every graph in the bounded space, in a fixed order.

    Nodes are 0..n-1; every ordered pair of distinct nodes draws an edge
    function from the pool; the two external sources feed the first and last
    node with a pool value each.
    """
    total = count_cases(bounds)
    if total > budget:
        raise InconclusiveError(f"{total} cases exceed the budget {budget}")
    universe = universe_for(bounds)
    fns = _edge_fn_pool(universe, bounds.max_edge_fns)
    values = _inflow_pool(universe, bounds.max_inflow_values)
    for n in range(bounds.max_nodes + 1):
        nodes = list(range(n))
        pairs = [(x, y) for x in nodes for y in nodes if x != y]
        in_targets = [(SOURCES[0], 0), (SOURCES[1], n - 1)] if n else []
        for fn_choice in itertools.product(fns, repeat=len(pairs)):
            edges = {p: fn for p, fn in zip(pairs, fn_choice)}
            for val_choice in itertools.product(values, repeat=len(in_targets)):
                inflow = {t: v for t, v in zip(in_targets, val_choice)}
                yield make_graph(universe, nodes, edges, inflow)


def random_graph(
    rng: random.Random,
    universe: AtomUniverse,
    max_nodes: int = 16,
    min_nodes: int = 1,
    edge_p: float = 0.15,
    allow_top: bool = True,
) -> FlowGraph:
    """One arbitrary graph: sparse random edges, random inflow, optional Tops."""
    n = rng.randint(min_nodes, max_nodes)
    nodes = list(range(n))
    edges: dict[tuple[NodeId, NodeId], EdgeFn] = {}
    for x in nodes:
        for y in nodes:
            if x == y or rng.random() >= edge_p:
                continue
            edges[(x, y)] = _random_edge_fn(rng, universe, allow_top)
        if rng.random() < 0.1:
            edges[(x, SINK)] = _random_edge_fn(rng, universe, allow_top)
    inflow: dict[tuple[NodeId, NodeId], FlowValue] = {}
    hit_p = min(1.0, 2.0 / n)
    for src in SOURCES:
        for x in nodes:
            if rng.random() >= hit_p:
                continue
            if allow_top and rng.random() < 0.05:
                inflow[(src, x)] = FlowValue.top(universe)
            else:
                bits = rng.getrandbits(universe.atom_count)
                inflow[(src, x)] = FlowValue.from_bits(universe, bits)
    return make_graph(universe, nodes, edges, inflow)


def _random_edge_fn(
    rng: random.Random, universe: AtomUniverse, allow_top: bool
) -> EdgeFn:
    if allow_top and rng.random() < 0.05:
        return EdgeFn.const_top()
    bits = rng.getrandbits(universe.atom_count)
    return EdgeFn.filter(bits or universe.full_bits)


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class TheoremReport:
    """Outcome of one instance-level theorem run."""

    name: str
    ok: bool
    checked: int
    counterexample: Any = None
    notes: tuple[str, ...] = field(default=())

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "theorem": self.name,
            "ok": self.ok,
            "checked": self.checked,
        }
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample
        if self.notes:
            out["notes"] = list(self.notes)
        return out


def flow_equivalence(
    bounds: EnumBounds | None = None,
    cases: int = 1000,
    seed: int = 0,
    max_nodes: int = 16,
    budget: int = DEFAULT_CASE_BUDGET,
) -> TheoremReport:
    """Engine fixpoint against the naive one: exhaustive space plus fuzz."""
    bounds = bounds or EnumBounds()
    checked = 0
    for g in enumerate_graphs(bounds, budget):
        if compute_flow(g) != naive_flow(g):
            return TheoremReport(
                "FlowEquivalence", False, checked, {"graph": graph_to_json(g)}
            )
        checked += 1
    universe = universe_for(bounds)
    for i in range(cases):
        g = random_graph(rng_for("flow-fuzz", i, seed), universe, max_nodes)
        if compute_flow(g) != naive_flow(g):
            return TheoremReport(
                "FlowEquivalence",
                False,
                checked,
                {"case": i, "seed": seed, "graph": graph_to_json(g)},
            )
        checked += 1
    return TheoremReport("FlowEquivalence", True, checked)


# ---------------------------------------------------------------- theorems


def default_bounds(name: str) -> EnumBounds:
    """The enumeration bounds a theorem runs at when the caller names none."""
    match name:
        case "UniqueDecomp":
            # splits of up to 2+2 nodes sit inside the 3-node space; one
            # endpoint keeps the alternative-inflow search exhaustive
            return EnumBounds(max_endpoints=1)
        case "MultCoincides":
            return EnumBounds(max_nodes=2, max_endpoints=1)
        case _:
            return EnumBounds()


def check_theorem(
    name: str,
    bounds: EnumBounds | None = None,
    cases: int | None = None,
    seed: int = 0,
    budget: int = DEFAULT_CASE_BUDGET,
) -> TheoremReport:
    """Instantiate one named lemma or theorem over a bounded space."""
    if name not in THEOREMS:
        raise InputError(f"unknown theorem: {name!r}")
    bounds = bounds or default_bounds(name)
    match name:
        case "UniqueDecomp":
            return _check_unique_decomp(bounds, budget)
        case "MultCoincides":
            return _check_mult_coincides(bounds, budget)
        case "ShapeIndependent":
            return _check_shape_independent(1000 if cases is None else cases, seed)
        case "Contextualization":
            return _check_contextualization(200 if cases is None else cases, seed)
        case "ConservativeExt":
            return _check_conservative_ext(bounds, budget)
        case _:
            return _check_keyset_disjoint(200 if cases is None else cases, seed)


# ---- unique decomposition


def _splits(nodes: tuple[NodeId, ...]) -> list[tuple[set[NodeId], set[NodeId]]]:
    # unordered bipartitions with both sides nonempty and at most two nodes
    if len(nodes) < 2:
        return []
    out = []
    anchor = nodes[0]
    for size in (1, 2):
        for part in itertools.combinations(nodes, size):
            if anchor not in part:
                continue
            rest = set(nodes) - set(part)
            if 1 <= len(rest) <= 2:
                out.append((set(part), rest))
    return out


def _decompositions(u: FlowGraph, p1: set[NodeId], p2: set[NodeId]) -> list[dict]:
    """All valid star decompositions of u along the partition, by brute force.

    Only inflow on cross-edge pairs into part one is free: outer entries are
    kept verbatim by the composition (anything else fails to rebuild u), inflow
    without a matching edge breaks the interface check, and part two's cross
    inflow is forced by part one's outflow.
    """
    universe = u.universe
    target = _naive_flow_raw(universe, u.nodes, u.edges, dict(u.inflow_map))
    edges1 = [(s, d, fn) for s, d, fn in u.edges if s in p1 and d in p1]
    edges2 = [(s, d, fn) for s, d, fn in u.edges if s in p2 and d in p2]
    cross_into_1 = [(s, d, fn) for s, d, fn in u.edges if s in p2 and d in p1]
    cross_into_2 = [(s, d, fn) for s, d, fn in u.edges if s in p1 and d in p2]
    outer1 = {(s, d): v for (s, d), v in u.inflow_map.items() if d in p1}
    outer2 = {(s, d): v for (s, d), v in u.inflow_map.items() if d in p2}
    bot = FlowValue.bot(universe)
    base1 = {x: bot for x in p1}
    for (_, d), v in outer1.items():
        base1[d] = oplus(base1[d], v)
    # part two's inputs depend on part one only through the pinned flow, so its
    # flow and the reverse-interface vector are the same for every candidate
    inflow2 = dict(outer2)
    for s, d, fn in cross_into_2:
        v = fn.apply(target[s])
        if not v.is_bot:
            inflow2[(s, d)] = v
    flow2 = _naive_flow_raw(universe, p2, edges2, inflow2)
    flow2_ok = all(flow2[x] == target[x] for x in p2)
    forced = tuple(fn.apply(flow2[s]) for s, _, fn in cross_into_1)
    # a usable entry value must be a summand of the pinned flow at its target
    vals = list(all_values(universe))
    per_entry = [
        [v for v in vals if natural_leq_search(v, target[d])]
        for _, d, _ in cross_into_1
    ]
    found = []
    for combo in itertools.product(*per_entry):
        if edges1:
            inflow1 = dict(outer1)
            for (s, d, _), v in zip(cross_into_1, combo):
                if not v.is_bot:
                    inflow1[(s, d)] = v
            flow1 = _naive_flow_raw(universe, p1, edges1, inflow1)
        else:
            # no internal edges: the flow is the plain inflow sum
            flow1 = dict(base1)
            for (_, d, _), v in zip(cross_into_1, combo):
                flow1[d] = oplus(flow1[d], v)
        if any(flow1[x] != target[x] for x in p1):
            continue
        if combo != forced or not flow2_ok:
            continue
        inflow1 = dict(outer1)
        for (s, d, _), v in zip(cross_into_1, combo):
            if not v.is_bot:
                inflow1[(s, d)] = v
        found.append({"inflow1": inflow1, "inflow2": inflow2})
    return found


def _check_unique_decomp(bounds: EnumBounds, budget: int) -> TheoremReport:
    checked = 0
    for u in enumerate_graphs(bounds, budget):
        for p1, p2 in _splits(u.nodes):
            t1, t2 = unique_decompose(u, p1, p2)
            recomposed = star(t1, t2)
            if not isinstance(recomposed, FlowGraph) or recomposed != u:
                return TheoremReport(
                    "UniqueDecomp",
                    False,
                    checked,
                    _split_witness(u, p1, "restriction does not star back"),
                )
            # enumerate from the smaller side; the derivation is symmetric
            small, large = (p1, p2) if len(p1) <= len(p2) else (p2, p1)
            canon = restrict(u, small)
            options = _decompositions(u, small, large)
            if len(options) != 1:
                reason = f"{len(options)} decompositions found"
            elif options[0]["inflow1"] != canon.inflow_map:
                reason = "search found a different decomposition than restriction"
            else:
                reason = None
            if reason is not None:
                return TheoremReport(
                    "UniqueDecomp", False, checked, _split_witness(u, p1, reason)
                )
            checked += 1
    return TheoremReport("UniqueDecomp", True, checked)


def _split_witness(u: FlowGraph, p1: set[NodeId], reason: str) -> dict[str, Any]:
    return {"graph": graph_to_json(u), "part": sorted(p1), "reason": reason}


# ---- star coincides with ghost multiplication


def _check_mult_coincides(bounds: EnumBounds, budget: int) -> TheoremReport:
    checked = 0
    defined = 0
    for u in enumerate_graphs(bounds, budget):
        if not u.nodes:
            continue
        subsets = [
            set(part)
            for size in range(1, len(u.nodes))
            for part in itertools.combinations(u.nodes, size)
        ]
        parts = {frozenset(s): restrict(u, s) for s in subsets}
        for a, b in itertools.permutations(parts, 2):
            if a & b:
                continue
            s_, t_ = parts[a], parts[b]
            composed = star(s_, t_)
            checked += 1
            if not isinstance(composed, FlowGraph):
                continue
            defined += 1
            mult = ghost_mult(s_, t_)
            flows = naive_flow(composed)
            part_flows = {**naive_flow(s_), **naive_flow(t_)}
            faithful = all(flows[x] == part_flows[x] for x in composed.nodes)
            if composed != mult or not faithful:
                return TheoremReport(
                    "MultCoincides",
                    False,
                    checked,
                    {
                        "graph": graph_to_json(u),
                        "left": sorted(a),
                        "right": sorted(b),
                    },
                )
    return TheoremReport(
        "MultCoincides", True, checked, notes=(f"{defined} pairs composed",)
    )


# ---- shape-independent approximation


def _check_shape_independent(cases: int, seed: int) -> TheoremReport:
    universe = AtomUniverse.from_endpoints(ENDPOINT_GRID[:2])
    checked = 0
    mutated = 0
    for i in range(cases):
        rng = rng_for("shape", i, seed)
        w = random_graph(
            rng, universe, max_nodes=6, min_nodes=2, edge_p=0.35, allow_top=False
        )
        nodes = list(w.nodes)
        k = rng.randint(1, len(nodes) - 1)
        p1 = set(rng.sample(nodes, k))
        p2 = set(nodes) - p1
        s_, u_ = unique_decompose(w, p1, p2)
        est = Estimator.simple()
        t_ = _enlarged(rng, s_)
        if t_ is None or not ctx_estimate(s_, t_, est).holds:
            t_ = s_
        else:
            mutated += 1
        composed = star(s_, u_)
        mult = ghost_mult(t_, u_)
        witness = {
            "case": i,
            "seed": seed,
            "composite": graph_to_json(w),
            "part": sorted(p1),
        }
        if not isinstance(composed, FlowGraph) or mult is None:
            return TheoremReport("ShapeIndependent", False, checked, witness)
        if not ctx_estimate(composed, mult, est).holds:
            return TheoremReport("ShapeIndependent", False, checked, witness)
        tt, uu = unique_decompose(mult, t_.node_set, u_.node_set)
        rebuilt = star(tt, uu)
        if not isinstance(rebuilt, FlowGraph) or rebuilt != mult:
            return TheoremReport("ShapeIndependent", False, checked, witness)
        if not inflow_rel(s_.inflow_map, tt.inflow_map, u_.node_set, est, tt.nodes):
            return TheoremReport("ShapeIndependent", False, checked, witness)
        if not inflow_rel(u_.inflow_map, uu.inflow_map, t_.node_set, est, uu.nodes):
            return TheoremReport("ShapeIndependent", False, checked, witness)
        checked += 1
    return TheoremReport(
        "ShapeIndependent", True, checked, notes=(f"{mutated} proper enlargements",)
    )


def _enlarged(rng: random.Random, s: FlowGraph) -> FlowGraph | None:
    # grow one edge filter; candidates keeping the estimate are kept by the caller
    growable = [
        (x, y, fn)
        for x, y, fn in s.edges
        if fn.kind == "filter" and fn.bits != s.universe.full_bits
    ]
    if not growable:
        return None
    x, y, fn = rng.choice(growable)
    extra = rng.getrandbits(s.universe.atom_count) & ~fn.bits
    if not extra:
        return None
    edges = {(a, b): f for a, b, f in s.edges}
    edges[(x, y)] = EdgeFn.filter(fn.bits | extra)
    return make_graph(s.universe, s.nodes, edges, dict(s.inflow_map))


# ---- contextualization on tree scenarios


def _random_tree(rng: random.Random) -> bst.Heap:
    h = bst.singleton_heap()
    for _ in range(rng.randint(4, 28)):
        out = bst.run_op(h, bst.Op.insert(rng.choice(TREE_KEY_GRID)))
        h = out.heap
    live = [k for k in h.keys_present()]
    for _ in range(rng.randint(0, 4)):
        if not live:
            break
        key = rng.choice(live)
        live.remove(key)
        h = bst.run_op(h, bst.Op.delete(key)).heap
    return h


def _removal_target(
    h: bst.Heap, op_name: str, rng: random.Random
) -> tuple[NodeId, NodeId] | None:
    """Pick (op target, node to mark), or None when the shape never fits."""
    if op_name == "remove_complex":
        cands = [
            x
            for x in h.reachable()
            if x != h.root
            and h.get(x).left is not None
            and h.get(x).right is not None
            and bst.find_succ(h, x) is not None
        ]
        return (lambda x: (x, x))(rng.choice(cands)) if cands else None
    # the simple removal unlinks a left child that has at most one child
    pairs = []
    for x in h.reachable():
        y = h.get(x).left
        if y is None or y not in h.nodes:
            continue
        yf = h.get(y)
        if yf.left is None or yf.right is None:
            pairs.append((x, y))
    return rng.choice(pairs) if pairs else None


def _check_contextualization(cases: int, seed: int) -> TheoremReport:
    universe = AtomUniverse.from_endpoints(TREE_KEY_GRID)
    checked = 0
    ran = {"remove_simple": 0, "remove_complex": 0}
    for i in range(cases):
        rng = rng_for("ctx", i, seed)
        h = _random_tree(rng)
        for op_name in ("remove_simple", "remove_complex"):
            picked = _removal_target(h, op_name, rng)
            if picked is None:
                continue
            target, mark = picked
            if not h.get(mark).deleted:
                h = bst.run_op(h, bst.Op.delete(h.get(mark).key)).heap
            out = bst.run_op(h, bst.Op(op_name, node=target))
            if out.result == bst.SKIPPED:
                continue
            cur = h
            for tstep in out.trace:
                pre = cur.add_node(*tstep.alloc) if tstep.alloc else cur
                post = bst.apply_step(cur, tstep)
                verdict = _contextualize_step(pre, post, tstep, universe)
                if verdict is not None:
                    verdict.update({"case": i, "seed": seed, "op": op_name})
                    return TheoremReport("Contextualization", False, checked, verdict)
                cur = post
                checked += 1
            h = out.heap
            ran[op_name] += 1
    notes = tuple(f"{n} {op} scenarios" for op, n in sorted(ran.items()))
    return TheoremReport("Contextualization", True, checked, notes=notes)


def _contextualize_step(
    pre: bst.Heap, post: bst.Heap, tstep: bst.OpStep, universe: AtomUniverse
) -> dict[str, Any] | None:
    g_pre = bst.derive_flowgraph(pre, universe)
    g_post = bst.derive_flowgraph(post, universe)
    foot = set(tstep.footprint)
    if not foot or foot == g_pre.node_set:
        return None
    a_state, d_state = unique_decompose(g_pre, foot, g_pre.node_set - foot)
    est = casl.trace_step_estimator(tstep, g_pre, None)
    new_edges = {(s, d): fn for s, d, fn in g_post.edges if s in foot}
    com = casl.flow_update_command(tstep.label, new_edges, foot)
    a = casl.Predicate.of([a_state])
    d = casl.Predicate.of([d_state])
    b, c = casl.contextualize(com, a, d, est, verify=False)
    witness = {"step": tstep.label, "pre": bst.heap_to_json(pre)}
    if getattr(c, "is_top", False) or (isinstance(c, casl.Predicate) and c.top):
        witness["reason"] = "context widened to Top"
        return witness
    if not c.contains(d_state):
        witness["reason"] = "seed context escapes the closure"
        return witness
    verdict = casl.check_casl(c, a, casl.Program.of(com), b)
    if not verdict.ok:
        witness["reason"] = verdict.reason
        return witness
    return None


# ---- conservative extension


def _check_conservative_ext(bounds: EnumBounds, budget: int) -> TheoremReport:
    universe = universe_for(bounds)
    emp = casl.Predicate.of([make_graph(universe, (), {}, {})])
    low = _low_bits(universe)
    checked = 0
    for g in enumerate_graphs(bounds, budget):
        if not g.nodes:
            continue
        commands = [
            casl.flow_update_command("route-out", {(0, SINK): EdgeFn.filter(low)}, (0,)),
            casl.flow_update_command("drop-out", {}, (0,)),
        ]
        for com in commands:
            a = casl.Predicate.of([g])
            std = casl.sem(casl.Program.of(com), a)
            induced = casl.induced_transformer(
                com, emp, Estimator.eq(), delegate_emp=False
            )(a)
            if induced != std:
                return TheoremReport(
                    "ConservativeExt",
                    False,
                    checked,
                    {"graph": graph_to_json(g), "command": com.name},
                )
            checked += 1
    return TheoremReport("ConservativeExt", True, checked)


# ---- keyset disjointness


def _check_keyset_disjoint(cases: int, seed: int) -> TheoremReport:
    universe = AtomUniverse.from_endpoints(TREE_KEY_GRID)
    checked = 0
    for i in range(cases):
        rng = rng_for("keyset", i, seed)
        h = _random_tree(rng)
        g = bst.derive_flowgraph(h, universe)
        flow = naive_flow(g)
        keysets = {
            x: bst.derived_quantities(h, g, flow, x).keyset for x in h.reachable()
        }
        items = sorted(keysets.items())
        for (x, kx), (y, ky) in itertools.combinations(items, 2):
            if kx.is_set and ky.is_set and kx.bits & ky.bits:
                return TheoremReport(
                    "KeysetDisjoint",
                    False,
                    checked,
                    {
                        "case": i,
                        "seed": seed,
                        "heap": bst.heap_to_json(h),
                        "nodes": [x, y],
                    },
                )
        checked += 1
    return TheoremReport("KeysetDisjoint", True, checked)
