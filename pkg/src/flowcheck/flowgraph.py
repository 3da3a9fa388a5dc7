"""Flow graphs: exact fixpoint flow, transfer, restriction, composition, decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Any, Iterable, Mapping

from .errors import (
    ConfigError,
    ContractViolation,
    InputError,
    InternalInvariantError,
)
from .keyspace import (
    AtomUniverse,
    FlowValue,
    meet_interval,
    oplus,
    parse_interval_set,
    bits_to_intervals,
    key_to_json,
    value_from_json,
    value_to_json,
)

NodeId = int


@dataclass(frozen=True)
class EdgeFn:
    """Edge function: constant Bot, intersection with a fixed atom set, or constant Top."""

    kind: str
    bits: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("bot", "filter", "top"):
            raise InputError(f"bad edge function kind: {self.kind!r}")
        if self.kind != "filter" and self.bits != 0:
            raise InputError("constant edge functions carry no filter bits")

    @classmethod
    def const_bot(cls) -> "EdgeFn":
        return cls("bot")

    @classmethod
    def const_top(cls) -> "EdgeFn":
        return cls("top")

    @classmethod
    def filter(cls, bits: int) -> "EdgeFn":
        return cls("filter", bits)

    def apply(self, m: FlowValue) -> FlowValue:
        """Evaluate on a flow value; ConstTop yields Top even on Bot input."""
        if self.kind == "bot":
            return FlowValue.bot(m.universe)
        if self.kind == "top":
            return FlowValue.top(m.universe)
        return meet_interval(m, self.bits)


@dataclass(frozen=True)
class FlowGraph:
    """Nodes, finite-support edge functions, and finite-support external inflow.

    Stored normalized: ConstBot edges and Bot inflow entries are dropped and
    entries are sorted, so dataclass equality is semantic equality.
    """

    universe: AtomUniverse
    nodes: tuple[NodeId, ...]
    edges: tuple[tuple[NodeId, NodeId, EdgeFn], ...]
    inflow: tuple[tuple[NodeId, NodeId, FlowValue], ...]

    def __post_init__(self) -> None:
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes) or list(self.nodes) != sorted(self.nodes):
            raise InputError("nodes must be sorted and distinct")
        seen = set()
        for src, dst, fn in self.edges:
            if src not in node_set:
                raise InputError(f"edge source {src} is not an internal node")
            if fn.kind == "bot":
                raise InputError("normalized graphs hold no ConstBot edges")
            if fn.kind == "filter" and not 0 <= fn.bits <= self.universe.full_bits:
                raise InputError("filter bits out of range for the universe")
            seen.add((src, dst))
        if len(seen) != len(self.edges) or list(self.edges) != sorted(self.edges, key=lambda e: e[:2]):
            raise InputError("edges must be sorted and keyed uniquely by (src, dst)")
        seen = set()
        for src, dst, value in self.inflow:
            if src in node_set:
                raise InputError(f"inflow source {src} must be external")
            if dst not in node_set:
                raise InputError(f"inflow target {dst} must be internal")
            if value.is_bot:
                raise InputError("normalized graphs hold no Bot inflow entries")
            if value.universe != self.universe:
                raise ConfigError("inflow value from a different atom universe")
            seen.add((src, dst))
        if len(seen) != len(self.inflow) or list(self.inflow) != sorted(
            self.inflow, key=lambda e: e[:2]
        ):
            raise InputError("inflow must be sorted and keyed uniquely by (src, dst)")

    # ------------------------------------------------------------- access

    @cached_property
    def node_set(self) -> frozenset[NodeId]:
        return frozenset(self.nodes)

    @cached_property
    def edges_into(self) -> dict[NodeId, list[tuple[NodeId, EdgeFn]]]:
        into: dict[NodeId, list[tuple[NodeId, EdgeFn]]] = {x: [] for x in self.nodes}
        for src, dst, fn in self.edges:
            if dst in into:
                into[dst].append((src, fn))
        return into

    @cached_property
    def edge_map(self) -> dict[tuple[NodeId, NodeId], EdgeFn]:
        return {(s, d): fn for s, d, fn in self.edges}

    @cached_property
    def inflow_map(self) -> dict[tuple[NodeId, NodeId], FlowValue]:
        return {(s, d): v for s, d, v in self.inflow}

    @cached_property
    def external_targets(self) -> tuple[NodeId, ...]:
        return tuple(sorted({d for _, d, _ in self.edges if d not in self.node_set}))

    def edge_fn(self, x: NodeId, y: NodeId) -> EdgeFn:
        return self.edge_map.get((x, y), EdgeFn.const_bot())

    def inflow_value(self, x: NodeId, y: NodeId) -> FlowValue:
        return self.inflow_map.get((x, y), FlowValue.bot(self.universe))

    @cached_property
    def flow(self) -> dict[NodeId, FlowValue]:
        return compute_flow(self)

    def with_inflow(self, entries: Mapping[tuple[NodeId, NodeId], FlowValue]) -> "FlowGraph":
        """Same nodes and edges with the inflow replaced (the g[in'] operation)."""
        return make_graph(self.universe, self.nodes, self.edge_map, entries)

    def is_empty(self) -> bool:
        return not self.nodes


def make_graph(
    universe: AtomUniverse,
    nodes: Iterable[NodeId],
    edges: Mapping[tuple[NodeId, NodeId], EdgeFn] | Iterable[tuple[NodeId, NodeId, EdgeFn]],
    inflow: Mapping[tuple[NodeId, NodeId], FlowValue]
    | Iterable[tuple[NodeId, NodeId, FlowValue]] = (),
) -> FlowGraph:
    """Normalize and build a flow graph: sort entries, drop defaults."""
    if isinstance(edges, Mapping):
        edge_items = [(s, d, fn) for (s, d), fn in edges.items()]
    else:
        edge_items = list(edges)
    if isinstance(inflow, Mapping):
        in_items = [(s, d, v) for (s, d), v in inflow.items()]
    else:
        in_items = list(inflow)
    edge_items = sorted((e for e in edge_items if e[2].kind != "bot"), key=lambda e: e[:2])
    in_items = sorted((e for e in in_items if not e[2].is_bot), key=lambda e: e[:2])
    return FlowGraph(universe, tuple(sorted(set(nodes))), tuple(edge_items), tuple(in_items))


def empty_graph(universe: AtomUniverse) -> FlowGraph:
    """The unit of both multiplications."""
    return make_graph(universe, (), {}, {})


# ---------------------------------------------------------------- fixpoint


def compute_flow(g: FlowGraph, max_iter: int | None = None) -> dict[NodeId, FlowValue]:
    """Least solution of flow(x) = sum of inflow into x + sum of edge-propagated flows.

    Ascending-id sweeps from all-Bot; on this three-level lattice every node
    ascends at most twice, so 2n+1 sweeps always suffice. Exceeding the cap
    means a broken monotonicity invariant, not bad input.
    """
    n = len(g.nodes)
    cap = max_iter if max_iter is not None else 2 * n + 2
    bot = FlowValue.bot(g.universe)
    base: dict[NodeId, FlowValue] = {x: bot for x in g.nodes}
    for _, dst, value in g.inflow:
        base[dst] = oplus(base[dst], value)
    flow = {x: bot for x in g.nodes}
    into = g.edges_into
    sweeps = 0
    while True:
        if n == 0:
            return flow
        sweeps += 1
        if sweeps > cap:
            raise InternalInvariantError(f"flow fixpoint did not stabilize in {cap} sweeps")
        changed = False
        for x in g.nodes:
            acc = base[x]
            for src, fn in into[x]:
                acc = oplus(acc, fn.apply(flow[src]))
            if acc != flow[x]:
                flow[x] = acc
                changed = True
        if not changed:
            return flow


def outflow(
    g: FlowGraph, flow: Mapping[NodeId, FlowValue], x: NodeId, y: NodeId
) -> FlowValue:
    """Flow g sends from internal x to y: the edge function applied to flow(x)."""
    if x not in g.node_set:
        raise ContractViolation(f"outflow source {x} is not in the graph")
    if y == x:
        raise ContractViolation("outflow target must differ from the source")
    return g.edge_fn(x, y).apply(flow[x])


def transfer(
    g: FlowGraph,
    in_entries: Mapping[tuple[NodeId, NodeId], FlowValue],
    y: NodeId,
    max_iter: int | None = None,
) -> FlowValue:
    """Outflow toward external y after recomputing the flow under a replaced inflow."""
    if y in g.node_set:
        raise ContractViolation(f"transfer target {y} must be external")
    flow = compute_flow(g.with_inflow(in_entries), max_iter)
    acc = FlowValue.bot(g.universe)
    for src, dst, fn in g.edges:
        if dst == y:
            acc = oplus(acc, fn.apply(flow[src]))
    return acc


# ---------------------------------------------------------------- restriction


def restrict(g: FlowGraph, region: Iterable[NodeId]) -> FlowGraph:
    """Subgraph on the region; inflow from dropped nodes is pinned at their outflow."""
    keep = set(region) & g.node_set
    flow = g.flow
    edges = {(s, d): fn for s, d, fn in g.edges if s in keep}
    inflow: dict[tuple[NodeId, NodeId], FlowValue] = {}
    for src, dst, value in g.inflow:
        if dst in keep:
            inflow[(src, dst)] = value
    for src, dst, fn in g.edges:
        if src not in keep and dst in keep:
            inflow[(src, dst)] = fn.apply(flow[src])
    return make_graph(g.universe, keep, edges, inflow)


# ---------------------------------------------------------------- composition


@dataclass(frozen=True)
class StarFailure:
    """Machine-readable reason star composition is undefined."""

    reason: str
    at: Any = None

    def __str__(self) -> str:
        return self.reason if self.at is None else f"{self.reason} at {self.at}"


def ghost_mult(s: FlowGraph, t: FlowGraph) -> FlowGraph | None:
    """Disjoint union that drops cross-boundary inflow expectations; None on overlap."""
    if s.universe != t.universe:
        raise ConfigError("graphs from different atom universes")
    if s.node_set & t.node_set:
        return None
    nodes = set(s.nodes) | set(t.nodes)
    edges = {(a, b): fn for a, b, fn in s.edges + t.edges}
    inflow = {
        (a, b): v for a, b, v in s.inflow + t.inflow if a not in nodes
    }
    return make_graph(s.universe, nodes, edges, inflow)


def star(s: FlowGraph, t: FlowGraph) -> FlowGraph | StarFailure:
    """Composition: ghost_mult guarded by interface match and flow faithfulness."""
    u = ghost_mult(s, t)
    if u is None:
        return StarFailure("node-overlap", tuple(sorted(s.node_set & t.node_set)))
    flow_s, flow_t = s.flow, t.flow
    for a, b, side in ((s, t, flow_s), (t, s, flow_t)):
        # a's outflow into b must be exactly the inflow b expects from a
        expected = {(x, y): v for x, y, v in b.inflow if x in a.node_set}
        for x, y, fn in a.edges:
            if y in b.node_set:
                out = fn.apply(side[x])
                if out != b.inflow_value(x, y):
                    return StarFailure("interface-mismatch", (x, y))
                expected.pop((x, y), None)
        for (x, y), v in expected.items():
            if not v.is_bot:
                return StarFailure("interface-mismatch", (x, y))
    flow_u = u.flow
    for x in u.nodes:
        split = flow_s[x] if x in s.node_set else flow_t[x]
        if flow_u[x] != split:
            return StarFailure("flow-not-faithful", x)
    return u


def star_defined(s: FlowGraph, t: FlowGraph) -> bool:
    """True when star composition yields a graph."""
    return isinstance(star(s, t), FlowGraph)


def unique_decompose(
    u: FlowGraph, part1: Iterable[NodeId], part2: Iterable[NodeId]
) -> tuple[FlowGraph, FlowGraph]:
    """Split along a node partition; the parts star-recompose to u and are unique."""
    p1, p2 = set(part1), set(part2)
    if p1 & p2 or p1 | p2 != u.node_set:
        raise ContractViolation("node sets must partition the graph")
    return restrict(u, p1), restrict(u, p2)


# ---------------------------------------------------------------- JSON and DOT


def edge_fn_from_json(universe: AtomUniverse, raw: Any) -> EdgeFn:
    """Decode "bot" | "top" | {"filter": interval-set}."""
    if raw == "bot":
        return EdgeFn.const_bot()
    if raw == "top":
        return EdgeFn.const_top()
    if isinstance(raw, dict) and set(raw) == {"filter"}:
        return EdgeFn.filter(parse_interval_set(universe, raw["filter"]))
    raise InputError(f"bad edge function: {raw!r}")


def edge_fn_to_json(universe: AtomUniverse, fn: EdgeFn) -> Any:
    if fn.kind == "bot":
        return "bot"
    if fn.kind == "top":
        return "top"
    ivs = [
        [key_to_json(lo), key_to_json(hi), lo_open, hi_open]
        for lo, hi, lo_open, hi_open in bits_to_intervals(universe, fn.bits)
    ]
    return {"filter": ivs}


def graph_from_json(raw: Any) -> FlowGraph:
    """Decode the graph file format (endpoints, nodes with edges, inflow)."""
    if not isinstance(raw, dict):
        raise InputError("graph file must be a JSON object")
    for field in ("endpoints", "nodes"):
        if field not in raw:
            raise InputError(f"graph file lacks {field!r}")
    universe = AtomUniverse.from_endpoints(raw["endpoints"])
    nodes: list[NodeId] = []
    edges: dict[tuple[NodeId, NodeId], EdgeFn] = {}
    for entry in raw["nodes"]:
        if not isinstance(entry, dict) or "id" not in entry:
            raise InputError(f"bad node entry: {entry!r}")
        x = entry["id"]
        if not isinstance(x, int) or isinstance(x, bool):
            raise InputError(f"node id must be an int: {x!r}")
        nodes.append(x)
        for edge in entry.get("edges", ()):
            if not isinstance(edge, dict) or "dst" not in edge or "fn" not in edge:
                raise InputError(f"bad edge entry: {edge!r}")
            edges[(x, edge["dst"])] = edge_fn_from_json(universe, edge["fn"])
    inflow: dict[tuple[NodeId, NodeId], FlowValue] = {}
    for entry in raw.get("inflow", ()):
        if not isinstance(entry, dict) or not {"src", "dst", "value"} <= set(entry):
            raise InputError(f"bad inflow entry: {entry!r}")
        inflow[(entry["src"], entry["dst"])] = value_from_json(universe, entry["value"])
    try:
        return make_graph(universe, nodes, edges, inflow)
    except (InputError, ConfigError):
        raise
    except Exception as exc:  # surface malformed structure as an input problem
        raise InputError(f"malformed graph file: {exc}") from exc


def graph_to_json(g: FlowGraph) -> dict[str, Any]:
    """Encode a graph in the file format, canonically ordered."""
    nodes = []
    for x in g.nodes:
        out_edges = [
            {"dst": d, "fn": edge_fn_to_json(g.universe, fn)}
            for s, d, fn in g.edges
            if s == x
        ]
        entry: dict[str, Any] = {"id": x}
        if out_edges:
            entry["edges"] = out_edges
        nodes.append(entry)
    return {
        "endpoints": list(g.universe.finite_endpoints),
        "nodes": nodes,
        "inflow": [
            {"src": s, "dst": d, "value": value_to_json(v)} for s, d, v in g.inflow
        ],
    }


def graph_to_dot(g: FlowGraph, flow: Mapping[NodeId, FlowValue] | None = None) -> str:
    """Render the graph (optionally annotated with its flow) in DOT syntax."""
    flow = g.flow if flow is None else flow
    lines = ["digraph flowgraph {"]
    for x in g.nodes:
        lines.append(f'  n{x} [label="{x}\\n{flow[x]}"];')
    for y in g.external_targets:
        lines.append(f'  n{y} [label="{y}", style=dashed];')
    for s, d, fn in g.edges:
        label = {"top": "top", "filter": g.universe.format_bits(fn.bits)}.get(fn.kind, "")
        lines.append(f'  n{s} -> n{d} [label="{label}"];')
    for s, d, v in g.inflow:
        lines.append(f'  ext{s} [label="{s}", shape=plaintext];')
        lines.append(f'  ext{s} -> n{d} [label="{v}", style=dashed];')
    lines.append("}")
    return "\n".join(lines)
