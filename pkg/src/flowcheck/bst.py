"""Binary search tree with logical deletion: heap model, derived flow graph,
inset/keyset quantities, node and global invariants, and executable operations."""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any, Iterable

from .errors import ContractViolation, InputError
from .keyspace import (
    NEG_INF,
    POS_INF,
    AtomUniverse,
    FlowValue,
    Key,
    interval_bits,
    key_to_json,
    oplus,
    parse_key,
)
from .flowgraph import EdgeFn, FlowGraph, NodeId, make_graph

EXTERNAL_SOURCE = -1


@dataclass(frozen=True)
class NodeFields:
    """One heap node: child pointers, key, logical deletion mark, duplicate mark."""

    key: Key
    left: NodeId | None = None
    right: NodeId | None = None
    deleted: bool = False
    dup: str = "no"

    def __post_init__(self) -> None:
        if self.dup not in ("no", "left", "right"):
            raise InputError(f"bad dup mark: {self.dup!r}")


@dataclass(frozen=True)
class Heap:
    """Immutable node store with a distinguished root; operations return new heaps."""

    root: NodeId
    entries: tuple[tuple[NodeId, NodeFields], ...]

    def __post_init__(self) -> None:
        ids = [i for i, _ in self.entries]
        if list(ids) != sorted(set(ids)):
            raise InputError("heap entries must be sorted and distinct")
        if self.root not in set(ids):
            raise InputError("root must be a heap node")

    @classmethod
    def of(cls, root: NodeId, nodes: dict[NodeId, NodeFields]) -> "Heap":
        return cls(root, tuple(sorted(nodes.items())))

    @cached_property
    def nodes(self) -> dict[NodeId, NodeFields]:
        return dict(self.entries)

    def get(self, x: NodeId) -> NodeFields:
        try:
            return self.nodes[x]
        except KeyError:
            raise ContractViolation(f"no heap node {x}") from None

    def with_field(self, x: NodeId, field: str, value: Any) -> "Heap":
        fields = self.get(x)
        if field == "del":
            field = "deleted"
        updated = replace(fields, **{field: value})
        nodes = dict(self.nodes)
        nodes[x] = updated
        return Heap.of(self.root, nodes)

    def add_node(self, x: NodeId, fields: NodeFields) -> "Heap":
        if x in self.nodes:
            raise ContractViolation(f"heap node {x} already exists")
        nodes = dict(self.nodes)
        nodes[x] = fields
        return Heap.of(self.root, nodes)

    def fresh_id(self) -> NodeId:
        return max(self.nodes) + 1

    def reachable(self) -> list[NodeId]:
        """Nodes reachable from the root via child pointers, in visit order."""
        seen: list[NodeId] = []
        seen_set: set[NodeId] = set()
        stack = [self.root]
        while stack:
            x = stack.pop()
            if x is None or x in seen_set or x not in self.nodes:
                continue
            seen.append(x)
            seen_set.add(x)
            fields = self.nodes[x]
            stack.append(fields.right)
            stack.append(fields.left)
        return seen

    def keys_present(self) -> list[int]:
        return sorted(
            {f.key for _, f in self.entries if isinstance(f.key, int)}
        )


def singleton_heap() -> Heap:
    """A fresh tree: only the sentinel root with key -inf and the tree under its right."""
    return Heap.of(0, {0: NodeFields(key=NEG_INF)})


# ---------------------------------------------------------------- flow derivation


def derive_flowgraph(
    h: Heap,
    universe: AtomUniverse | None = None,
    inflow: dict[tuple[NodeId, NodeId], FlowValue] | None = None,
) -> FlowGraph:
    """Edge functions from the physical tree; default inflow routes the full
    key range to the root."""
    if universe is None:
        universe = AtomUniverse.from_endpoints(h.keys_present())
    grid = set(universe.finite_endpoints)
    edges: dict[tuple[NodeId, NodeId], EdgeFn] = {}
    for x, f in h.entries:
        if isinstance(f.key, int) and f.key not in grid:
            raise InputError(f"key {f.key} of node {x} is off the atom grid")
        if f.left is not None and f.left == f.right:
            edges[(x, f.left)] = EdgeFn.const_top()
            continue
        if f.left is not None and f.dup != "left":
            edges[(x, f.left)] = EdgeFn.filter(
                interval_bits(universe, NEG_INF, f.key, False, True)
            )
        if f.right is not None and f.dup != "right":
            edges[(x, f.right)] = EdgeFn.filter(
                interval_bits(universe, f.key, POS_INF, True, False)
            )
    if inflow is None:
        inflow = {
            (EXTERNAL_SOURCE, h.root): FlowValue.from_bits(universe, universe.full_bits)
        }
    return make_graph(universe, h.nodes.keys(), edges, inflow)


@dataclass(frozen=True)
class NodeQuantities:
    """Inset, both outsets, keyset, and logical contents of one node."""

    inset: FlowValue
    out_left: FlowValue
    out_right: FlowValue
    keyset: FlowValue
    contents: frozenset[int]


def derived_quantities(
    h: Heap, g: FlowGraph, flow: dict[NodeId, FlowValue], x: NodeId
) -> NodeQuantities:
    """Per-node quantities: keyset is the inset minus both outsets."""
    f = h.get(x)
    u = g.universe
    empty = FlowValue.from_bits(u, 0)
    inset = flow[x]
    out_left = g.edge_fn(x, f.left).apply(inset) if f.left is not None else empty
    out_right = g.edge_fn(x, f.right).apply(inset) if f.right is not None else empty
    if inset.is_bot or inset.is_top:
        keyset = empty
    else:
        removed = 0
        topped = False
        for out in (out_left, out_right):
            if out.is_top:
                topped = True
            elif out.is_set:
                removed |= out.bits
        keyset = empty if topped else FlowValue.from_bits(u, inset.bits & ~removed)
    if f.deleted or x == h.root or not isinstance(f.key, int):
        contents: frozenset[int] = frozenset()
    else:
        contents = frozenset((f.key,))
    return NodeQuantities(inset, out_left, out_right, keyset, contents)


# ---------------------------------------------------------------- invariants


@dataclass(frozen=True)
class InvReport:
    """Region invariant evaluation: per-conjunct violations plus derived data."""

    ok: bool
    violations: tuple[tuple[NodeId, str], ...]
    contents: frozenset[int]
    insets: dict[NodeId, FlowValue]
    keysets: dict[NodeId, FlowValue]


def check_inv(
    h: Heap,
    region: Iterable[NodeId] | None = None,
    full_region: Iterable[NodeId] | None = None,
    universe: AtomUniverse | None = None,
    graph: FlowGraph | None = None,
) -> InvReport:
    """Evaluate the per-node invariant over a region against the full node set."""
    g = derive_flowgraph(h, universe) if graph is None else graph
    flow = g.flow
    region = list(h.nodes) if region is None else sorted(region)
    full = set(h.nodes) if full_region is None else set(full_region)
    violations: list[tuple[NodeId, str]] = []
    contents: set[int] = set()
    insets: dict[NodeId, FlowValue] = {}
    keysets: dict[NodeId, FlowValue] = {}
    for x in region:
        f = h.get(x)
        q = derived_quantities(h, g, flow, x)
        insets[x] = q.inset
        keysets[x] = q.keyset
        contents |= q.contents
        for child in (f.left, f.right):
            if child is not None and child not in full:
                violations.append((x, "child-outside-region"))
        if f.dup != "no":
            violations.append((x, "duplicate-mark"))
        if q.inset.is_top:
            violations.append((x, "inset-top"))
        if any(not q.keyset.contains_key(k) for k in q.contents):
            violations.append((x, "contents-outside-keyset"))
        if not q.inset.is_bot and not q.inset.contains_key(f.key):
            violations.append((x, "key-outside-inset"))
        if x == h.root:
            full_value = FlowValue.from_bits(g.universe, g.universe.full_bits)
            if q.inset != full_value:
                violations.append((x, "root-inset-not-full"))
            if f.deleted:
                violations.append((x, "root-deleted"))
            if f.key != NEG_INF:
                violations.append((x, "root-key-not-sentinel"))
    return InvReport(not violations, tuple(violations), frozenset(contents), insets, keysets)


@dataclass(frozen=True)
class DecompReport:
    """Keyset disjointness of a two-region split plus its search-structure premises."""

    ok: bool
    failures: tuple[str, ...]
    contents1: frozenset[int]
    contents2: frozenset[int]


def decomp(h: Heap, region1: Iterable[NodeId], region2: Iterable[NodeId]) -> DecompReport:
    """Check the split premises: decreasing edges, disjoint per-node outsets,
    root-only external inflow, and disjoint region keysets."""
    r1, r2 = set(region1), set(region2)
    if r1 & r2 or r1 | r2 != set(h.nodes):
        raise ContractViolation("regions must partition the heap")
    g = derive_flowgraph(h)
    flow = g.flow
    failures: list[str] = []
    for _, _, fn in g.edges:
        if fn.kind == "top":
            failures.append("edge-not-decreasing")
            break
    for x in h.nodes:
        q = derived_quantities(h, g, flow, x)
        if q.out_left.is_top or q.out_right.is_top:
            failures.append(f"outsets-overlap at {x}")
        elif q.out_left.is_set and q.out_right.is_set and q.out_left.bits & q.out_right.bits:
            failures.append(f"outsets-overlap at {x}")
    if any(dst != h.root for _, dst, _ in g.inflow):
        failures.append("external-inflow-not-root-only")
    ks1 = ks2 = 0
    c1: set[int] = set()
    c2: set[int] = set()
    for x in h.nodes:
        q = derived_quantities(h, g, flow, x)
        if q.keyset.is_set:
            if x in r1:
                ks1 |= q.keyset.bits
            else:
                ks2 |= q.keyset.bits
        (c1 if x in r1 else c2).update(q.contents)
    if ks1 & ks2:
        failures.append("region-keysets-overlap")
    return DecompReport(not failures, tuple(failures), frozenset(c1), frozenset(c2))


# ---------------------------------------------------------------- operations


@dataclass(frozen=True)
class Op:
    """One tree operation; maintenance ops pick their target from the seed."""

    name: str
    key: Key | None = None
    node: NodeId | None = None

    @classmethod
    def find(cls, key: Key) -> "Op":
        return cls("find", key=key)

    @classmethod
    def contains(cls, key: Key) -> "Op":
        return cls("contains", key=key)

    @classmethod
    def insert(cls, key: Key) -> "Op":
        return cls("insert", key=key)

    @classmethod
    def delete(cls, key: Key) -> "Op":
        return cls("delete", key=key)

    @classmethod
    def find_succ(cls, node: NodeId) -> "Op":
        return cls("find_succ", node=node)

    @classmethod
    def remove_simple(cls) -> "Op":
        return cls("remove_simple")

    @classmethod
    def remove_complex(cls) -> "Op":
        return cls("remove_complex")

    @classmethod
    def rotate(cls) -> "Op":
        return cls("rotate")


@dataclass(frozen=True)
class OpStep:
    """One proof-relevant program step: grouped field writes with a footprint.

    The estimator hint names the relation the proof outline declares for the
    step; the release bound carries the successor key for the complex kind.
    """

    label: str
    writes: tuple[tuple[NodeId, str, Any], ...]
    footprint: tuple[NodeId, ...]
    estimator: str = "eq"
    pivot: Key | None = None
    release_hi: Key | None = None
    alloc: tuple[NodeId, NodeFields] | None = None


@dataclass(frozen=True)
class OpResult:
    heap: Heap
    result: Any
    trace: tuple[OpStep, ...]


def apply_step(h: Heap, step: OpStep) -> Heap:
    """Replay one traced step on a heap."""
    if step.alloc is not None:
        h = h.add_node(*step.alloc)
    for node, field, value in step.writes:
        h = h.with_field(node, field, value)
    return h


def find(h: Heap, key: Key) -> tuple[NodeId, NodeId | None]:
    """Walk from the root; returns (last node on the path, match or None)."""
    x = h.root
    y = h.get(x).right
    while y is not None and h.get(y).key != key:
        x = y
        y = h.get(x).left if key < h.get(x).key else h.get(x).right
    return x, y


def _pick_reachable(h: Heap, seed: int) -> NodeId:
    # the seeded resolution of the nondeterministic target pick
    rng = random.Random(seed)
    return rng.choice(sorted(h.reachable()))


def _target(h: Heap, op: Op, seed: int) -> NodeId:
    # an explicit node pins the maintenance target; otherwise the seed picks
    if op.node is not None:
        if op.node not in h.nodes:
            raise InputError(f"target node {op.node} is not in the heap")
        return op.node
    return _pick_reachable(h, seed)


def find_succ(h: Heap, x: NodeId) -> tuple[NodeId, NodeId] | None:
    """Leftmost node under x's right child with its parent; None if absent."""
    p = h.get(x).right
    if p is None:
        return None
    y = h.get(p).left
    if y is None:
        return None
    while h.get(y).left is not None:
        p = y
        y = h.get(p).left
    return p, y


SKIPPED = "skipped"


def run_op(h: Heap, op: Op, seed: int = 0) -> OpResult:
    """Execute one operation; unmet maintenance preconditions give a skip."""
    match op.name:
        case "find":
            return OpResult(h, find(h, op.key), ())
        case "contains":
            _, y = find(h, op.key)
            return OpResult(h, y is not None and not h.get(y).deleted, ())
        case "insert":
            return _insert(h, op.key)
        case "delete":
            return _delete(h, op.key)
        case "find_succ":
            return OpResult(h, find_succ(h, op.node), ())
        case "remove_simple":
            return _remove_simple(h, _target(h, op, seed))
        case "remove_complex":
            return _remove_complex(h, _target(h, op, seed))
        case "rotate":
            return _rotate(h, _target(h, op, seed))
        case _:
            raise InputError(f"unknown operation: {op.name!r}")


def _check_user_key(key: Key) -> None:
    if not isinstance(key, int):
        raise ContractViolation("user operations take finite keys")


def _insert(h: Heap, key: Key) -> OpResult:
    _check_user_key(key)
    x, y = find(h, key)
    if y is None:
        z = h.fresh_id()
        side = "left" if key < h.get(x).key else "right"
        alloc = OpStep(
            "insert-alloc",
            writes=(),
            footprint=(z,),
            alloc=(z, NodeFields(key=key)),
        )
        link = OpStep("insert-link", writes=((x, side, z),), footprint=(x, z))
        heap = apply_step(apply_step(h, alloc), link)
        return OpResult(heap, True, (alloc, link))
    if h.get(y).deleted:
        step = OpStep("insert-revive", writes=((y, "del", False),), footprint=(y,))
        return OpResult(apply_step(h, step), True, (step,))
    return OpResult(h, False, ())


def _delete(h: Heap, key: Key) -> OpResult:
    _check_user_key(key)
    _, y = find(h, key)
    if y is None or h.get(y).deleted:
        return OpResult(h, False, ())
    step = OpStep("delete-mark", writes=((y, "del", True),), footprint=(y,))
    return OpResult(apply_step(h, step), True, (step,))


def _remove_simple(h: Heap, x: NodeId) -> OpResult:
    y = h.get(x).left
    if y is None or not h.get(y).deleted:
        return OpResult(h, SKIPPED, ())
    yf = h.get(y)
    if yf.right is None:
        child = yf.left
    elif yf.left is None:
        child = yf.right
    else:
        return OpResult(h, SKIPPED, ())
    step = OpStep(
        "unlink-marked",
        writes=((x, "left", child),),
        footprint=(x, y),
        estimator="simple",
    )
    return OpResult(apply_step(h, step), True, (step,))


def _remove_complex(h: Heap, x: NodeId) -> OpResult:
    xf = h.get(x)
    if not xf.deleted or xf.left is None or xf.right is None:
        return OpResult(h, SKIPPED, ())
    succ = find_succ(h, x)
    if succ is None:
        return OpResult(h, SKIPPED, ())
    p, y = succ
    yf = h.get(y)
    steps = (
        OpStep(
            "key-copy",
            writes=((x, "key", yf.key),),
            footprint=(x, y),
            estimator="complex",
            pivot=xf.key,
            release_hi=yf.key,
        ),
        OpStep(
            "del-swap",
            writes=((x, "del", yf.deleted), (y, "del", True)),
            footprint=(x, y),
        ),
        OpStep(
            "unlink-succ",
            writes=((p, "left", yf.right),),
            footprint=(p, y),
            estimator="simple",
        ),
    )
    heap = h
    for step in steps:
        heap = apply_step(heap, step)
    return OpResult(heap, True, steps)


def _rotate(h: Heap, x: NodeId) -> OpResult:
    y = h.get(x).left
    if y is None:
        return OpResult(h, SKIPPED, ())
    z = h.get(y).left
    if z is None:
        return OpResult(h, SKIPPED, ())
    yf, zf = h.get(y), h.get(z)
    c = h.fresh_id()
    steps = (
        OpStep(
            "rotate-alloc-duplicate",
            writes=(),
            footprint=(c,),
            alloc=(
                c,
                NodeFields(
                    key=yf.key,
                    left=zf.right,
                    right=yf.right,
                    deleted=yf.deleted,
                    dup="right",
                ),
            ),
        ),
        OpStep("rotate-attach", writes=((z, "right", c),), footprint=(x, y, z, c)),
        OpStep(
            "rotate-swing",
            writes=((x, "left", z), (c, "dup", "no")),
            footprint=(x, y, z, c),
        ),
        OpStep("rotate-retire", writes=((y, "del", True),), footprint=(y,)),
    )
    heap = h
    for step in steps:
        heap = apply_step(heap, step)
    return OpResult(heap, True, steps)


# ---------------------------------------------------------------- JSON


def heap_from_json(raw: Any) -> Heap:
    """Decode {"root": id, "nodes": [{"id", "key", "left", "right", "del", "dup"}]}."""
    if not isinstance(raw, dict) or "root" not in raw or "nodes" not in raw:
        raise InputError("heap file needs root and nodes")
    nodes: dict[NodeId, NodeFields] = {}
    for entry in raw["nodes"]:
        if not isinstance(entry, dict) or "id" not in entry or "key" not in entry:
            raise InputError(f"bad heap node: {entry!r}")
        nodes[entry["id"]] = NodeFields(
            key=parse_key(entry["key"]),
            left=entry.get("left"),
            right=entry.get("right"),
            deleted=bool(entry.get("del", False)),
            dup=entry.get("dup", "no"),
        )
    try:
        return Heap.of(raw["root"], nodes)
    except InputError:
        raise
    except Exception as exc:
        raise InputError(f"malformed heap file: {exc}") from exc


def heap_to_json(h: Heap) -> dict[str, Any]:
    nodes = []
    for x, f in h.entries:
        entry: dict[str, Any] = {"id": x, "key": key_to_json(f.key)}
        if f.left is not None:
            entry["left"] = f.left
        if f.right is not None:
            entry["right"] = f.right
        if f.deleted:
            entry["del"] = True
        if f.dup != "no":
            entry["dup"] = f.dup
        nodes.append(entry)
    return {"root": h.root, "nodes": nodes}


def op_from_json(raw: Any) -> Op:
    """Decode {"op": name, "key"?: k, "node"?: id}."""
    if not isinstance(raw, dict) or "op" not in raw:
        raise InputError(f"bad operation: {raw!r}")
    name = raw["op"]
    known = {
        "find",
        "contains",
        "insert",
        "delete",
        "find_succ",
        "remove_simple",
        "remove_complex",
        "rotate",
    }
    if name not in known:
        raise InputError(f"unknown operation: {name!r}")
    key = parse_key(raw["key"]) if "key" in raw else None
    return Op(name, key=key, node=raw.get("node"))
