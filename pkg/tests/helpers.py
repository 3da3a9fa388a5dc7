"""Shared fixtures: the worked nine-node search-tree graph and its known insets."""

from __future__ import annotations

from flowcheck.keyspace import (
    NEG_INF,
    POS_INF,
    AtomUniverse,
    FlowValue,
    interval_bits,
)
from flowcheck.flowgraph import EdgeFn, FlowGraph, make_graph

TREE_KEYS = (1, 3, 4, 6, 7, 8, 9, 15, 18)
ROOT = 0
EXT = -1


def tree_universe() -> AtomUniverse:
    return AtomUniverse.from_endpoints(TREE_KEYS)


def iv(u: AtomUniverse, lo, hi, lo_open=True, hi_open=True) -> FlowValue:
    return FlowValue.from_bits(u, interval_bits(u, lo, hi, lo_open, hi_open))


def below(u: AtomUniverse, k: int) -> EdgeFn:
    """Left-child edge function: intersect with [-inf, k)."""
    return EdgeFn.filter(interval_bits(u, NEG_INF, k, False, True))


def above(u: AtomUniverse, k: int) -> EdgeFn:
    """Right-child edge function: intersect with (k, inf]."""
    return EdgeFn.filter(interval_bits(u, k, POS_INF, True, False))


def worked_tree_pre() -> FlowGraph:
    """The worked nine-node tree before maintenance; node ids equal keys, root id 0.

    Root is the infinity sentinel holding the tree under its left pointer, so
    its left edge filters with [-inf, inf), which covers the whole atom grid.
    """
    u = tree_universe()
    edges = {
        (ROOT, 4): EdgeFn.filter(u.full_bits),
        (4, 1): below(u, 4),
        (4, 15): above(u, 4),
        (1, 3): above(u, 1),
        (15, 8): below(u, 15),
        (15, 18): above(u, 15),
        (8, 6): below(u, 8),
        (8, 9): above(u, 8),
        (6, 7): above(u, 6),
    }
    inflow = {(EXT, ROOT): FlowValue.from_bits(u, u.full_bits)}
    return make_graph(u, (ROOT,) + TREE_KEYS, edges, inflow)


def worked_tree_post() -> FlowGraph:
    """The same tree after the two-step remove: key 4 overwritten by 6, node 6 unlinked."""
    u = tree_universe()
    edges = {
        (ROOT, 4): EdgeFn.filter(u.full_bits),
        (4, 1): below(u, 6),
        (4, 15): above(u, 6),
        (1, 3): above(u, 1),
        (15, 8): below(u, 15),
        (15, 18): above(u, 15),
        (8, 7): below(u, 8),
        (8, 9): above(u, 8),
        (6, 7): above(u, 6),
    }
    inflow = {(EXT, ROOT): FlowValue.from_bits(u, u.full_bits)}
    return make_graph(u, (ROOT,) + TREE_KEYS, edges, inflow)


def worked_heap_pre() -> "Heap":
    """Heap whose derived graph is worked_tree_pre; node 4 is marked for removal."""
    from flowcheck.bst import Heap, NodeFields

    return Heap.of(
        ROOT,
        {
            ROOT: NodeFields(key=NEG_INF, right=4),
            4: NodeFields(key=4, left=1, right=15, deleted=True),
            1: NodeFields(key=1, right=3),
            3: NodeFields(key=3),
            15: NodeFields(key=15, left=8, right=18),
            8: NodeFields(key=8, left=6, right=9),
            6: NodeFields(key=6, right=7),
            7: NodeFields(key=7),
            9: NodeFields(key=9),
            18: NodeFields(key=18),
        },
    )


def worked_tree_insets_pre(u: AtomUniverse) -> dict[int, FlowValue]:
    full = FlowValue.from_bits(u, u.full_bits)
    return {
        ROOT: full,
        4: full,
        1: iv(u, NEG_INF, 4),
        3: iv(u, 1, 4),
        15: iv(u, 4, POS_INF),
        8: iv(u, 4, 15),
        6: iv(u, 4, 8),
        7: iv(u, 6, 8),
        9: iv(u, 8, 15),
        18: iv(u, 15, POS_INF),
    }


def worked_tree_insets_post(u: AtomUniverse) -> dict[int, FlowValue]:
    out = worked_tree_insets_pre(u)
    out.update(
        {
            1: iv(u, NEG_INF, 6),
            3: iv(u, 1, 6),
            15: iv(u, 6, POS_INF),
            8: iv(u, 6, 15),
            6: FlowValue.bot(u),
        }
    )
    return out
