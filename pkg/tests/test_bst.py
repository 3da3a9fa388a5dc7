"""Heap model, derived flow graphs, tree invariants, and the eight operations."""

from __future__ import annotations

import pytest

from flowcheck.bst import (
    EXTERNAL_SOURCE,
    Heap,
    NodeFields,
    Op,
    SKIPPED,
    apply_step,
    check_inv,
    decomp,
    derive_flowgraph,
    derived_quantities,
    find,
    find_succ,
    heap_from_json,
    heap_to_json,
    op_from_json,
    run_op,
    singleton_heap,
)
from flowcheck.errors import ContractViolation, InputError
from flowcheck.keyspace import NEG_INF, AtomUniverse, FlowValue
from helpers import (
    iv,
    tree_universe,
    worked_heap_pre,
    worked_tree_insets_post,
    worked_tree_insets_pre,
    worked_tree_post,
    worked_tree_pre,
)

# ---------------------------------------------------------------- derivation


def test_derived_graph_matches_worked_tree():
    assert derive_flowgraph(worked_heap_pre()) == worked_tree_pre()


def test_derived_insets_match_annotations():
    g = derive_flowgraph(worked_heap_pre())
    assert g.flow == worked_tree_insets_pre(g.universe)


def test_duplicate_mark_suppresses_edge():
    h = worked_heap_pre().with_field(8, "dup", "left")
    g = derive_flowgraph(h)
    assert g.edge_fn(8, 6).kind == "bot"
    assert g.edge_fn(8, 9).kind == "filter"


def test_equal_children_derive_const_top_edge():
    h = Heap.of(
        0,
        {
            0: NodeFields(key=NEG_INF, right=1),
            1: NodeFields(key=4, left=2, right=2),
            2: NodeFields(key=8),
        },
    )
    g = derive_flowgraph(h, AtomUniverse.from_endpoints((4, 8)))
    assert g.edge_fn(1, 2).kind == "top"
    assert g.flow[2].is_top


def test_key_off_grid_rejected():
    h = worked_heap_pre()
    with pytest.raises(InputError):
        derive_flowgraph(h, AtomUniverse.from_endpoints((1, 4)))


def test_default_inflow_targets_root_with_full_range():
    g = derive_flowgraph(singleton_heap())
    assert g.inflow_value(EXTERNAL_SOURCE, 0).bits == g.universe.full_bits


# ---------------------------------------------------------------- quantities


def test_keyset_of_interior_node_is_point():
    h = worked_heap_pre()
    g = derive_flowgraph(h)
    q = derived_quantities(h, g, g.flow, 8)
    assert q.keyset == iv(g.universe, 8, 8, False, False)
    assert q.keyset.contains_key(8)


def test_keyset_of_left_child_holds_low_range():
    h = worked_heap_pre()
    g = derive_flowgraph(h)
    q = derived_quantities(h, g, g.flow, 1)
    # node 1 keeps (-inf, 4) minus its only outset (1, 4)
    assert q.keyset == iv(g.universe, NEG_INF, 1, False, False)


def test_contents_empty_for_deleted_and_root():
    h = worked_heap_pre()
    g = derive_flowgraph(h)
    assert derived_quantities(h, g, g.flow, 4).contents == frozenset()
    assert derived_quantities(h, g, g.flow, 0).contents == frozenset()
    assert derived_quantities(h, g, g.flow, 6).contents == {6}


def test_keyset_empty_when_inset_bot():
    h = worked_heap_pre()
    post = run_op(h, Op.remove_complex(), seed=_seed_for(h, 4)).heap
    g = derive_flowgraph(post)
    q = derived_quantities(post, g, g.flow, 6)
    assert g.flow[6].is_bot
    assert q.keyset.is_set and q.keyset.bits == 0


# ---------------------------------------------------------------- invariants


def test_worked_tree_satisfies_invariant():
    rep = check_inv(worked_heap_pre())
    assert rep.ok
    assert rep.contents == {1, 3, 6, 7, 8, 9, 15, 18}


def test_invariant_flags_duplicate_mark():
    rep = check_inv(worked_heap_pre().with_field(6, "dup", "right"))
    assert (6, "duplicate-mark") in rep.violations


def test_invariant_flags_unreached_live_node():
    h = worked_heap_pre().add_node(99, NodeFields(key=9))
    rep = check_inv(h, universe=tree_universe())
    assert (99, "contents-outside-keyset") in rep.violations


def test_invariant_tolerates_unreached_deleted_node():
    h = worked_heap_pre().add_node(99, NodeFields(key=9, deleted=True))
    assert check_inv(h, universe=tree_universe()).ok


def test_invariant_flags_top_inset():
    h = Heap.of(
        0,
        {
            0: NodeFields(key=NEG_INF, right=1),
            1: NodeFields(key=4, left=2, right=2),
            2: NodeFields(key=8),
        },
    )
    rep = check_inv(h)
    assert (2, "inset-top") in rep.violations


def test_invariant_flags_bad_root():
    rep = check_inv(worked_heap_pre().with_field(0, "del", True))
    assert (0, "root-deleted") in rep.violations
    rep = check_inv(worked_heap_pre().with_field(0, "key", 1))
    assert any(c == "root-key-not-sentinel" for _, c in rep.violations)


def test_invariant_flags_key_outside_inset():
    # node 3 sits on 4's low side but claims key 15
    h = worked_heap_pre().with_field(3, "key", 15)
    rep = check_inv(h, universe=tree_universe())
    assert (3, "key-outside-inset") in rep.violations


def test_invariant_region_restricted_to_given_nodes():
    h = worked_heap_pre().with_field(6, "dup", "right")
    rep = check_inv(h, region=(1, 3))
    assert rep.ok
    assert rep.contents == {1, 3}


# ---------------------------------------------------------------- decomposition


def test_decomp_accepts_keyset_disjoint_split():
    rep = decomp(worked_heap_pre(), (0, 4, 1, 3), (15, 8, 6, 7, 9, 18))
    assert rep.ok
    assert rep.contents1 == {1, 3}
    assert rep.contents2 == {6, 7, 8, 9, 15, 18}


def test_decomp_requires_partition():
    with pytest.raises(ContractViolation):
        decomp(worked_heap_pre(), (0, 4), (15, 8))


def test_decomp_flags_nondecreasing_edge():
    h = Heap.of(
        0,
        {
            0: NodeFields(key=NEG_INF, right=1),
            1: NodeFields(key=4, left=2, right=2),
            2: NodeFields(key=8),
        },
    )
    rep = decomp(h, (0, 1), (2,))
    assert "edge-not-decreasing" in rep.failures


# ---------------------------------------------------------------- search


def test_find_follows_corrected_branching():
    h = worked_heap_pre()
    assert find(h, 3) == (1, 3)
    assert find(h, 6) == (8, 6)
    assert find(h, 5) == (6, None)
    assert find(h, 4) == (0, 4)


def test_find_succ_walks_leftmost():
    h = worked_heap_pre()
    assert find_succ(h, 4) == (8, 6)
    assert find_succ(h, 1) is None
    assert find_succ(h, 3) is None


# ---------------------------------------------------------------- user operations


def test_insert_into_fresh_tree():
    out = run_op(singleton_heap(), Op.insert(5))
    assert out.result is True
    assert out.heap.get(0).right == 1
    assert out.heap.get(1).key == 5
    assert [s.label for s in out.trace] == ["insert-alloc", "insert-link"]


def test_insert_attaches_on_search_side():
    h = worked_heap_pre()
    out = run_op(h, Op.insert(5))
    z = out.heap.get(6).left
    assert z is not None and out.heap.get(z).key == 5


def test_insert_revives_deleted_node():
    h = worked_heap_pre()
    out = run_op(h, Op.insert(4))
    assert out.result is True
    assert not out.heap.get(4).deleted
    assert [s.label for s in out.trace] == ["insert-revive"]


def test_insert_present_key_returns_false():
    out = run_op(worked_heap_pre(), Op.insert(8))
    assert out.result is False
    assert out.heap == worked_heap_pre()


def test_delete_marks_node():
    out = run_op(worked_heap_pre(), Op.delete(8))
    assert out.result is True
    assert out.heap.get(8).deleted
    assert run_op(out.heap, Op.delete(8)).result is False


def test_delete_absent_key_returns_false():
    assert run_op(worked_heap_pre(), Op.delete(5)).result is False


def test_contains_respects_deletion_mark():
    h = worked_heap_pre()
    assert run_op(h, Op.contains(8)).result is True
    assert run_op(h, Op.contains(4)).result is False
    assert run_op(h, Op.contains(5)).result is False


def test_user_ops_preserve_invariant_and_model():
    h = worked_heap_pre()
    model = {1, 3, 6, 7, 8, 9, 15, 18}
    for op, change in (
        (Op.insert(10), True),
        (Op.delete(3), True),
        (Op.insert(4), True),
        (Op.delete(10), True),
        (Op.insert(7), False),
    ):
        out = run_op(h, op)
        assert out.result is change
        if op.name == "insert" and change:
            model.add(op.key)
        if op.name == "delete" and change:
            model.remove(op.key)
        h = out.heap
        rep = check_inv(h)
        assert rep.ok
        assert rep.contents == model


# ---------------------------------------------------------------- maintenance


def _seed_for(h: Heap, target: int) -> int:
    """Smallest seed whose reachable pick lands on target."""
    from flowcheck.bst import _pick_reachable

    for seed in range(500):
        if _pick_reachable(h, seed) == target:
            return seed
    raise AssertionError(f"no seed selects node {target}")


def test_remove_simple_unlinks_marked_left_child():
    # 8's left child 6 marked; 6 has only a right child, which gets promoted
    h = run_op(worked_heap_pre(), Op.delete(6)).heap
    pre = check_inv(h)
    out = run_op(h, Op.remove_simple(), seed=_seed_for(h, 8))
    assert out.result is True
    assert out.heap.get(8).left == 7
    assert out.trace[0].estimator == "simple"
    post = check_inv(out.heap)
    assert post.ok
    assert post.contents == pre.contents


def test_remove_simple_skips_unmarked_child():
    h = worked_heap_pre()
    out = run_op(h, Op.remove_simple(), seed=_seed_for(h, 15))
    assert out.result == SKIPPED
    assert out.heap == h


def test_remove_simple_skips_two_child_target():
    h = run_op(worked_heap_pre(), Op.delete(8)).heap
    out = run_op(h, Op.remove_simple(), seed=_seed_for(h, 15))
    assert out.result == SKIPPED


def test_remove_complex_reproduces_worked_removal():
    h = worked_heap_pre()
    out = run_op(h, Op.remove_complex(), seed=_seed_for(h, 4))
    assert out.result is True
    g = derive_flowgraph(out.heap, tree_universe())
    assert g == worked_tree_post()
    assert g.flow == worked_tree_insets_post(g.universe)
    assert [s.label for s in out.trace] == ["key-copy", "del-swap", "unlink-succ"]


def test_remove_complex_preserves_contents_and_invariant():
    h = worked_heap_pre()
    pre = check_inv(h)
    out = run_op(h, Op.remove_complex(), seed=_seed_for(h, 4))
    post = check_inv(out.heap, universe=tree_universe())
    assert post.ok
    assert post.contents == pre.contents


def test_remove_complex_trace_carries_estimator_hints():
    out = run_op(worked_heap_pre(), Op.remove_complex(), seed=_seed_for(worked_heap_pre(), 4))
    copy, swap, unlink = out.trace
    assert copy.estimator == "complex" and copy.pivot == 4 and copy.release_hi == 6
    assert swap.estimator == "eq"
    assert unlink.estimator == "simple" and unlink.footprint == (8, 6)


def test_remove_complex_skips_undeleted_or_leafish_targets():
    h = worked_heap_pre()
    assert run_op(h, Op.remove_complex(), seed=_seed_for(h, 8)).result == SKIPPED
    h2 = run_op(h, Op.delete(1)).heap
    assert run_op(h2, Op.remove_complex(), seed=_seed_for(h2, 1)).result == SKIPPED


def test_remove_complex_skips_when_successor_chain_missing():
    # 15 marked but its right child 18 has no left chain
    h = Heap.of(
        0,
        {
            0: NodeFields(key=NEG_INF, right=15),
            15: NodeFields(key=15, left=8, right=18, deleted=True),
            8: NodeFields(key=8),
            18: NodeFields(key=18),
        },
    )
    assert run_op(h, Op.remove_complex(), seed=_seed_for(h, 15)).result == SKIPPED


def test_rotate_duplicates_then_swings():
    # x=15 with left 8, grandchild 6: rotation lifts 8's subtree shape
    h = worked_heap_pre()
    pre = check_inv(h)
    out = run_op(h, Op.rotate(), seed=_seed_for(h, 15))
    assert out.result is True
    c = out.heap.get(6).right
    assert c is not None
    cf = out.heap.get(c)
    assert cf.key == 8 and cf.dup == "no" and cf.right == 9 and cf.left == 7
    assert out.heap.get(15).left == 6
    assert out.heap.get(8).deleted
    post = check_inv(out.heap, universe=tree_universe())
    assert post.ok
    assert post.contents == pre.contents


def test_rotate_skips_without_grandchild():
    h = worked_heap_pre()
    assert run_op(h, Op.rotate(), seed=_seed_for(h, 1)).result == SKIPPED
    assert run_op(h, Op.rotate(), seed=_seed_for(h, 3)).result == SKIPPED


def test_maintenance_pick_is_seed_deterministic():
    h = run_op(worked_heap_pre(), Op.delete(8)).heap
    a = run_op(h, Op.remove_complex(), seed=7)
    b = run_op(h, Op.remove_complex(), seed=7)
    assert a.heap == b.heap and a.result == b.result


def test_trace_replay_matches_returned_heap():
    h = worked_heap_pre()
    out = run_op(h, Op.remove_complex(), seed=_seed_for(h, 4))
    replayed = h
    for step in out.trace:
        replayed = apply_step(replayed, step)
    assert replayed == out.heap


# ---------------------------------------------------------------- JSON


def test_heap_json_round_trip():
    h = worked_heap_pre()
    assert heap_from_json(heap_to_json(h)) == h


def test_heap_json_rejects_garbage():
    with pytest.raises(InputError):
        heap_from_json({"nodes": []})
    with pytest.raises(InputError):
        heap_from_json({"root": 0, "nodes": [{"id": 0}]})


def test_op_json_decoding():
    assert op_from_json({"op": "insert", "key": 5}) == Op.insert(5)
    assert op_from_json({"op": "remove_complex"}) == Op.remove_complex()
    with pytest.raises(InputError):
        op_from_json({"op": "defrag"})
