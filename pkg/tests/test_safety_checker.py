# -*- coding: utf-8 -*-
from __future__ import annotations

from dataclasses import replace

from hypothesis import given, settings, strategies as st
from pyrsistent import pvector

from src.pool_core import (
    BlockId,
    BlockState,
    LevelInfo,
    PoolConfig,
    free_list_append,
    free_list_remove,
    init_pool,
    set_bit,
    wait_q_append,
)
from src.safety_checker import (
    CHECK_NAMES,
    check_all_invariants,
    check_inv_aux_vars,
    check_inv_bitmap,
    check_inv_bitmap_bounds,
    check_inv_freelist,
    check_inv_mempool_info,
    check_inv_not4free,
    check_inv_pools_notoverlap,
    check_inv_thd_waitq,
    check_mem_part,
    check_theorem1,
    inv,
    partition_oracle,
    theorem1_holds,
)
from src.state import ThreadState, init_kernel_state

from .support import POOL_A, POOL_B, alloc, free, make_kernel, step_thread

F, A, D, N = BlockState.FREE, BlockState.ALLOCATED, BlockState.DIVIDED, BlockState.NOEXIST

POOL_B_HIGH = PoolConfig("B", 256, 64, 2, 2)


def state_a(*threads: str):
    return init_kernel_state([POOL_A], threads or ("t1", "t2"))


def with_bits(s, pid, level, bits, free_list=()):
    pool = s.pool(pid)
    lv = LevelInfo(bits=pvector(bits), free_list=pvector(free_list))
    return s.with_pool(replace(pool, levels=pool.levels.set(level, lv)))


class TestFreshState:
    def test_all_checks_pass(self):
        rep = check_all_invariants(state_a())
        assert rep.ok
        assert set(rep.verdicts) == set(CHECK_NAMES)
        assert inv(state_a())

    def test_pool_b_level0_all_free_is_fine(self):
        s = init_kernel_state([POOL_B], ["t1"])
        assert check_inv_not4free(s).ok
        assert check_mem_part(s).ok


class TestBitmap:
    def test_divided_root_with_free_children(self):
        s = with_bits(state_a(), "A", 0, [D])
        s = with_bits(s, "A", 1, [F, F, F, F], [0, 64, 128, 192])
        assert check_inv_bitmap(s).ok
        v = check_inv_not4free(s)
        assert not v.ok
        assert (v.witness["level"], v.witness["block"]) == (1, 0)

    def test_physical_child_of_physical_block(self):
        s = with_bits(state_a(), "A", 1, [F, N, N, N], [0])
        v = check_inv_bitmap(s)
        assert not v.ok
        assert (v.witness["pool"], v.witness["level"], v.witness["block"]) == ("A", 1, 0)

    def test_divided_without_children(self):
        s = with_bits(state_a(), "A", 0, [D])
        assert not check_inv_bitmap(s).ok
        assert not check_mem_part(s).ok

    def test_bounds(self):
        v0, vn = check_inv_bitmap_bounds(state_a())
        assert v0.ok and vn.ok

        s = with_bits(state_a(), "A", 0, [N], [])
        v0, _ = check_inv_bitmap_bounds(s)
        assert not v0.ok and v0.witness["level"] == 0

        s = state_a().with_pool(set_bit(init_pool(POOL_A), 1, 2, D))
        _, vn = check_inv_bitmap_bounds(s)
        assert not vn.ok and vn.witness["block"] == 2

    def test_one_allocated_quarter_is_not_coalescible(self):
        s = with_bits(state_a(), "A", 0, [D])
        s = with_bits(s, "A", 1, [A, F, F, F], [64, 128, 192])
        assert check_inv_not4free(s).ok
        assert check_all_invariants(s).ok


class TestMempoolInfo:
    def test_pool_a(self):
        assert check_inv_mempool_info(state_a()).ok

    def test_non_conforming_size(self):
        bad = replace(init_pool(POOL_A), config=PoolConfig("A", 0, 100, 1, 2))
        v = check_inv_mempool_info(state_a().with_pool(bad))
        assert not v.ok and v.witness["pool"] == "A"

    def test_truncated_levels(self):
        pool = init_pool(POOL_A)
        v = check_inv_mempool_info(state_a().with_pool(replace(pool, levels=pool.levels[:1])))
        assert not v.ok


class TestFreeList:
    def test_free_block_missing_from_list(self):
        s = state_a().with_pool(free_list_remove(init_pool(POOL_A), 0, 0))
        v = check_inv_freelist(s)
        assert not v.ok
        assert (v.witness["level"], v.witness["block"]) == (0, 0)

    def test_misaligned_entry(self):
        s = state_a().with_pool(free_list_append(init_pool(POOL_A), 1, 100))
        v = check_inv_freelist(s)
        assert not v.ok
        assert v.witness["addr"] == 100


class TestPools:
    def test_disjoint_windows(self):
        assert check_inv_pools_notoverlap(init_kernel_state([POOL_A, POOL_B_HIGH], ["t1"])).ok
        assert check_inv_pools_notoverlap(state_a()).ok

    def test_overlap(self):
        v = check_inv_pools_notoverlap(init_kernel_state([POOL_A, POOL_B], ["t1"]))
        assert not v.ok
        assert {v.witness["pool"], v.witness["other"]} == {"A", "B"}


class TestWaitQueues:
    def test_blocked_and_queued(self):
        s = state_a().with_thd_state("t2", ThreadState.BLOCKED)
        s = s.with_pool(wait_q_append(s.pool("A"), "t2"))
        assert check_inv_thd_waitq(s).ok

    def test_blocked_but_not_queued(self):
        v = check_inv_thd_waitq(state_a().with_thd_state("t2", ThreadState.BLOCKED))
        assert not v.ok and v.witness["thread"] == "t2"

    def test_queued_on_two_pools(self):
        s = init_kernel_state([POOL_A, POOL_B_HIGH], ["t1", "t2"]).with_thd_state("t2", ThreadState.BLOCKED)
        s = s.with_pool(wait_q_append(s.pool("A"), "t2"))
        s = s.with_pool(wait_q_append(s.pool("B"), "t2"))
        v = check_inv_thd_waitq(s)
        assert not v.ok and v.witness["thread"] == "t2"

    def test_ready_thread_in_queue(self):
        s = state_a()
        s = s.with_pool(wait_q_append(s.pool("A"), "t1"))
        assert not check_inv_thd_waitq(s).ok


class TestAuxVars:
    def test_unowned_freeing_bit(self):
        s = state_a().with_pool(set_bit(init_pool(POOL_A), 0, 0, BlockState.FREEING))
        v = check_inv_aux_vars(s)
        assert not v.ok
        assert (v.witness["level"], v.witness["block"]) == (0, 0)

    def test_two_threads_on_one_block(self):
        node = BlockId("A", 0, 0, 0)
        s = state_a().with_pool(set_bit(init_pool(POOL_A), 0, 0, BlockState.ALLOCATING))
        s = s.with_locals("t1", allocating_node=node).with_locals("t2", allocating_node=node)
        v = check_inv_aux_vars(s)
        assert not v.ok
        assert "t1" in v.witness["thread"] and "t2" in v.witness["thread"]

    def test_node_pointing_at_wrong_bit(self):
        s = state_a().with_locals("t1", freeing_node=BlockId("A", 0, 0, 0))
        assert not check_inv_aux_vars(s).ok

    def test_every_state_of_a_release_keeps_the_pairing(self):
        kernel, s = make_kernel({"t1": [alloc("A", 50), free(0)]})
        seen = 0
        while not kernel.services.all_done(s):
            s = step_thread(kernel, s, "t1")
            rep = check_all_invariants(s)
            assert rep.ok, rep.failures()
            seen += 1
        assert seen > 10


class TestMemPart:
    def test_split_root_is_covered_by_quarters(self):
        s = with_bits(state_a(), "A", 0, [D])
        s = with_bits(s, "A", 1, [A, F, A, F], [64, 192])
        assert check_mem_part(s).ok
        assert partition_oracle(s).ok

    def test_double_cover(self):
        s = with_bits(state_a(), "A", 1, [F, N, N, N], [0])
        v = check_mem_part(s)
        assert not v.ok
        assert v.witness["addr"] == 0 and v.witness["covers"] == 2
        assert not partition_oracle(s).ok

    @settings(max_examples=300, deadline=None)
    @given(
        st.lists(st.sampled_from(list(BlockState)), min_size=2, max_size=2),
        st.lists(st.sampled_from(list(BlockState)), min_size=8, max_size=8),
    )
    def test_scan_agrees_with_interval_oracle(self, level0, level1):
        s = init_kernel_state([POOL_B], ["t1"])
        s = with_bits(s, "B", 0, level0)
        s = with_bits(s, "B", 1, level1)
        assert check_mem_part(s).ok == partition_oracle(s).ok


class TestTheorem1:
    def test_fresh_state(self):
        assert theorem1_holds(state_a()).ok

    def test_vacuous_when_bitmap_is_malformed(self):
        s = with_bits(state_a(), "A", 1, [F, N, N, N], [0])
        assert not check_mem_part(s).ok
        assert theorem1_holds(s).ok
        assert check_theorem1([state_a(), s]).ok
