# -*- coding: utf-8 -*-
from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from src.errors import AlignmentError, ConfigError, ConsistencyError
from src.pool_core import (
    BlockId,
    BlockState,
    PoolConfig,
    block_fits,
    block_num,
    block_ptr,
    block_size,
    config_conforms,
    free_list_append,
    free_list_pop_head,
    free_list_remove,
    get_bit,
    init_pool,
    is_memblock,
    level_count,
    level_empty,
    mem_block_addr_valid,
    partner_bits,
    pool_addrspace,
    set_bit,
    validate_config,
    wait_q_append,
    wait_q_remove,
)
from src.safety_checker import check_all_invariants
from src.state import init_kernel_state

from .support import POOL_A, POOL_B


@st.composite
def valid_configs(draw):
    n = draw(st.integers(min_value=1, max_value=4))
    n_levels = draw(st.integers(min_value=1, max_value=3))
    n_max = draw(st.integers(min_value=1, max_value=3))
    buf = 4 * draw(st.integers(min_value=0, max_value=256))
    return PoolConfig(pool_id="R", buf=buf, max_sz=4 * n * 4 ** n_levels, n_max=n_max, n_levels=n_levels)


class TestConfig:
    def test_pool_a_conforms(self):
        assert config_conforms(POOL_A)
        assert validate_config(POOL_A) is POOL_A

    @pytest.mark.parametrize("cfg", [
        PoolConfig("X", 0, 100, 1, 2),
        PoolConfig("X", 0, 256, 0, 2),
        PoolConfig("X", 0, 256, 1, 0),
        PoolConfig("X", -4, 256, 1, 2),
    ])
    def test_invalid_configs_rejected(self, cfg):
        with pytest.raises(ConfigError):
            validate_config(cfg)
        with pytest.raises(ConfigError):
            init_pool(cfg)

    def test_config_error_is_runtime_error(self):
        with pytest.raises(RuntimeError):
            validate_config(PoolConfig("X", 0, 100, 1, 2))

    @given(valid_configs())
    def test_random_valid_configs_initialize_cleanly(self, cfg):
        s = init_kernel_state([cfg], ["t1"])
        rep = check_all_invariants(s)
        assert rep.ok, rep.failures()


class TestArithmetic:
    def test_block_size(self):
        assert block_size(POOL_A, 0) == 256
        assert block_size(POOL_A, 1) == 64
        with pytest.raises(ConfigError):
            block_size(POOL_A, 2)

    def test_block_ptr(self, pool_a):
        assert block_ptr(pool_a, 64, 3) == 192
        assert block_ptr(pool_a, 256, 0) == 0
        assert block_ptr(pool_a, 64, 0) == 0

    def test_block_num(self, pool_a):
        assert block_num(pool_a, 192, 64) == 3
        assert block_num(pool_a, 0, 256) == 0
        with pytest.raises(AlignmentError):
            block_num(pool_a, 100, 64)

    def test_block_fits(self, pool_a):
        assert block_fits(pool_a, 192, 64)
        assert not block_fits(pool_a, 256, 64)
        assert block_fits(pool_a, 0, 256)

    @given(valid_configs(), st.data())
    def test_ptr_num_round_trip(self, cfg, data):
        pool = init_pool(cfg)
        level = data.draw(st.integers(min_value=0, max_value=cfg.n_levels - 1))
        lsz = block_size(cfg, level)
        j = data.draw(st.integers(min_value=0, max_value=level_count(cfg, level) - 1))
        ptr = block_ptr(pool, lsz, j)
        assert block_num(pool, ptr, lsz) == j
        assert block_fits(pool, ptr, lsz)

    @pytest.mark.parametrize("cfg", [POOL_A, POOL_B])
    def test_round_trip_every_block_of_canonical_pools(self, cfg):
        pool = init_pool(cfg)
        for level in range(cfg.n_levels):
            lsz = block_size(cfg, level)
            for j in range(level_count(cfg, level)):
                assert block_num(pool, block_ptr(pool, lsz, j), lsz) == j

    def test_addrspace(self, pool_b):
        assert pool_addrspace(pool_b) == (0, 128)
        assert pool_addrspace(PoolConfig("Z", 256, 64, 2, 2)) == (256, 384)


class TestInit:
    def test_pool_a_layout(self, pool_a):
        assert list(pool_a.levels[0].bits) == [BlockState.FREE]
        assert list(pool_a.levels[0].free_list) == [0]
        assert list(pool_a.levels[1].bits) == [BlockState.NOEXIST] * 4
        assert list(pool_a.levels[1].free_list) == []
        assert list(pool_a.wait_q) == []

    def test_pool_b_free_list(self, pool_b):
        assert list(pool_b.levels[0].free_list) == [0, 64]

    def test_get_bit_and_level_empty(self, pool_a):
        assert get_bit(pool_a, 0, 0) is BlockState.FREE
        assert get_bit(pool_a, 1, 2) is BlockState.NOEXIST
        assert not level_empty(pool_a, 0)
        assert level_empty(pool_a, 1)

    def test_out_of_range_slot(self, pool_a):
        with pytest.raises(ConsistencyError):
            get_bit(pool_a, 1, 4)
        with pytest.raises(ConsistencyError):
            level_empty(pool_a, 2)


class TestBitsAndLists:
    def test_set_bit_is_pointwise(self, pool_a):
        p2 = set_bit(pool_a, 1, 2, BlockState.FREE)
        assert get_bit(p2, 1, 2) is BlockState.FREE
        assert [get_bit(p2, 1, j) for j in (0, 1, 3)] == [BlockState.NOEXIST] * 3
        assert get_bit(pool_a, 1, 2) is BlockState.NOEXIST

    def test_is_memblock(self):
        live = {BlockState.FREE, BlockState.ALLOCATED, BlockState.FREEING, BlockState.ALLOCATING}
        for st_ in BlockState:
            assert is_memblock(st_) == (st_ in live)

    def test_partner_bits(self, pool_a):
        p = pool_a
        for j in range(4):
            p = set_bit(p, 1, j, BlockState.FREE)
        assert partner_bits(p, 1, 2)
        p = set_bit(p, 1, 0, BlockState.ALLOCATED)
        assert not partner_bits(p, 1, 2)

    def test_free_list_distinct(self, pool_a):
        with pytest.raises(ConsistencyError):
            free_list_append(pool_a, 0, 0)

    def test_free_list_remove_absent(self, pool_a):
        with pytest.raises(ConsistencyError):
            free_list_remove(pool_a, 1, 64)

    def test_pop_head(self, pool_b):
        p2, head = free_list_pop_head(pool_b, 0)
        assert head == 0
        assert list(p2.levels[0].free_list) == [64]
        p3, none = free_list_pop_head(pool_b, 1)
        assert none is None
        assert p3 is pool_b

    def test_wait_q(self, pool_a):
        p = wait_q_append(wait_q_append(pool_a, "t1"), "t2")
        assert list(p.wait_q) == ["t1", "t2"]
        assert list(wait_q_remove(p, "t1").wait_q) == ["t2"]


class TestBlockAddr:
    def test_valid_addresses(self, pool_a):
        assert mem_block_addr_valid(pool_a, BlockId("A", 0, 0, 0))
        assert mem_block_addr_valid(pool_a, BlockId("A", 1, 3, 192))

    @pytest.mark.parametrize("b", [
        BlockId("A", 1, 3, 128),
        BlockId("A", 2, 0, 0),
        BlockId("A", 1, 4, 256),
        BlockId("B", 0, 0, 0),
    ])
    def test_invalid_addresses(self, pool_a, b):
        assert not mem_block_addr_valid(pool_a, b)

    def test_block_id_dict(self):
        b = BlockId("A", 1, 2, 128)
        assert BlockId.from_dict(b.to_dict()) == b
