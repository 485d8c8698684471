# -*- coding: utf-8 -*-
"""
pool_core.py
Quad-buddy pool data model and primitives.

- アドレスは pool 相対ではなく buf を含む絶対 byte 値（buf は scenario ロード時に割当）
- 全ての操作は値として新しい MemPool を返す（pyrsistent の persistent vector を使う）
- 指定していないスロットは一切変わらない（setter は pointwise）
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Optional, Tuple

from pyrsistent import PVector, pvector

from .errors import AlignmentError, ConfigError, ConsistencyError


class BlockState(str, Enum):
    ALLOCATED = "ALLOCATED"
    FREE = "FREE"
    DIVIDED = "DIVIDED"
    NOEXIST = "NOEXIST"
    FREEING = "FREEING"
    ALLOCATING = "ALLOCATING"


MEMBLOCK_STATES = frozenset(
    {BlockState.ALLOCATED, BlockState.FREE, BlockState.FREEING, BlockState.ALLOCATING}
)


@dataclass(frozen=True)
class PoolConfig:
    pool_id: str
    buf: int
    max_sz: int
    n_max: int
    n_levels: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "pool_id": self.pool_id,
            "buf": self.buf,
            "max_sz": self.max_sz,
            "n_max": self.n_max,
            "n_levels": self.n_levels,
        }


@dataclass(frozen=True)
class LevelInfo:
    bits: PVector
    free_list: PVector


@dataclass(frozen=True)
class MemPool:
    config: PoolConfig
    levels: PVector
    wait_q: PVector

    def to_dict(self) -> Dict[str, object]:
        return {
            "config": self.config.to_dict(),
            "levels": [
                {"bits": [b.value for b in lv.bits], "free_list": list(lv.free_list)}
                for lv in self.levels
            ],
            "wait_q": list(self.wait_q),
        }


@dataclass(frozen=True, order=True)
class BlockId:
    pool: str
    level: int
    block: int
    data: int

    def to_dict(self) -> Dict[str, object]:
        return {"pool": self.pool, "level": self.level, "block": self.block, "data": self.data}

    @staticmethod
    def from_dict(d: Dict[str, object]) -> "BlockId":
        return BlockId(str(d["pool"]), int(d["level"]), int(d["block"]), int(d["data"]))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def config_conforms(cfg: PoolConfig) -> bool:
    """max_sz = (4*n) * 4^n_levels for some n > 0, n_max > 0, n_levels > 0."""
    if cfg.n_max <= 0 or cfg.n_levels <= 0 or cfg.max_sz <= 0:
        return False
    return cfg.max_sz % (4 * 4 ** cfg.n_levels) == 0


def validate_config(cfg: PoolConfig) -> PoolConfig:
    if cfg.buf < 0:
        raise ConfigError(f"pool {cfg.pool_id}: buf must be >= 0 (got {cfg.buf})")
    if cfg.n_max <= 0:
        raise ConfigError(f"pool {cfg.pool_id}: n_max must be > 0 (got {cfg.n_max})")
    if cfg.n_levels <= 0:
        raise ConfigError(f"pool {cfg.pool_id}: n_levels must be > 0 (got {cfg.n_levels})")
    if not config_conforms(cfg):
        raise ConfigError(
            f"pool {cfg.pool_id}: max_sz {cfg.max_sz} is not (4*n)*4^{cfg.n_levels} for any n > 0"
        )
    return cfg


def level_count(cfg: PoolConfig, level: int) -> int:
    return cfg.n_max * 4 ** level


# ---------------------------------------------------------------------------
# address arithmetic
# ---------------------------------------------------------------------------

def align4(x: int) -> int:
    return (x + 3) // 4 * 4


def block_size(cfg: PoolConfig, level: int) -> int:
    if level < 0 or level >= cfg.n_levels:
        raise ConfigError(f"pool {cfg.pool_id}: level {level} out of range [0, {cfg.n_levels})")
    return cfg.max_sz // 4 ** level


def block_ptr(pool: MemPool, lsz: int, block: int) -> int:
    return pool.config.buf + lsz * block


def block_num(pool: MemPool, data: int, lsz: int) -> int:
    off = data - pool.config.buf
    if off < 0 or off % lsz != 0:
        raise AlignmentError(f"address {data} is not aligned to {lsz} in pool {pool.config.pool_id}")
    return off // lsz


def block_fits(pool: MemPool, ptr: int, sz: int) -> bool:
    cfg = pool.config
    return (ptr - cfg.buf) + sz <= cfg.n_max * cfg.max_sz


def pool_addrspace(pool_or_cfg) -> Tuple[int, int]:
    cfg = pool_or_cfg.config if isinstance(pool_or_cfg, MemPool) else pool_or_cfg
    return cfg.buf, cfg.buf + cfg.n_max * cfg.max_sz


def mem_block_addr_valid(pool: MemPool, b: BlockId) -> bool:
    """
    Guard of the release service: level/block in range and data consistent with block_ptr.
    """
    cfg = pool.config
    if b.pool != cfg.pool_id:
        return False
    if b.level < 0 or b.level >= cfg.n_levels:
        return False
    if b.block < 0 or b.block >= level_count(cfg, b.level):
        return False
    return b.data == block_ptr(pool, align4(cfg.max_sz) // 4 ** b.level, b.block)


# ---------------------------------------------------------------------------
# bitmap / free list
# ---------------------------------------------------------------------------

def _check_level(pool: MemPool, level: int) -> LevelInfo:
    if level < 0 or level >= len(pool.levels):
        raise ConsistencyError(f"pool {pool.config.pool_id}: level {level} out of range")
    return pool.levels[level]


def _check_slot(pool: MemPool, level: int, block: int) -> LevelInfo:
    lv = _check_level(pool, level)
    if block < 0 or block >= len(lv.bits):
        raise ConsistencyError(
            f"pool {pool.config.pool_id}: block {block} out of range at level {level}"
        )
    return lv


def is_memblock(st: BlockState) -> bool:
    return st in MEMBLOCK_STATES


def get_bit(pool: MemPool, level: int, block: int) -> BlockState:
    return _check_slot(pool, level, block).bits[block]


def set_bit(pool: MemPool, level: int, block: int, st: BlockState) -> MemPool:
    lv = _check_slot(pool, level, block)
    if lv.bits[block] is st:
        return pool
    lv2 = replace(lv, bits=lv.bits.set(block, st))
    return replace(pool, levels=pool.levels.set(level, lv2))


def level_empty(pool: MemPool, level: int) -> bool:
    return len(_check_level(pool, level).free_list) == 0


def partner_bits(pool: MemPool, level: int, block: int) -> bool:
    """True iff the four aligned siblings of `block` are all FREE."""
    lv = _check_slot(pool, level, block)
    base = (block // 4) * 4
    return all(lv.bits[base + k] is BlockState.FREE for k in range(4))


def free_list_append(pool: MemPool, level: int, addr: int) -> MemPool:
    lv = _check_level(pool, level)
    if addr in lv.free_list:
        raise ConsistencyError(
            f"pool {pool.config.pool_id}: address {addr} already on level-{level} free list"
        )
    lv2 = replace(lv, free_list=lv.free_list.append(addr))
    return replace(pool, levels=pool.levels.set(level, lv2))


def free_list_remove(pool: MemPool, level: int, addr: int) -> MemPool:
    lv = _check_level(pool, level)
    if addr not in lv.free_list:
        raise ConsistencyError(
            f"pool {pool.config.pool_id}: address {addr} not on level-{level} free list"
        )
    lv2 = replace(lv, free_list=lv.free_list.remove(addr))
    return replace(pool, levels=pool.levels.set(level, lv2))


def free_list_pop_head(pool: MemPool, level: int) -> Tuple[MemPool, Optional[int]]:
    lv = _check_level(pool, level)
    if not lv.free_list:
        return pool, None
    head = lv.free_list[0]
    lv2 = replace(lv, free_list=lv.free_list.delete(0))
    return replace(pool, levels=pool.levels.set(level, lv2)), head


def wait_q_append(pool: MemPool, thread: str) -> MemPool:
    return replace(pool, wait_q=pool.wait_q.append(thread))


def wait_q_remove(pool: MemPool, thread: str) -> MemPool:
    return replace(pool, wait_q=pvector(x for x in pool.wait_q if x != thread))


# ---------------------------------------------------------------------------
# init
# ---------------------------------------------------------------------------

def init_pool(cfg: PoolConfig) -> MemPool:
    """
    Level 0: every block FREE and on the free list in index order.
    Other levels: all NOEXIST, empty free list.
    """
    validate_config(cfg)
    levels = []
    for i in range(cfg.n_levels):
        n = level_count(cfg, i)
        if i == 0:
            bits = pvector([BlockState.FREE] * n)
            fl = pvector(cfg.buf + cfg.max_sz * j for j in range(n))
        else:
            bits = pvector([BlockState.NOEXIST] * n)
            fl = pvector()
        levels.append(LevelInfo(bits=bits, free_list=fl))
    return MemPool(config=cfg, levels=pvector(levels), wait_q=pvector())
