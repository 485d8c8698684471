# -*- coding: utf-8 -*-
"""
safety_checker.py
Structural invariants of the pools and the memory-partition property.

- 各 check は KernelState -> Verdict の純関数。失敗時は (pool, level, block | addr | thread) の witness 付き
- witness は正準順（pool 登録順 → level → index）で最初の違反
- mem_part は相対アドレス走査、partition_oracle は絶対区間の並び。二重実装で相互検証する
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Tuple

from .pool_core import (
    BlockState,
    MemPool,
    block_ptr,
    config_conforms,
    is_memblock,
    level_count,
    pool_addrspace,
)
from .state import KernelState, ThreadState
from .verdicts import PASS, Verdict

INVARIANT_NAMES: Tuple[str, ...] = (
    "inv_bitmap",
    "inv_bitmap0",
    "inv_bitmapn",
    "inv_mempool_info",
    "inv_bitmap_not4free",
    "inv_bitmap_freelist",
    "inv_pools_notoverlap",
    "inv_thd_waitq",
    "inv_aux_vars",
)
CHECK_NAMES: Tuple[str, ...] = INVARIANT_NAMES + ("mem_part",)


def _pools(s: KernelState) -> Iterable[MemPool]:
    for pid in s.mem_pools:
        if pid in s.mem_pool_info:
            yield s.mem_pool_info[pid]


def _bits(pool: MemPool, level: int):
    if level < 0 or level >= len(pool.levels):
        return ()
    return pool.levels[level].bits


# ---------------------------------------------------------------------------
# per-pool checks (cached on the immutable pool value)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=65536)
def _pool_bitmap(pool: MemPool) -> Verdict:
    pid = pool.config.pool_id
    for i in range(1, len(pool.levels)):
        parents = _bits(pool, i - 1)
        for j, st in enumerate(_bits(pool, i)):
            if j // 4 >= len(parents):
                continue
            parent_divided = parents[j // 4] is BlockState.DIVIDED
            if (st is BlockState.NOEXIST) == parent_divided:
                if parent_divided:
                    detail = "child of a DIVIDED block is NOEXIST"
                elif is_memblock(st):
                    detail = f"{st.value} block whose parent is {parents[j // 4].value}"
                else:
                    detail = f"{st.value} slot whose parent is {parents[j // 4].value}"
                return Verdict.fail(detail, pool=pid, level=i, block=j)
    return PASS


@lru_cache(maxsize=65536)
def _pool_bounds(pool: MemPool) -> Tuple[Verdict, Verdict]:
    pid = pool.config.pool_id
    v0: Verdict = PASS
    vn: Verdict = PASS
    for j, st in enumerate(_bits(pool, 0)):
        if st is BlockState.NOEXIST:
            v0 = Verdict.fail("NOEXIST at level 0", pool=pid, level=0, block=j)
            break
    last = len(pool.levels) - 1
    for j, st in enumerate(_bits(pool, last)):
        if st is BlockState.DIVIDED:
            vn = Verdict.fail("DIVIDED at the deepest level", pool=pid, level=last, block=j)
            break
    return v0, vn


@lru_cache(maxsize=65536)
def _pool_info(pool: MemPool) -> Verdict:
    cfg = pool.config
    pid = cfg.pool_id
    if not config_conforms(cfg):
        return Verdict.fail(
            f"max_sz {cfg.max_sz} / n_max {cfg.n_max} / n_levels {cfg.n_levels} do not conform",
            pool=pid,
        )
    if len(pool.levels) != cfg.n_levels:
        return Verdict.fail(f"{len(pool.levels)} levels, n_levels is {cfg.n_levels}", pool=pid)
    for i, lv in enumerate(pool.levels):
        if len(lv.bits) != level_count(cfg, i):
            return Verdict.fail(
                f"level {i} has {len(lv.bits)} bits, expected {level_count(cfg, i)}", pool=pid, level=i,
            )
    return PASS


@lru_cache(maxsize=65536)
def _pool_not4free(pool: MemPool) -> Verdict:
    pid = pool.config.pool_id
    for i in range(1, len(pool.levels)):
        bits = _bits(pool, i)
        for k in range(0, len(bits) - 3, 4):
            if all(bits[k + d] is BlockState.FREE for d in range(4)):
                return Verdict.fail("four FREE partner blocks not coalesced", pool=pid, level=i, block=k)
    return PASS


@lru_cache(maxsize=65536)
def _pool_freelist(pool: MemPool) -> Verdict:
    cfg = pool.config
    pid = cfg.pool_id
    for i, lv in enumerate(pool.levels):
        lsz = cfg.max_sz // 4 ** i
        n = len(lv.bits)
        seen = set()
        for addr in lv.free_list:
            off = addr - cfg.buf
            if off < 0 or off % lsz != 0 or off // lsz >= n:
                return Verdict.fail(f"free-list entry {addr} is not a level-{i} block address",
                                    pool=pid, level=i, addr=addr)
            if addr in seen:
                return Verdict.fail(f"free-list entry {addr} repeated", pool=pid, level=i, addr=addr)
            seen.add(addr)
        for j, st in enumerate(lv.bits):
            listed = block_ptr(pool, lsz, j) in seen
            if (st is BlockState.FREE) != listed:
                detail = "FREE block missing from free list" if not listed else f"{st.value} block on free list"
                return Verdict.fail(detail, pool=pid, level=i, block=j)
    return PASS


@lru_cache(maxsize=65536)
def _pool_mem_part(pool: MemPool) -> Verdict:
    """Every relative address lies in exactly one live block."""
    cfg = pool.config
    pid = cfg.pool_id
    sizes = [cfg.max_sz // 4 ** i for i in range(len(pool.levels))]
    for addr in range(cfg.n_max * cfg.max_sz):
        covers = 0
        for i, lv in enumerate(pool.levels):
            # only j = addr // size can contain addr at level i
            j = addr // sizes[i]
            if j < len(lv.bits) and is_memblock(lv.bits[j]):
                covers += 1
        if covers != 1:
            detail = "address not covered by any block" if covers == 0 else f"address covered by {covers} blocks"
            return Verdict.fail(detail, pool=pid, addr=addr, covers=covers)
    return PASS


# ---------------------------------------------------------------------------
# public checks
# ---------------------------------------------------------------------------

def _first_fail(verdicts: Iterable[Verdict]) -> Verdict:
    for v in verdicts:
        if not v.ok:
            return v
    return PASS


def check_inv_bitmap(s: KernelState) -> Verdict:
    return _first_fail(_pool_bitmap(p) for p in _pools(s))


def check_inv_bitmap_bounds(s: KernelState) -> Tuple[Verdict, Verdict]:
    pairs = [_pool_bounds(p) for p in _pools(s)]
    return _first_fail(v for v, _ in pairs), _first_fail(v for _, v in pairs)


def check_inv_mempool_info(s: KernelState) -> Verdict:
    if set(s.mem_pools) != set(s.mem_pool_info.keys()):
        return Verdict.fail("mem_pool_info not defined exactly on mem_pools",
                            pool=",".join(sorted(set(s.mem_pools) ^ set(s.mem_pool_info.keys()))))
    return _first_fail(_pool_info(p) for p in _pools(s))


def check_inv_not4free(s: KernelState) -> Verdict:
    return _first_fail(_pool_not4free(p) for p in _pools(s))


def check_inv_freelist(s: KernelState) -> Verdict:
    return _first_fail(_pool_freelist(p) for p in _pools(s))


def check_inv_pools_notoverlap(s: KernelState) -> Verdict:
    pools = list(_pools(s))
    for a in range(len(pools)):
        lo_a, hi_a = pool_addrspace(pools[a])
        for b in range(a + 1, len(pools)):
            lo_b, hi_b = pool_addrspace(pools[b])
            if lo_a < hi_b and lo_b < hi_a:
                return Verdict.fail(
                    f"[{lo_a}, {hi_a}) overlaps [{lo_b}, {hi_b})",
                    pool=pools[a].config.pool_id, other=pools[b].config.pool_id,
                )
    return PASS


def check_inv_thd_waitq(s: KernelState) -> Verdict:
    where: Dict[str, str] = {}
    for p in _pools(s):
        pid = p.config.pool_id
        for t in p.wait_q:
            if s.thd_state.get(t) is not ThreadState.BLOCKED:
                st = s.thd_state.get(t)
                return Verdict.fail(f"waiter is {st.value if st else 'unknown'}", thread=t, pool=pid)
            if t in where:
                detail = "thread queued twice" if where[t] == pid else f"thread also queued on {where[t]}"
                return Verdict.fail(detail, thread=t, pool=pid)
            where[t] = pid
    for t in sorted(s.thd_state):
        if s.thd_state[t] is ThreadState.BLOCKED and t not in where:
            return Verdict.fail("BLOCKED thread in no wait queue", thread=t)
    return PASS


def check_inv_aux_vars(s: KernelState) -> Verdict:
    owners: Dict[Tuple[str, int, int], List[Tuple[str, str]]] = {}
    for t in sorted(s.locals):
        lc = s.locals[t]
        for kind, node, want in (
            ("freeing_node", lc.freeing_node, BlockState.FREEING),
            ("allocating_node", lc.allocating_node, BlockState.ALLOCATING),
        ):
            if node is None:
                continue
            pool = s.mem_pool_info.get(node.pool)
            if pool is None or node.level >= len(pool.levels) or node.block >= len(pool.levels[node.level].bits):
                return Verdict.fail(f"{kind} out of range", thread=t, pool=node.pool,
                                    level=node.level, block=node.block)
            st = pool.levels[node.level].bits[node.block]
            if st is not want:
                return Verdict.fail(f"{kind} points at a {st.value} bit", thread=t, pool=node.pool,
                                    level=node.level, block=node.block)
            owners.setdefault((node.pool, node.level, node.block), []).append((t, kind))
    for key, who in sorted(owners.items()):
        if len(who) > 1:
            return Verdict.fail("block manipulated by more than one thread", pool=key[0],
                                level=key[1], block=key[2], thread=",".join(f"{t}:{k}" for t, k in who))
    for p in _pools(s):
        pid = p.config.pool_id
        for i, lv in enumerate(p.levels):
            for j, st in enumerate(lv.bits):
                if st is BlockState.FREEING or st is BlockState.ALLOCATING:
                    if (pid, i, j) not in owners:
                        return Verdict.fail(f"{st.value} bit with no owning thread", pool=pid, level=i, block=j)
    return PASS


def check_mem_part(s: KernelState) -> Verdict:
    return _first_fail(_pool_mem_part(p) for p in _pools(s))


def partition_oracle(s: KernelState) -> Verdict:
    """
    Independent cross-check of check_mem_part: live blocks as absolute intervals
    must tile [buf, buf + n_max*max_sz) with no gap and no overlap.
    """
    for p in _pools(s):
        cfg = p.config
        pid = cfg.pool_id
        intervals = []
        for i, lv in enumerate(p.levels):
            sz = cfg.max_sz // 4 ** i
            for j, st in enumerate(lv.bits):
                if is_memblock(st):
                    lo = cfg.buf + j * sz
                    intervals.append((lo, lo + sz, i, j))
        intervals.sort()
        lo, hi = pool_addrspace(p)
        at = lo
        for a, b, i, j in intervals:
            if a > at:
                return Verdict.fail(f"gap [{at}, {a})", pool=pid, addr=at - cfg.buf)
            if a < at:
                return Verdict.fail(f"block ({i},{j}) overlaps below {at}", pool=pid, addr=a - cfg.buf)
            at = b
        if at < hi:
            return Verdict.fail(f"gap [{at}, {hi})", pool=pid, addr=at - cfg.buf)
        if at > hi:
            return Verdict.fail(f"blocks extend to {at}, past {hi}", pool=pid, addr=hi - cfg.buf)
    return PASS


# ---------------------------------------------------------------------------
# aggregate
# ---------------------------------------------------------------------------

@dataclass
class InvariantReport:
    verdicts: Dict[str, Verdict] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v.ok for v in self.verdicts.values())

    def failures(self) -> Dict[str, Verdict]:
        return {k: v for k, v in self.verdicts.items() if not v.ok}

    def to_dict(self) -> Dict[str, object]:
        return {k: v.to_dict() for k, v in self.verdicts.items()}


def check_all_invariants(s: KernelState, include_mem_part: bool = True) -> InvariantReport:
    v0, vn = check_inv_bitmap_bounds(s)
    verdicts = {
        "inv_bitmap": check_inv_bitmap(s),
        "inv_bitmap0": v0,
        "inv_bitmapn": vn,
        "inv_mempool_info": check_inv_mempool_info(s),
        "inv_bitmap_not4free": check_inv_not4free(s),
        "inv_bitmap_freelist": check_inv_freelist(s),
        "inv_pools_notoverlap": check_inv_pools_notoverlap(s),
        "inv_thd_waitq": check_inv_thd_waitq(s),
        "inv_aux_vars": check_inv_aux_vars(s),
    }
    if include_mem_part:
        verdicts["mem_part"] = check_mem_part(s)
    return InvariantReport(verdicts)


_INV_CACHE: Dict[str, bool] = {}


def inv(s: KernelState) -> bool:
    """Conjunction of the structural invariants (mem_part excluded), memoized by digest."""
    d = s.digest
    hit = _INV_CACHE.get(d)
    if hit is None:
        if len(_INV_CACHE) > 200_000:
            _INV_CACHE.clear()
        hit = check_all_invariants(s, include_mem_part=False).ok
        _INV_CACHE[d] = hit
    return hit


def theorem1_holds(s: KernelState) -> Verdict:
    """Well-formed bitmaps imply the partition property (vacuous when they are not)."""
    v0, vn = check_inv_bitmap_bounds(s)
    if not (check_inv_mempool_info(s).ok and check_inv_bitmap(s).ok and v0.ok and vn.ok):
        return PASS
    mp = check_mem_part(s)
    if mp.ok:
        return PASS
    return Verdict(False, mp.witness, f"partition refuted on a well-formed state: {mp.detail}")


def check_theorem1(states: Iterable[KernelState]) -> Verdict:
    for k, s in enumerate(states):
        v = theorem1_holds(s)
        if not v.ok:
            return Verdict(False, dict(v.witness or {}, state=k), v.detail)
    return PASS
