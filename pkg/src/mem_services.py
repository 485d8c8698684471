# -*- coding: utf-8 -*-
"""
mem_services.py
Allocation and release services as small-step event programs.

- 1 step = 1 文（状態変換）。ATOMIC_BLOCK は irq_lock/unlock 区間をまるごと 1 step に融合したもの
- スレッドの進行位置は ThreadLocals.pc（None = イベント間）
- bug toggle は該当する条件式だけを切り替える。それ以外のコードは共通
- alloc_block / break_block / free_block_iteration は純関数としても公開（テスト・再利用用）
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from pyrsistent import pvector

from .errors import ConsistencyError
from .pool_core import (
    BlockId,
    BlockState,
    MemPool,
    align4,
    block_fits,
    block_num,
    block_ptr,
    free_list_append,
    free_list_pop_head,
    free_list_remove,
    get_bit,
    level_empty,
    mem_block_addr_valid,
    partner_bits,
    set_bit,
    wait_q_append,
)
from .state import KernelState, RetCode, ThreadState, TimeoutMode


class StepKind(str, Enum):
    EVENT_OCCUR = "EVENT_OCCUR"
    PROGRAM_STEP = "PROGRAM_STEP"
    ATOMIC_BLOCK = "ATOMIC_BLOCK"


@dataclass(frozen=True)
class BugConfig:
    bug1_split: bool = False
    bug2_forever_eagain: bool = False
    bug3_nonterm: bool = False

    @staticmethod
    def parse(text: str) -> "BugConfig":
        """'none' / 'all' / 'bug1,bug3' のようなカンマ区切り。"""
        s = (text or "").strip().lower()
        if s in ("", "none"):
            return BugConfig()
        if s == "all":
            return BugConfig(True, True, True)
        names = {x.strip() for x in s.split(",") if x.strip()}
        unknown = names - {"bug1", "bug2", "bug3"}
        if unknown:
            raise ValueError(f"unknown bug name(s): {', '.join(sorted(unknown))}")
        return BugConfig("bug1" in names, "bug2" in names, "bug3" in names)

    def names(self) -> List[str]:
        out = []
        if self.bug1_split:
            out.append("bug1")
        if self.bug2_forever_eagain:
            out.append("bug2")
        if self.bug3_nonterm:
            out.append("bug3")
        return out

    def __str__(self) -> str:
        return ",".join(self.names()) or "none"


@dataclass(frozen=True)
class AllocOp:
    pool: str
    size: int
    timeout: TimeoutMode


@dataclass(frozen=True)
class FreeOp:
    alloc_index: int


Op = Union[AllocOp, FreeOp]


@dataclass(frozen=True)
class Step:
    """One interleavable unit of a thread's event program."""
    thread: str
    event_name: str
    pc: str
    kind: StepKind
    action: Callable[[KernelState], KernelState]
    guard: Optional[Callable[[KernelState], bool]] = None

    @property
    def label(self) -> str:
        return f"{self.pc}@{self.thread}"

    def enabled(self, s: KernelState) -> bool:
        return self.guard is None or bool(self.guard(s))


# ---------------------------------------------------------------------------
# pure helpers (Fig. 3 / Fig. 6 の部品)
# ---------------------------------------------------------------------------

def compute_lsizes_and_levels(pool: MemPool, size: int) -> Tuple[List[int], int, int]:
    """
    Level-size table and the (alloc_l, free_l) pair of the allocation loop.
    -1 は「該当レベルなし」。
    """
    lsizes: List[int] = [align4(pool.config.max_sz)]
    alloc_l = -1
    free_l = -1
    for i in range(pool.config.n_levels):
        if i > 0:
            lsizes.append(align4(lsizes[i - 1] // 4))
        if lsizes[i] < size:
            break
        alloc_l = i
        if not level_empty(pool, i):
            free_l = i
    return lsizes, alloc_l, free_l


def alloc_block(pool: MemPool, level: int, lsz: int) -> Tuple[MemPool, Optional[BlockId]]:
    """Pop the head of the level's free list and mark it ALLOCATING; None when empty."""
    pool2, addr = free_list_pop_head(pool, level)
    if addr is None:
        return pool, None
    bn = block_num(pool2, addr, lsz)
    pool2 = set_bit(pool2, level, bn, BlockState.ALLOCATING)
    return pool2, BlockId(pool.config.pool_id, level, bn, addr)


def break_block(pool: MemPool, node: BlockId, lsizes: Sequence[int]) -> Tuple[MemPool, BlockId]:
    """
    One split step: node becomes DIVIDED, its first quarter ALLOCATING,
    the other three FREE (appended to the child free list when they fit).
    """
    level = node.level
    if level + 1 >= pool.config.n_levels:
        raise ConsistencyError(
            f"pool {pool.config.pool_id}: cannot split a block at the deepest level {level}"
        )
    if get_bit(pool, level, node.block) is not BlockState.ALLOCATING:
        raise ConsistencyError(f"split of {node} whose bit is not ALLOCATING")
    lsz = lsizes[level + 1]
    pool2 = set_bit(pool, level, node.block, BlockState.DIVIDED)
    child = 4 * node.block
    pool2 = set_bit(pool2, level + 1, child, BlockState.ALLOCATING)
    for k in range(1, 4):
        addr = node.data + lsz * k
        pool2 = set_bit(pool2, level + 1, child + k, BlockState.FREE)
        if block_fits(pool2, addr, lsz):
            pool2 = free_list_append(pool2, level + 1, addr)
    return pool2, BlockId(pool.config.pool_id, level + 1, child, node.data)


def free_block_iteration(
    pool: MemPool, lvl: int, bn: int, lsz: int
) -> Tuple[MemPool, bool, int, int, Optional[BlockId]]:
    """
    Body of the release loop for the block (lvl, bn), which must be FREEING.
    Returns (pool, continue, lvl', bn', next freeing node).
    """
    cfg = pool.config
    blk = block_ptr(pool, lsz, bn)
    pool = set_bit(pool, lvl, bn, BlockState.FREE)
    if lvl > 0 and partner_bits(pool, lvl, bn):
        base = (bn // 4) * 4
        for k in range(4):
            bb = base + k
            pool = set_bit(pool, lvl, bb, BlockState.NOEXIST)
            block_pt = block_ptr(pool, lsz, bb)
            if bn != bb and block_fits(pool, block_pt, lsz):
                pool = free_list_remove(pool, lvl, block_pt)
        lvl -= 1
        bn //= 4
        pool = set_bit(pool, lvl, bn, BlockState.FREEING)
        parent = BlockId(cfg.pool_id, lvl, bn, block_ptr(pool, align4(cfg.max_sz) // 4 ** lvl, bn))
        return pool, True, lvl, bn, parent
    if block_fits(pool, blk, lsz):
        pool = free_list_append(pool, lvl, blk)
    return pool, False, lvl, bn, None


def mblk_valid(s: KernelState, pool_id: str, size: int, b: BlockId) -> bool:
    """Returned block names an ALLOCATED slot of the requested pool large enough for size."""
    if b.pool != pool_id or pool_id not in s.mem_pool_info:
        return False
    pool = s.pool(pool_id)
    if not mem_block_addr_valid(pool, b):
        return False
    if get_bit(pool, b.level, b.block) is not BlockState.ALLOCATED:
        return False
    return pool.config.max_sz // 4 ** b.level >= size


def alloc_pre(s: KernelState, t: str) -> bool:
    from .safety_checker import inv  # local import (checker depends on state only)

    lc = s.loc(t)
    return inv(s) and lc.allocating_node is None and lc.freeing_node is None


def free_pre(s: KernelState, t: str, b: BlockId) -> bool:
    if b.pool not in s.mem_pool_info or not mem_block_addr_valid(s.pool(b.pool), b):
        return False
    return alloc_pre(s, t)


# ---------------------------------------------------------------------------
# program points
# ---------------------------------------------------------------------------

STEP_KINDS: Dict[str, StepKind] = {
    "alloc.occur": StepKind.EVENT_OCCUR,
    "alloc.arm": StepKind.PROGRAM_STEP,
    "alloc.lsizes0": StepKind.PROGRAM_STEP,
    "alloc.level": StepKind.PROGRAM_STEP,
    "alloc.check": StepKind.PROGRAM_STEP,
    "alloc.alloc_block": StepKind.ATOMIC_BLOCK,
    "alloc.split_cond": StepKind.PROGRAM_STEP,
    "alloc.break_block": StepKind.ATOMIC_BLOCK,
    "alloc.finish": StepKind.ATOMIC_BLOCK,
    "alloc.ret_check": StepKind.PROGRAM_STEP,
    "alloc.pend": StepKind.ATOMIC_BLOCK,
    "alloc.wake": StepKind.PROGRAM_STEP,
    "free.occur": StepKind.EVENT_OCCUR,
    "free.await": StepKind.ATOMIC_BLOCK,
    "free.mblocks": StepKind.PROGRAM_STEP,
    "free.need_resched": StepKind.PROGRAM_STEP,
    "free.lsizes0": StepKind.PROGRAM_STEP,
    "free.lsizes": StepKind.PROGRAM_STEP,
    "free.block_r": StepKind.PROGRAM_STEP,
    "free.bn": StepKind.PROGRAM_STEP,
    "free.lvl": StepKind.PROGRAM_STEP,
    "free.lsz": StepKind.PROGRAM_STEP,
    "free.blk": StepKind.PROGRAM_STEP,
    "free.body": StepKind.ATOMIC_BLOCK,
    "free.wake_all": StepKind.ATOMIC_BLOCK,
}


class MemServices:
    """
    Event menus of every thread: each script op becomes one alloc/free event.
    next_step() は「今この thread が実行できる 1 step」を返す（無ければ None）。
    """

    def __init__(self, scripts: Mapping[str, Sequence[Op]], bugs: BugConfig):
        self.scripts: Dict[str, Tuple[Op, ...]] = {t: tuple(ops) for t, ops in scripts.items()}
        self.bugs = bugs

    # -- script bookkeeping ------------------------------------------------

    def is_done(self, s: KernelState, t: str) -> bool:
        lc = s.loc(t)
        return lc.pc is None and lc.op_index >= len(self.scripts.get(t, ()))

    def all_done(self, s: KernelState) -> bool:
        return all(self.is_done(s, t) for t in self.scripts)

    def current_op(self, s: KernelState, t: str) -> Optional[Op]:
        lc = s.loc(t)
        ops = self.scripts.get(t, ())
        return ops[lc.op_index] if lc.op_index < len(ops) else None

    def resolve_free_target(self, s: KernelState, t: str, op: FreeOp) -> Optional[BlockId]:
        lc = s.loc(t)
        if op.alloc_index >= len(lc.alloc_results):
            return None
        b = lc.alloc_results[op.alloc_index]
        return b if b in s.mblocks[t] else None

    # -- step selection ------------------------------------------------------

    def next_step(self, s: KernelState, t: str) -> Optional[Step]:
        lc = s.loc(t)
        pc = lc.pc
        if pc is None:
            op = self.current_op(s, t)
            if op is None:
                return None
            pc = "alloc.occur" if isinstance(op, AllocOp) else "free.occur"
        fn = getattr(self, "_" + pc.replace(".", "_"))
        guard = None
        if pc == "free.await":
            guard = lambda st, _t=t: self._free_await_guard(st, _t)
        elif pc == "free.occur":
            guard = lambda st, _t=t: self._free_occur_guard(st, _t)
        elif pc == "alloc.occur":
            guard = lambda st, _t=t: self._alloc_occur_guard(st, _t)
        return Step(
            thread=t,
            event_name=pc.split(".", 1)[0],
            pc=pc,
            kind=STEP_KINDS[pc],
            action=lambda st, _fn=fn, _t=t: _fn(st, _t),
            guard=guard,
        )

    # -- common ------------------------------------------------------------

    @staticmethod
    def _goto(s: KernelState, t: str, pc: Optional[str], **changes) -> KernelState:
        return s.with_locals(t, pc=pc, **changes)

    @staticmethod
    def _complete(s: KernelState, t: str, **changes) -> KernelState:
        return s.with_locals(t, pc=None, op_index=s.loc(t).op_index + 1, **changes)

    # =======================================================================
    # alloc
    # =======================================================================

    def _alloc_occur_guard(self, s: KernelState, t: str) -> bool:
        op = self.current_op(s, t)
        return isinstance(op, AllocOp) and op.pool in s.mem_pools

    def _alloc_occur(self, s: KernelState, t: str) -> KernelState:
        op = self.current_op(s, t)
        assert isinstance(op, AllocOp)
        nxt = "alloc.arm" if op.timeout.kind == "TICKS" else "alloc.lsizes0"
        return self._goto(
            s, t, nxt,
            event="alloc", ev_pool=op.pool, ev_size=op.size, ev_timeout=op.timeout, ev_block=None,
            ret=None, mempoolalloc_ret=None, size_err=False, endt=0,
        )

    def _alloc_arm(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        return self._goto(s, t, "alloc.lsizes0", endt=s.tick + lc.ev_timeout.ticks)

    def _alloc_lsizes0(self, s: KernelState, t: str) -> KernelState:
        pool = s.pool(s.loc(t).ev_pool)
        return self._goto(
            s, t, "alloc.level",
            lsizes=pvector([align4(pool.config.max_sz)]), alloc_l=-1, free_l=-1, i=0,
        )

    def _alloc_level(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        pool = s.pool(lc.ev_pool)
        i = lc.i
        lsizes = lc.lsizes
        if i > 0:
            lsizes = lsizes.append(align4(lsizes[i - 1] // 4))
        if lsizes[i] < lc.ev_size:
            return self._goto(s, t, "alloc.check", lsizes=lsizes)
        alloc_l = i
        free_l = i if not level_empty(pool, i) else lc.free_l
        nxt = "alloc.check" if i + 1 >= pool.config.n_levels else "alloc.level"
        return self._goto(s, t, nxt, lsizes=lsizes, alloc_l=alloc_l, free_l=free_l, i=i + 1)

    def _alloc_check(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        if lc.alloc_l < 0:
            ret = RetCode.ENOMEM if self.bugs.bug3_nonterm else RetCode.ESIZEERR
            return self._goto(s, t, "alloc.ret_check", ret=ret, size_err=True)
        if lc.free_l < 0:
            return self._goto(s, t, "alloc.ret_check", ret=RetCode.ENOMEM, size_err=False)
        return self._goto(s, t, "alloc.alloc_block", size_err=False)

    def _alloc_alloc_block(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        pool2, node = alloc_block(s.pool(lc.ev_pool), lc.free_l, lc.lsizes[lc.free_l])
        if node is None:
            return self._goto(s, t, "alloc.ret_check", ret=RetCode.EAGAIN)
        s2 = s.with_pool(pool2)
        return self._goto(
            s2, t, "alloc.split_cond", blk=node.data, from_l=lc.free_l, allocating_node=node,
        )

    def _alloc_split_cond(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        cond = lc.from_l < lc.alloc_l
        if self.bugs.bug1_split:
            cond = cond and level_empty(s.pool(lc.ev_pool), lc.alloc_l)
        return self._goto(s, t, "alloc.break_block" if cond else "alloc.finish")

    def _alloc_break_block(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        pool2, child = break_block(s.pool(lc.ev_pool), lc.allocating_node, lc.lsizes)
        return self._goto(
            s.with_pool(pool2), t, "alloc.split_cond",
            allocating_node=child, from_l=lc.from_l + 1, blk=child.data,
        )

    def _alloc_finish(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        pool = s.pool(lc.ev_pool)
        node = lc.allocating_node
        pool = set_bit(pool, node.level, node.block, BlockState.ALLOCATED)
        bid = BlockId(
            pool.config.pool_id, lc.alloc_l, block_num(pool, lc.blk, lc.lsizes[lc.alloc_l]), lc.blk,
        )
        s2 = s.with_pool(pool).with_mblocks(t, s.mblocks[t].add(bid))
        return self._goto(
            s2, t, "alloc.ret_check",
            ret=RetCode.OK, mempoolalloc_ret=bid, allocating_node=None,
            alloc_results=lc.alloc_results.append(bid),
        )

    def _alloc_ret_check(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        ret = lc.ret
        if ret is RetCode.OK:
            return self._complete(s, t)
        if ret is RetCode.EAGAIN:
            if self.bugs.bug2_forever_eagain:
                return self._complete(s, t)
            # raced away: retry without pending
            return self._goto(s, t, "alloc.lsizes0")
        if lc.ev_timeout.kind == "NOWAIT" or ret is RetCode.ESIZEERR:
            return self._complete(s, t)
        return self._goto(s, t, "alloc.pend")

    def _alloc_pend(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        s2 = s.with_pool(wait_q_append(s.pool(lc.ev_pool), t)).with_thd_state(t, ThreadState.BLOCKED)
        s2 = replace(s2, cur=None)
        return self._goto(s2, t, "alloc.wake")

    def _alloc_wake(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        if lc.ev_timeout.kind == "TICKS" and s.tick > lc.endt:
            ret = RetCode.EAGAIN if self.bugs.bug2_forever_eagain else RetCode.ETIMEOUT
            return self._complete(s, t, ret=ret)
        return self._goto(s, t, "alloc.lsizes0")

    # =======================================================================
    # free
    # =======================================================================

    def _free_occur_guard(self, s: KernelState, t: str) -> bool:
        op = self.current_op(s, t)
        if not isinstance(op, FreeOp):
            return False
        b = self.resolve_free_target(s, t, op)
        if b is None:
            # the referenced alloc did not succeed: the op is skipped
            return True
        return b.pool in s.mem_pools and mem_block_addr_valid(s.pool(b.pool), b)

    def _free_occur(self, s: KernelState, t: str) -> KernelState:
        op = self.current_op(s, t)
        assert isinstance(op, FreeOp)
        b = self.resolve_free_target(s, t, op)
        if b is None:
            return self._complete(
                s, t, event="free", ev_block=None, ev_pool=None, ret=None, free_iters=0,
            )
        return self._goto(
            s, t, "free.await",
            event="free", ev_block=b, ev_pool=b.pool, ret=None, free_iters=0,
        )

    def _free_await_guard(self, s: KernelState, t: str) -> bool:
        b = s.loc(t).ev_block
        return get_bit(s.pool(b.pool), b.level, b.block) is BlockState.ALLOCATED

    def _free_await(self, s: KernelState, t: str) -> KernelState:
        b = s.loc(t).ev_block
        pool = set_bit(s.pool(b.pool), b.level, b.block, BlockState.FREEING)
        return self._goto(s.with_pool(pool), t, "free.mblocks", freeing_node=b)

    def _free_mblocks(self, s: KernelState, t: str) -> KernelState:
        b = s.loc(t).ev_block
        return self._goto(s.with_mblocks(t, s.mblocks[t].discard(b)), t, "free.need_resched")

    def _free_need_resched(self, s: KernelState, t: str) -> KernelState:
        return self._goto(s, t, "free.lsizes0", need_resched=False)

    def _free_lsizes0(self, s: KernelState, t: str) -> KernelState:
        b = s.loc(t).ev_block
        pool = s.pool(b.pool)
        nxt = "free.lsizes" if b.level >= 1 else "free.block_r"
        return self._goto(s, t, nxt, lsizes=pvector([align4(pool.config.max_sz)]), i=1)

    def _free_lsizes(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        lsizes = lc.lsizes.append(align4(lc.lsizes[lc.i - 1] // 4))
        nxt = "free.lsizes" if lc.i + 1 <= lc.ev_block.level else "free.block_r"
        return self._goto(s, t, nxt, lsizes=lsizes, i=lc.i + 1)

    def _free_block_r(self, s: KernelState, t: str) -> KernelState:
        return self._goto(s, t, "free.bn", free_block_r=True)

    def _free_bn(self, s: KernelState, t: str) -> KernelState:
        return self._goto(s, t, "free.lvl", bn=s.loc(t).ev_block.block)

    def _free_lvl(self, s: KernelState, t: str) -> KernelState:
        return self._goto(s, t, "free.lsz", lvl=s.loc(t).ev_block.level)

    def _free_lsz(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        return self._goto(s, t, "free.blk", lsz=lc.lsizes[lc.lvl])

    def _free_blk(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        return self._goto(s, t, "free.body", blk=block_ptr(s.pool(lc.ev_pool), lc.lsz, lc.bn))

    def _free_body(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        pool, again, lvl, bn, parent = free_block_iteration(s.pool(lc.ev_pool), lc.lvl, lc.bn, lc.lsz)
        s2 = s.with_pool(pool)
        if again:
            return self._goto(
                s2, t, "free.lsz",
                lvl=lvl, bn=bn, freeing_node=parent, free_iters=lc.free_iters + 1,
                bb=(lc.bn // 4) * 4 + 3, i=4,
            )
        return self._goto(
            s2, t, "free.wake_all",
            freeing_node=None, free_block_r=False, free_iters=lc.free_iters + 1,
        )

    def _free_wake_all(self, s: KernelState, t: str) -> KernelState:
        lc = s.loc(t)
        pool = s.pool(lc.ev_pool)
        need_resched = lc.need_resched
        th = lc.th
        s2 = s
        for w in pool.wait_q:
            th = w
            s2 = s2.with_thd_state(w, ThreadState.READY)
            need_resched = True
        s2 = s2.with_pool(replace(pool, wait_q=pvector()))
        if need_resched:
            s2 = replace(s2.with_thd_state(t, ThreadState.READY), cur=None)
        return self._complete(s2, t, need_resched=need_resched, th=th)


# ---------------------------------------------------------------------------
# intermediate assertions of the release service
# ---------------------------------------------------------------------------

def free_checkpoint(s: KernelState, t: str) -> Optional[str]:
    """
    Evaluate the assertion attached to the thread's current program point
    inside a release event. None = holds (or no assertion at this point).
    """
    lc = s.loc(t)
    b = lc.ev_block
    if lc.event != "free" or b is None or lc.pc is None or not lc.pc.startswith("free."):
        return None
    pool = s.pool(b.pool)
    cfg = pool.config
    if lc.pc == "free.mblocks":
        if lc.freeing_node != b:
            return f"freeing_node {lc.freeing_node} != {b} after await"
        if lc.allocating_node is not None:
            return "allocating_node set during release"
        if not mem_block_addr_valid(pool, b):
            return f"{b} fails the release guard"
        return None
    if lc.pc == "free.lsizes0" and lc.need_resched:
        return "need_resched not cleared"
    if lc.pc == "free.block_r":
        if len(lc.lsizes) <= b.level:
            return f"lsizes has {len(lc.lsizes)} entries, level is {b.level}"
        for ii, v in enumerate(lc.lsizes):
            if v != align4(cfg.max_sz) // 4 ** ii:
                return f"lsizes[{ii}] = {v}, expected {align4(cfg.max_sz) // 4 ** ii}"
        return None
    if lc.pc == "free.lsz":
        if lc.lvl > b.level:
            return f"lvl {lc.lvl} above level {b.level}"
        if lc.bn != b.block // 4 ** (b.level - lc.lvl):
            return f"bn {lc.bn} is not the level-{lc.lvl} ancestor of block {b.block}"
        if not lc.free_block_r:
            return "loop head reached with free_block_r False"
        fn = lc.freeing_node
        if fn is None or (fn.pool, fn.level, fn.block) != (b.pool, lc.lvl, lc.bn):
            return f"freeing_node {fn} does not track ({b.pool}, {lc.lvl}, {lc.bn})"
        return None
    if lc.pc == "free.wake_all":
        if lc.free_block_r or lc.freeing_node is not None:
            return "release loop exited with freeing_node still set"
    return None
