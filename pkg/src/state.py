# -*- coding: utf-8 -*-
"""
state.py
Global kernel snapshot shared by services, simulator and checkers.

- KernelState は不変値（pyrsistent の pmap / pvector / pset）。探索では digest で同一性を判定する
- to_dict() の出力は正準形（キー順固定）で、digest と trace/report の両方に使う
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterable, Optional

from pyrsistent import PMap, PSet, PVector, pmap, pset, pvector

from .errors import ConfigError
from .pool_core import BlockId, MemPool, PoolConfig, init_pool


class ThreadState(str, Enum):
    READY = "READY"
    RUNNING = "RUNNING"
    BLOCKED = "BLOCKED"


class RetCode(str, Enum):
    OK = "OK"
    ENOMEM = "ENOMEM"
    EAGAIN = "EAGAIN"
    ETIMEOUT = "ETIMEOUT"
    ESIZEERR = "ESIZEERR"


@dataclass(frozen=True)
class TimeoutMode:
    kind: str  # "FOREVER" / "NOWAIT" / "TICKS"
    ticks: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("FOREVER", "NOWAIT", "TICKS"):
            raise ConfigError(f"unknown timeout mode: {self.kind}")
        if self.kind == "TICKS" and self.ticks < 1:
            raise ConfigError(f"TICKS timeout needs n >= 1 (got {self.ticks})")

    @staticmethod
    def forever() -> "TimeoutMode":
        return TimeoutMode("FOREVER")

    @staticmethod
    def nowait() -> "TimeoutMode":
        return TimeoutMode("NOWAIT")

    @staticmethod
    def after(n: int) -> "TimeoutMode":
        return TimeoutMode("TICKS", int(n))

    def to_json(self) -> Any:
        return {"ticks": self.ticks} if self.kind == "TICKS" else self.kind

    def __str__(self) -> str:
        return f"TICKS({self.ticks})" if self.kind == "TICKS" else self.kind


@dataclass(frozen=True)
class Domain:
    kind: str  # "SCHEDULER" / "TIMER" / "THREAD"
    thread: Optional[str] = None

    @staticmethod
    def scheduler() -> "Domain":
        return Domain("SCHEDULER")

    @staticmethod
    def timer() -> "Domain":
        return Domain("TIMER")

    @staticmethod
    def of_thread(t: str) -> "Domain":
        return Domain("THREAD", t)

    @staticmethod
    def parse(text: str) -> "Domain":
        if text in ("SCHEDULER", "TIMER"):
            return Domain(text)
        if text.startswith("THREAD:") and len(text) > len("THREAD:"):
            return Domain("THREAD", text[len("THREAD:"):])
        raise ValueError(f"unknown domain: {text!r}")

    def __str__(self) -> str:
        return f"THREAD:{self.thread}" if self.kind == "THREAD" else self.kind


def _opt_block(b: Optional[BlockId]) -> Optional[Dict[str, object]]:
    return b.to_dict() if b is not None else None


@dataclass(frozen=True)
class ThreadLocals:
    """
    Per-thread copies of the service variables plus script bookkeeping.
    pc が None のときはイベント間（次の script op 待ち）。
    """
    pc: Optional[str] = None
    op_index: int = 0
    event: Optional[str] = None
    ev_pool: Optional[str] = None
    ev_size: int = 0
    ev_timeout: Optional[TimeoutMode] = None
    ev_block: Optional[BlockId] = None
    alloc_results: PVector = field(default_factory=pvector)
    size_err: bool = False
    free_iters: int = 0

    lsizes: PVector = field(default_factory=pvector)
    alloc_l: int = -1
    free_l: int = -1
    from_l: int = 0
    lvl: int = 0
    lsz: int = 0
    bn: int = 0
    bb: int = 0
    i: int = 0
    blk: Optional[int] = None
    block_pt: int = 0
    free_block_r: bool = False
    need_resched: bool = False
    th: Optional[str] = None
    endt: int = 0
    freeing_node: Optional[BlockId] = None
    allocating_node: Optional[BlockId] = None
    ret: Optional[RetCode] = None
    mempoolalloc_ret: Optional[BlockId] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pc": self.pc,
            "op_index": self.op_index,
            "event": self.event,
            "ev_pool": self.ev_pool,
            "ev_size": self.ev_size,
            "ev_timeout": self.ev_timeout.to_json() if self.ev_timeout else None,
            "ev_block": _opt_block(self.ev_block),
            "alloc_results": [b.to_dict() for b in self.alloc_results],
            "size_err": self.size_err,
            "free_iters": self.free_iters,
            "lsizes": list(self.lsizes),
            "alloc_l": self.alloc_l,
            "free_l": self.free_l,
            "from_l": self.from_l,
            "lvl": self.lvl,
            "lsz": self.lsz,
            "bn": self.bn,
            "bb": self.bb,
            "i": self.i,
            "blk": self.blk,
            "block_pt": self.block_pt,
            "free_block_r": self.free_block_r,
            "need_resched": self.need_resched,
            "th": self.th,
            "endt": self.endt,
            "freeing_node": _opt_block(self.freeing_node),
            "allocating_node": _opt_block(self.allocating_node),
            "ret": self.ret.value if self.ret else None,
            "mempoolalloc_ret": _opt_block(self.mempoolalloc_ret),
        }


def digest_of(obj: Any) -> str:
    raw = json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class KernelState:
    mem_pools: PVector
    mem_pool_info: PMap
    cur: Optional[str]
    tick: int
    thd_state: PMap
    locals: PMap
    mblocks: PMap

    # -- accessors -------------------------------------------------------

    def pool(self, pool_id: str) -> MemPool:
        return self.mem_pool_info[pool_id]

    def loc(self, t: str) -> ThreadLocals:
        return self.locals[t]

    @property
    def threads(self) -> Iterable[str]:
        return sorted(self.thd_state.keys())

    # -- functional updates ----------------------------------------------

    def with_pool(self, pool: MemPool) -> "KernelState":
        return replace(self, mem_pool_info=self.mem_pool_info.set(pool.config.pool_id, pool))

    def with_locals(self, t: str, **changes: Any) -> "KernelState":
        return replace(self, locals=self.locals.set(t, replace(self.locals[t], **changes)))

    def with_thd_state(self, t: str, st: ThreadState) -> "KernelState":
        return replace(self, thd_state=self.thd_state.set(t, st))

    def with_mblocks(self, t: str, blocks: PSet) -> "KernelState":
        return replace(self, mblocks=self.mblocks.set(t, blocks))

    # -- canonical form ----------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mem_pools": list(self.mem_pools),
            "mem_pool_info": {k: self.mem_pool_info[k].to_dict() for k in sorted(self.mem_pool_info)},
            "cur": self.cur,
            "tick": self.tick,
            "thd_state": {k: self.thd_state[k].value for k in sorted(self.thd_state)},
            "locals": {k: self.locals[k].to_dict() for k in sorted(self.locals)},
            "mblocks": {
                k: [b.to_dict() for b in sorted(self.mblocks[k])] for k in sorted(self.mblocks)
            },
        }

    @cached_property
    def digest(self) -> str:
        return digest_of(self.to_dict())


def init_kernel_state(configs: Iterable[PoolConfig], threads: Iterable[str]) -> KernelState:
    """
    s0: every pool initialized, cur None, tick 0, all threads READY,
    locals default, mblocks empty.
    """
    pools = [init_pool(c) for c in configs]
    tids = list(threads)
    return KernelState(
        mem_pools=pvector(p.config.pool_id for p in pools),
        mem_pool_info=pmap({p.config.pool_id: p for p in pools}),
        cur=None,
        tick=0,
        thd_state=pmap({t: ThreadState.READY for t in tids}),
        locals=pmap({t: ThreadLocals() for t in tids}),
        mblocks=pmap({t: pset() for t in tids}),
    )
