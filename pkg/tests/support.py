# -*- coding: utf-8 -*-
"""
support.py
Canonical pools and small drivers shared by the tests.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

from src.kernel_sim import Kernel
from src.mem_services import AllocOp, BugConfig, FreeOp, MemServices, Op
from src.pool_core import PoolConfig
from src.state import Domain, KernelState, ThreadState, TimeoutMode, init_kernel_state

POOL_A = PoolConfig(pool_id="A", buf=0, max_sz=256, n_max=1, n_levels=2)
POOL_B = PoolConfig(pool_id="B", buf=0, max_sz=64, n_max=2, n_levels=2)
POOL_C = PoolConfig(pool_id="C", buf=0, max_sz=256, n_max=2, n_levels=2)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

FOREVER = TimeoutMode.forever()
NOWAIT = TimeoutMode.nowait()


def alloc(pool: str, size: int, timeout: TimeoutMode = FOREVER) -> AllocOp:
    return AllocOp(pool=pool, size=size, timeout=timeout)


def free(idx: int = 0) -> FreeOp:
    return FreeOp(alloc_index=idx)


def make_kernel(
    scripts: Dict[str, Sequence[Op]],
    pools: Sequence[PoolConfig] = (POOL_A,),
    bugs: BugConfig = BugConfig(),
    max_ticks=None,
):
    kernel = Kernel(MemServices(scripts, bugs), max_ticks=max_ticks)
    return kernel, init_kernel_state(pools, list(scripts))


def step_thread(kernel: Kernel, s: KernelState, t: str) -> KernelState:
    """One step of t, scheduling it first when needed."""
    cands = kernel.enabled(s)
    for c in cands:
        if c.domain == Domain.of_thread(t):
            return c.apply(s)
    for c in cands:
        if c.label == f"schedule({t})":
            return c.apply(s)
    raise AssertionError(f"{t} cannot progress (pc={s.loc(t).pc}, state={s.thd_state.get(t)})")


def run_event(kernel: Kernel, s: KernelState, t: str, limit: int = 500) -> KernelState:
    """Drive t alone until its current script op completes."""
    start = s.loc(t).op_index
    for _ in range(limit):
        if s.loc(t).op_index > start:
            return s
        s = step_thread(kernel, s, t)
    raise AssertionError(f"{t} did not complete its event within {limit} steps")


def run_until_pc(kernel: Kernel, s: KernelState, t: str, pc: str, limit: int = 500) -> KernelState:
    """Drive t until its next step is `pc` (not yet executed)."""
    for _ in range(limit):
        if s.loc(t).pc == pc:
            return s
        s = step_thread(kernel, s, t)
    raise AssertionError(f"{t} never reached {pc}")


def run_until_blocked(kernel: Kernel, s: KernelState, t: str, limit: int = 500) -> KernelState:
    for _ in range(limit):
        if s.thd_state[t] is ThreadState.BLOCKED:
            return s
        s = step_thread(kernel, s, t)
    raise AssertionError(f"{t} never blocked")
