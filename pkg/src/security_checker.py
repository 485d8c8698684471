# -*- coding: utf-8 -*-
"""
security_checker.py
Security configuration and the per-step / per-event monitors.

- 干渉関係: Timer は自分だけ、thread 同士は自分だけ、それ以外は True（thread → scheduler も可）
- 状態同値: SCHEDULER は cur、THREAD t は mblocks(t)、TIMER は tick を比較
- guarantee / rely は「Id または 各条項の連言」。失敗時は破れた条項を detail に入れる
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from .errors import StepError
from .mem_services import alloc_pre, mblk_valid
from .pool_core import BlockState
from .safety_checker import inv
from .state import Domain, KernelState
from .verdicts import PASS, Verdict


# ---------------------------------------------------------------------------
# policy
# ---------------------------------------------------------------------------

def interferes(d1: Domain, d2: Domain) -> bool:
    if d1.kind == "TIMER":
        return d2.kind == "TIMER"
    if d2.kind == "TIMER":
        return False
    if d1.kind == "THREAD" and d2.kind == "THREAD":
        return d1.thread == d2.thread
    return True


def state_equiv(d: Domain, s: KernelState, r: KernelState) -> bool:
    if d.kind == "SCHEDULER":
        return s.cur == r.cur
    if d.kind == "TIMER":
        return s.tick == r.tick
    return s.mblocks.get(d.thread) == r.mblocks.get(d.thread)


def dom_of_step(s: KernelState, label: str) -> Domain:
    """tick → TIMER, schedule(t) → SCHEDULER, <alloc|free>.<pc>@t → THREAD t."""
    if label == "tick":
        return Domain.timer()
    if label.startswith("schedule(") and label.endswith(")"):
        return Domain.scheduler()
    if "@" in label:
        pc, t = label.rsplit("@", 1)
        if pc.split(".", 1)[0] in ("alloc", "free") and t in s.thd_state:
            return Domain.of_thread(t)
    raise StepError(f"unknown event label: {label!r}")


def domains_of(s: KernelState) -> List[Domain]:
    return [Domain.scheduler(), Domain.timer()] + [Domain.of_thread(t) for t in sorted(s.thd_state)]


def _differing_component(d: Domain) -> str:
    if d.kind == "SCHEDULER":
        return "cur"
    if d.kind == "TIMER":
        return "tick"
    return f"mblocks[{d.thread}]"


@dataclass(frozen=True)
class SecurityConfig:
    interferes: Callable[[Domain, Domain], bool] = interferes
    equiv: Callable[[Domain, KernelState, KernelState], bool] = state_equiv
    dom_e: Callable[[KernelState, str], Domain] = dom_of_step


ZEPHYR_POLICY = SecurityConfig()


def check_policy(cfg: SecurityConfig, domains: Sequence[Domain], states: Sequence[KernelState]) -> Verdict:
    """Reflexive interference; each equivalence reflexive/symmetric/transitive on sampled triples."""
    for d in domains:
        if not cfg.interferes(d, d):
            return Verdict.fail("interference not reflexive", domain=str(d))
    for d in domains:
        for k, s in enumerate(states):
            if not cfg.equiv(d, s, s):
                return Verdict.fail("equivalence not reflexive", domain=str(d), state=k)
        for k in range(len(states) - 2):
            a, b, c = states[k], states[k + 1], states[k + 2]
            if cfg.equiv(d, a, b) != cfg.equiv(d, b, a):
                return Verdict.fail("equivalence not symmetric", domain=str(d), state=k)
            if cfg.equiv(d, a, b) and cfg.equiv(d, b, c) and not cfg.equiv(d, a, c):
                return Verdict.fail("equivalence not transitive", domain=str(d), state=k)
    return PASS


# ---------------------------------------------------------------------------
# integrity
# ---------------------------------------------------------------------------

def check_integrity_step(
    pre: KernelState, post: KernelState, label: str, cfg: SecurityConfig = ZEPHYR_POLICY
) -> Verdict:
    d_a = cfg.dom_e(pre, label)
    for d in domains_of(pre):
        if not cfg.interferes(d_a, d) and not cfg.equiv(d, pre, post):
            return Verdict.fail(
                f"{d_a} may not interfere with {d} but changed {_differing_component(d)}",
                source=str(d_a), target=str(d), component=_differing_component(d),
            )
    return PASS


def _event_key(label: str, pre: KernelState, d: Domain) -> Tuple[str, int]:
    if d.kind == "THREAD":
        return (str(d), pre.loc(d.thread).op_index)
    return (label, -1)


def check_event_integrity(
    steps: Sequence[Tuple[str, KernelState, KernelState]], cfg: SecurityConfig = ZEPHYR_POLICY
) -> Verdict:
    """
    Event granularity: for each maximal contiguous run of one event's own steps,
    entry and exit must be equivalent for every domain the event may not interfere with.
    """
    k = 0
    n = len(steps)
    while k < n:
        label, entry, _ = steps[k]
        d_a = cfg.dom_e(entry, label)
        key = _event_key(label, entry, d_a)
        end = k
        if d_a.kind == "THREAD":
            while end + 1 < n:
                nlabel, npre, npost = steps[end + 1]
                if cfg.dom_e(npre, nlabel) != d_a or _event_key(nlabel, npre, d_a) != key:
                    break
                end += 1
        exit_state = steps[end][2]
        for d in domains_of(entry):
            if not cfg.interferes(d_a, d) and not cfg.equiv(d, entry, exit_state):
                return Verdict.fail(
                    f"event of {d_a} changed the view of {d} ({_differing_component(d)})",
                    source=str(d_a), target=str(d), first_step=k, last_step=end,
                )
        k = end + 1
    return PASS


# ---------------------------------------------------------------------------
# guarantee / rely
# ---------------------------------------------------------------------------

def _conf_stable(s: KernelState, r: KernelState) -> bool:
    if list(s.mem_pools) != list(r.mem_pools):
        return False
    for pid in s.mem_pools:
        if pid not in r.mem_pool_info or s.pool(pid).config != r.pool(pid).config:
            return False
    return True


def _memory_same(s: KernelState, r: KernelState) -> bool:
    """Bitmaps and free lists of every pool; wait queues are scheduler bookkeeping."""
    return all(
        pid in r.mem_pool_info and s.pool(pid).levels == r.pool(pid).levels for pid in s.mem_pools
    )


def _others(s: KernelState, t: str) -> Iterable[str]:
    return (x for x in sorted(s.locals) if x != t)


def mem_pool_guar(t: str, s: KernelState, r: KernelState) -> Verdict:
    if s.digest == r.digest:
        return PASS
    if not _conf_stable(s, r):
        return Verdict.fail("pool configuration changed", thread=t, clause="2")
    if s.cur != t:
        if s.mem_pool_info != r.mem_pool_info or s.locals[t] != r.locals[t]:
            return Verdict.fail("unscheduled thread changed memory or its locals", thread=t, clause="3.1")
    elif inv(s) and not inv(r):
        return Verdict.fail("step broke the memory invariant", thread=t, clause="3.2")
    for o in _others(s, t):
        if s.locals[o] != r.locals.get(o):
            return Verdict.fail(f"locals of {o} changed", thread=t, other=o, clause="4")
    for o in sorted(s.mblocks):
        if o != t and s.mblocks[o] != r.mblocks.get(o):
            return Verdict.fail(f"mblocks of {o} changed", thread=t, other=o, clause="5")
    if s.tick != r.tick:
        return Verdict.fail("thread changed tick", thread=t, clause="6")
    return PASS


def mem_pool_rely(t: str, s: KernelState, r: KernelState) -> Verdict:
    if s.digest == r.digest:
        return PASS
    if not _conf_stable(s, r):
        return Verdict.fail("pool configuration changed", thread=t, clause="1")
    if inv(s) and not inv(r):
        return Verdict.fail("environment broke the memory invariant", thread=t, clause="2")
    if s.locals[t] != r.locals.get(t):
        return Verdict.fail("environment changed the observer's locals", thread=t, clause="3")
    if s.cur == t:
        if not _memory_same(s, r):
            return Verdict.fail("memory changed while observer is scheduled", thread=t, clause="4")
        for o in _others(s, t):
            if s.locals[o] != r.locals.get(o):
                return Verdict.fail(f"locals of {o} changed while observer is scheduled",
                                    thread=t, other=o, clause="4")
    if s.mblocks.get(t) != r.mblocks.get(t):
        return Verdict.fail("environment changed the observer's mblocks", thread=t, clause="5")
    return PASS


def schedule_guar(s: KernelState, r: KernelState) -> Verdict:
    if (s.mem_pool_info, s.tick, s.locals, s.mblocks) != (r.mem_pool_info, r.tick, r.locals, r.mblocks):
        return Verdict.fail("schedule changed more than cur/thd_state", domain="SCHEDULER")
    return PASS


def tick_guar(s: KernelState, r: KernelState) -> Verdict:
    if r.tick != s.tick + 1:
        return Verdict.fail("tick did not advance by one", domain="TIMER")
    if (s.cur, s.locals, s.mblocks) != (r.cur, r.locals, r.mblocks) or not _memory_same(s, r):
        return Verdict.fail("tick changed memory, locals or cur", domain="TIMER")
    for pid in s.mem_pools:
        removed = set(s.pool(pid).wait_q) - set(r.pool(pid).wait_q)
        if set(r.pool(pid).wait_q) - set(s.pool(pid).wait_q):
            return Verdict.fail("tick added a waiter", domain="TIMER", pool=pid)
        for w in removed:
            lc = s.loc(w)
            if lc.ev_timeout is None or lc.ev_timeout.kind != "TICKS" or lc.endt >= r.tick:
                return Verdict.fail("tick released a waiter before its deadline", domain="TIMER",
                                    pool=pid, thread=w)
    return PASS


@dataclass(frozen=True)
class GuaranteeSpec:
    """The rely/guarantee/pre/post quadruple of one event, as executable predicates."""
    guar: Callable[[str, KernelState, KernelState], Verdict]
    rely: Callable[[str, KernelState, KernelState], Verdict]
    pre: Callable[[KernelState, str], bool]
    post: Callable[[KernelState, str], Verdict]


def check_guarantee_identity(spec: GuaranteeSpec, states: Iterable[KernelState]) -> Verdict:
    for k, s in enumerate(states):
        for t in sorted(s.thd_state):
            if not spec.guar(t, s, s).ok:
                return Verdict.fail("guarantee does not contain the identity", thread=t, state=k)
    return PASS


def check_guarantee_step(pre: KernelState, post: KernelState, label: str, spec: GuaranteeSpec) -> Verdict:
    d = dom_of_step(pre, label)
    if d.kind == "SCHEDULER":
        return schedule_guar(pre, post)
    if d.kind == "TIMER":
        return tick_guar(pre, post)
    return spec.guar(d.thread, pre, post)


def check_rely_step(pre: KernelState, post: KernelState, label: str, observer: str,
                    spec: Optional[GuaranteeSpec] = None) -> Verdict:
    rely = spec.rely if spec is not None else mem_pool_rely
    return rely(observer, pre, post)


# ---------------------------------------------------------------------------
# postconditions
# ---------------------------------------------------------------------------

def _fragment_bytes(s: KernelState, pool_id: str, b) -> Optional[int]:
    """Size difference between the live block actually starting at b.data and the level b claims."""
    pool = s.pool(pool_id)
    cfg = pool.config
    for i, lv in enumerate(pool.levels):
        sz = cfg.max_sz // 4 ** i
        off = b.data - cfg.buf
        if off % sz == 0 and off // sz < len(lv.bits):
            st = lv.bits[off // sz]
            if st is BlockState.ALLOCATED:
                return sz - cfg.max_sz // 4 ** b.level
    return None


def mem_pool_alloc_post(s: KernelState, t: str) -> Verdict:
    lc = s.loc(t)
    if not inv(s):
        return Verdict.fail("invariant does not hold on completion", thread=t)
    if lc.allocating_node is not None or lc.freeing_node is not None:
        return Verdict.fail("allocating/freeing node left set", thread=t)
    mode = lc.ev_timeout.kind if lc.ev_timeout else "?"
    ret = lc.ret.value if lc.ret else None
    allowed = {"FOREVER": {"OK", "ESIZEERR"}, "NOWAIT": {"OK", "ENOMEM", "ESIZEERR"},
               "TICKS": {"OK", "ETIMEOUT", "ESIZEERR"}}.get(mode, set())
    if ret not in allowed:
        return Verdict.fail(f"{mode} alloc returned {ret}", thread=t, mode=mode, ret=ret)
    b = lc.mempoolalloc_ret
    if ret != "OK":
        if b is not None:
            return Verdict.fail(f"{ret} with a returned block", thread=t, mode=mode, ret=ret)
        return PASS
    if b is None or not mblk_valid(s, lc.ev_pool, lc.ev_size, b):
        w = dict(thread=t, mode=mode, ret=ret)
        if b is not None:
            w.update(pool=b.pool, level=b.level, block=b.block, data=b.data)
            frag = _fragment_bytes(s, b.pool, b)
            if frag is not None:
                w["fragment_bytes"] = frag
        return Verdict.fail("OK without a valid block for the request", **w)
    return PASS


def mem_pool_free_post(s: KernelState, t: str) -> Verdict:
    lc = s.loc(t)
    if not inv(s):
        return Verdict.fail("invariant does not hold on completion", thread=t)
    if lc.allocating_node is not None or lc.freeing_node is not None:
        return Verdict.fail("allocating/freeing node left set after release", thread=t)
    return PASS


def check_event_postcondition(s: KernelState, t: str) -> Verdict:
    """Evaluate the completed event's postcondition on its final state."""
    ev = s.loc(t).event
    if ev == "alloc":
        return mem_pool_alloc_post(s, t)
    if ev == "free":
        return mem_pool_free_post(s, t)
    return PASS


MEM_POOL_SPEC = GuaranteeSpec(
    guar=mem_pool_guar,
    rely=mem_pool_rely,
    pre=alloc_pre,
    post=check_event_postcondition,
)
