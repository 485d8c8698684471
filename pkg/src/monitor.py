# -*- coding: utf-8 -*-
"""
monitor.py
Runs the selected check groups over states, transitions and traces.

- check group は invariants / mem_part / integrity / guarantee / rely /
  postconditions / termination / checkpoints
- 同じ (check_name, witness) の違反は 1 回だけ返す。件数は counts に全部数える
- check_every > 1 のとき state check を間引く（transition check は毎回）
"""

from __future__ import annotations

from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .errors import ConfigError
from .mem_services import MemServices, StepKind, alloc_pre, free_checkpoint, free_pre
from .safety_checker import (
    check_all_invariants,
    check_mem_part,
    partition_oracle,
    theorem1_holds,
)
from .security_checker import (
    MEM_POOL_SPEC,
    ZEPHYR_POLICY,
    GuaranteeSpec,
    SecurityConfig,
    check_event_integrity,
    check_guarantee_identity,
    check_guarantee_step,
    check_integrity_step,
    check_policy,
    check_rely_step,
    domains_of,
)
from .state import KernelState
from .verdicts import Verdict, Violation

CHECK_GROUPS: Tuple[str, ...] = (
    "invariants",
    "mem_part",
    "integrity",
    "guarantee",
    "rely",
    "postconditions",
    "termination",
    "checkpoints",
)


def parse_checks(text: Optional[str]) -> FrozenSet[str]:
    """'all'（既定）/ 'none' / カンマ区切り。"""
    s = (text or "").strip().lower()
    if s in ("", "all"):
        return frozenset(CHECK_GROUPS)
    if s == "none":
        return frozenset()
    names = {x.strip() for x in s.split(",") if x.strip()}
    unknown = names - set(CHECK_GROUPS)
    if unknown:
        raise ConfigError(
            f"unknown check(s): {', '.join(sorted(unknown))} (expected {', '.join(CHECK_GROUPS)})"
        )
    return frozenset(names)


class Monitor:
    def __init__(
        self,
        checks: Iterable[str],
        services: MemServices,
        strict_free: bool = False,
        check_every: int = 1,
        policy: SecurityConfig = ZEPHYR_POLICY,
        spec: GuaranteeSpec = MEM_POOL_SPEC,
    ):
        self.checks = frozenset(checks)
        self.services = services
        self.strict_free = strict_free
        self.check_every = max(1, int(check_every))
        self.policy = policy
        self.spec = spec
        self.counts: Dict[str, int] = {}
        self.states_checked = 0
        self._seen: Set[Tuple[str, str]] = set()

    def enabled(self, group: str) -> bool:
        return group in self.checks

    # -- bookkeeping -------------------------------------------------------

    def _emit(
        self,
        out: List[Violation],
        step: int,
        name: str,
        verdict: Verdict,
        s: KernelState,
        /,
        **extra: object,
    ) -> None:
        if verdict.ok:
            return
        self.counts[name] = self.counts.get(name, 0) + 1
        v = Violation.of(step, name, verdict, s.digest, **extra)
        key = (name, v.witness_key())
        if key in self._seen:
            return
        self._seen.add(key)
        out.append(v)

    # -- per state ---------------------------------------------------------

    def check_state(self, s: KernelState, step: int) -> List[Violation]:
        out: List[Violation] = []
        if step % self.check_every:
            return out
        self.states_checked += 1
        if self.enabled("invariants"):
            rep = check_all_invariants(s, include_mem_part=False)
            for name, v in rep.failures().items():
                self._emit(out, step, name, v, s)
        if self.enabled("mem_part"):
            mp = check_mem_part(s)
            self._emit(out, step, "mem_part", mp, s)
            self._emit(out, step, "theorem1", theorem1_holds(s), s)
            oracle = partition_oracle(s)
            if oracle.ok != mp.ok:
                self._emit(
                    out, step, "mem_part_oracle",
                    Verdict.fail(
                        "relative scan and interval oracle disagree",
                        scan=mp.ok, oracle=oracle.ok, **(mp.witness or oracle.witness or {}),
                    ),
                    s,
                )
        return out

    # -- per transition ----------------------------------------------------

    def check_transition(self, pre: KernelState, post: KernelState, c, step: int) -> List[Violation]:
        out: List[Violation] = []
        label = c.label
        t = c.domain.thread
        at = {"label": label}

        if self.enabled("integrity"):
            self._emit(out, step, "integrity", check_integrity_step(pre, post, label, self.policy), post, **at)

        guar = None
        if self.enabled("guarantee") or self.enabled("rely"):
            guar = check_guarantee_step(pre, post, label, self.spec)
        if self.enabled("guarantee"):
            self._emit(out, step, "guarantee", guar, post, **at)

        if self.enabled("rely"):
            for o in sorted(pre.locals):
                if o == t:
                    continue
                r = check_rely_step(pre, post, label, o, self.spec)
                self._emit(out, step, "rely", r, post, **at)
                if guar is not None and guar.ok and not r.ok:
                    self._emit(
                        out, step, "guarantee_rely_duality",
                        Verdict.fail("guarantee held but rely of another thread failed",
                                     observer=o, **(r.witness or {})),
                        post, **at,
                    )

        if t is None:
            return out

        lc0 = pre.loc(t)
        lc1 = post.loc(t)
        completed = lc1.op_index > lc0.op_index
        pc = label.split("@", 1)[0]

        if self.enabled("postconditions"):
            if c.kind is StepKind.EVENT_OCCUR:
                self._check_precondition(out, step, pre, post, t, at)
            if completed:
                self._emit(out, step, "postcondition", self.spec.post(post, t), post,
                           op_index=lc0.op_index, **at)

        if self.enabled("termination"):
            self._check_termination(out, step, pre, post, t, pc, completed, at)

        if self.enabled("checkpoints") and not completed:
            msg = free_checkpoint(post, t)
            if msg is not None:
                self._emit(out, step, "free_checkpoint",
                           Verdict.fail(msg, thread=t, pc=lc1.pc), post, **at)
        return out

    def _check_precondition(self, out, step, pre, post, t, at) -> None:
        lc1 = post.loc(t)
        if lc1.event == "alloc":
            ok = alloc_pre(pre, t)
        elif lc1.ev_block is not None:
            ok = free_pre(pre, t, lc1.ev_block)
        else:
            ok = alloc_pre(pre, t)
            if self.strict_free:
                self._emit(out, step, "free_unowned",
                           Verdict.fail("free of a block the thread does not own",
                                        thread=t, op_index=pre.loc(t).op_index),
                           post, **at)
        if not ok:
            self._emit(out, step, "precondition",
                       Verdict.fail(f"{lc1.event} started outside its precondition", thread=t),
                       pre, **at)

    def _check_termination(self, out, step, pre, post, t, pc, completed, at) -> None:
        lc = post.loc(t)
        if pc == "alloc.pend" and lc.size_err:
            self._emit(out, step, "termination",
                       Verdict.fail("NONTERMINATION: pending on a request no level can satisfy",
                                    thread=t, size=lc.ev_size, pool=lc.ev_pool),
                       post, verdict="NONTERMINATION", **at)
        if pc == "free.wake_all" and lc.ev_pool is not None and post.pool(lc.ev_pool).wait_q:
            self._emit(out, step, "termination",
                       Verdict.fail("wait queue not drained", thread=t, pool=lc.ev_pool),
                       post, **at)
        if completed and lc.event == "free" and lc.ev_block is not None:
            if lc.free_iters > lc.ev_block.level + 1:
                self._emit(out, step, "termination",
                           Verdict.fail("release loop ran past the root",
                                        thread=t, iterations=lc.free_iters, level=lc.ev_block.level),
                           post, **at)

    # -- per trace ---------------------------------------------------------

    def check_trace(self, pairs: Sequence[Tuple[object, KernelState, KernelState]]) -> List[Violation]:
        out: List[Violation] = []
        if not pairs or not self.enabled("integrity"):
            return out
        steps = [(c.label, pre, post) for c, pre, post in pairs]
        v = check_event_integrity(steps, self.policy)
        if not v.ok:
            first = int((v.witness or {}).get("first_step", 0))
            last = int((v.witness or {}).get("last_step", first))
            step_clean = all(
                check_integrity_step(p, q, lbl, self.policy).ok for lbl, p, q in steps[first:last + 1]
            )
            self._emit(out, first, "event_integrity", v, steps[last][2], step_integrity_clean=step_clean)
        return out

    def check_config(self, states: Sequence[KernelState]) -> List[Violation]:
        """Policy laws and guarantee reflexivity on sampled states."""
        out: List[Violation] = []
        if not states:
            return out
        if self.enabled("integrity"):
            self._emit(out, 0, "policy", check_policy(self.policy, domains_of(states[0]), states), states[0])
        if self.enabled("guarantee"):
            self._emit(out, 0, "guarantee_identity", check_guarantee_identity(self.spec, states), states[0])
        return out
