# -*- coding: utf-8 -*-
"""
kernel_sim.py
Deterministic mono-core kernel model: thread event systems + scheduler + timer.

- enabled() は正準順（cur の thread step → schedule(t') を t' 昇順 → tick）で候補を返す
  trace の choice はこの並びの index
- run_random: seed 付き一様選択。quiescence（全 script 完了）か max_steps で停止
- explore: digest で枝刈りする幅優先探索（違反ごとに最短スケジュールが付く）
- replay: 記録済み choice 列をそのまま再実行し、digest を 1 entry ずつ照合
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

from .errors import ReplayError, StepError
from .mem_services import AllocOp, MemServices, Step, StepKind
from .pool_core import BlockId, wait_q_remove
from .state import Domain, KernelState, ThreadState
from .verdicts import Violation

SCHEDULE = "schedule"
TICK = "tick"


@dataclass(frozen=True)
class Candidate:
    domain: Domain
    label: str
    kind: StepKind
    apply: Callable[[KernelState], KernelState]


@dataclass(frozen=True)
class TraceEntry:
    index: int
    domain: Domain
    event_name: str
    step_kind: StepKind
    choice: int
    pre_digest: str
    post_digest: str

    def to_line(self) -> str:
        return (
            f"{self.index} {self.domain} {self.event_name} {self.step_kind.value} "
            f"{self.choice} {self.pre_digest} {self.post_digest}"
        )

    @staticmethod
    def from_line(line: str) -> "TraceEntry":
        parts = line.split()
        if len(parts) != 7:
            raise ReplayError(f"malformed trace record: {line!r}")
        try:
            return TraceEntry(
                index=int(parts[0]),
                domain=Domain.parse(parts[1]),
                event_name=parts[2],
                step_kind=StepKind(parts[3]),
                choice=int(parts[4]),
                pre_digest=parts[5],
                post_digest=parts[6],
            )
        except ValueError as e:
            raise ReplayError(f"malformed trace record: {line!r} ({e})") from e


# ---------------------------------------------------------------------------
# scheduler / timer events
# ---------------------------------------------------------------------------

def step_schedule(s: KernelState, t: str) -> KernelState:
    """Previous cur (if RUNNING) becomes READY, t becomes RUNNING."""
    st = s.thd_state.get(t)
    if s.cur == t and st is ThreadState.RUNNING:
        return s
    if st is not ThreadState.READY:
        raise StepError(f"schedule({t}): thread is {st.value if st else 'unknown'}, not READY")
    thd = s.thd_state
    if s.cur is not None and thd.get(s.cur) is ThreadState.RUNNING:
        thd = thd.set(s.cur, ThreadState.READY)
    thd = thd.set(t, ThreadState.RUNNING)
    return replace(s, cur=t, thd_state=thd)


def step_tick(s: KernelState) -> KernelState:
    """tick + 1; BLOCKED TICKS-waiters whose deadline has passed become READY."""
    new_tick = s.tick + 1
    s2 = replace(s, tick=new_tick)
    for pid in s.mem_pools:
        pool = s2.pool(pid)
        for w in pool.wait_q:
            lc = s2.loc(w)
            to = lc.ev_timeout
            if to is not None and to.kind == "TICKS" and lc.endt < new_tick:
                s2 = s2.with_pool(wait_q_remove(s2.pool(pid), w)).with_thd_state(w, ThreadState.READY)
    return s2


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

# (pre, post, acting thread) -> mutated post
Injector = Callable[[KernelState, KernelState, str], KernelState]


class Kernel:
    """
    Parallel composition of every thread's event system, the scheduler and the timer.
    max_ticks: 探索用の tick 上限（None = 無制限, 0 = timer 無効）。
    """

    def __init__(
        self,
        services: MemServices,
        max_ticks: Optional[int] = None,
        injector: Optional[Injector] = None,
    ):
        self.services = services
        self.max_ticks = max_ticks
        self.injector = injector

    def enabled(self, s: KernelState) -> List[Candidate]:
        out: List[Candidate] = []
        t = s.cur
        if t is not None and s.thd_state.get(t) is ThreadState.RUNNING:
            step = self.services.next_step(s, t)
            if step is not None and step.enabled(s):
                out.append(self._thread_candidate(step))
        for r in sorted(s.thd_state):
            if s.thd_state[r] is ThreadState.READY:
                out.append(Candidate(
                    domain=Domain.scheduler(),
                    label=f"{SCHEDULE}({r})",
                    kind=StepKind.ATOMIC_BLOCK,
                    apply=lambda st, _r=r: step_schedule(st, _r),
                ))
        if self.max_ticks is None or s.tick < self.max_ticks:
            out.append(Candidate(
                domain=Domain.timer(), label=TICK, kind=StepKind.ATOMIC_BLOCK, apply=step_tick,
            ))
        return out

    def _thread_candidate(self, step: Step) -> Candidate:
        base = step.action
        if self.injector is not None and step.kind is StepKind.EVENT_OCCUR:
            inj = self.injector
            t = step.thread
            return Candidate(
                Domain.of_thread(t), step.label, step.kind, lambda st: inj(st, base(st), t),
            )
        return Candidate(Domain.of_thread(step.thread), step.label, step.kind, base)

    def step(self, s: KernelState, choice: int) -> Tuple[Candidate, KernelState]:
        cands = self.enabled(s)
        if choice < 0 or choice >= len(cands):
            raise StepError(f"choice {choice} out of range ({len(cands)} enabled)")
        c = cands[choice]
        return c, c.apply(s)


def make_entry(index: int, c: Candidate, choice: int, pre: KernelState, post: KernelState) -> TraceEntry:
    return TraceEntry(
        index=index,
        domain=c.domain,
        event_name=c.label,
        step_kind=c.kind,
        choice=choice,
        pre_digest=pre.digest,
        post_digest=post.digest,
    )


# ---------------------------------------------------------------------------
# run results
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    entries: List[TraceEntry] = field(default_factory=list)
    violations: List[Violation] = field(default_factory=list)
    termination: List[Dict[str, object]] = field(default_factory=list)
    steps: int = 0
    quiescent: bool = False
    stop_reason: str = ""
    partial: bool = False
    final_state: Optional[KernelState] = None


def termination_verdicts(services: MemServices, s: KernelState, completed: Sequence[Dict[str, object]]) -> List[Dict[str, object]]:
    """
    Completed events → TERMINATED. A pending alloc that last observed no level
    large enough can never succeed → NONTERMINATION; anything else pending → BOUND_EXHAUSTED.
    """
    out = [dict(x) for x in completed]
    for t in sorted(services.scripts):
        lc = s.loc(t)
        ops = services.scripts[t]
        for k in range(lc.op_index, len(ops)):
            started = k == lc.op_index and lc.pc is not None
            ev = lc.event if started else ("alloc" if isinstance(ops[k], AllocOp) else "free")
            if started and ev == "alloc" and lc.size_err:
                verdict = "NONTERMINATION"
            else:
                verdict = "BOUND_EXHAUSTED"
            out.append({"thread": t, "op_index": k, "event": ev, "verdict": verdict})
    return out


def _completion(pre: KernelState, post: KernelState, c: Candidate) -> Optional[Dict[str, object]]:
    t = c.domain.thread
    if t is None or post.loc(t).op_index <= pre.loc(t).op_index:
        return None
    lc = post.loc(t)
    return {
        "thread": t,
        "op_index": pre.loc(t).op_index,
        "event": lc.event,
        "verdict": "TERMINATED",
        "ret": lc.ret.value if lc.ret else None,
    }


# ---------------------------------------------------------------------------
# random runs
# ---------------------------------------------------------------------------

def run_random(
    kernel: Kernel,
    s0: KernelState,
    seed: int,
    max_steps: int,
    monitor,
    on_violation: Optional[Callable[[Violation], None]] = None,
    fail_fast: bool = False,
) -> RunResult:
    rng = random.Random(seed)
    res = RunResult()
    s = s0
    completed: List[Dict[str, object]] = []
    pairs: List[Tuple[Candidate, KernelState, KernelState]] = []

    def emit(vs: List[Violation]) -> bool:
        for v in vs:
            res.violations.append(v)
            if on_violation:
                on_violation(v)
        return bool(vs) and fail_fast

    if emit(monitor.check_state(s, 0)):
        res.stop_reason = "fail_fast"
    while not res.stop_reason:
        if kernel.services.all_done(s):
            res.quiescent = True
            res.stop_reason = "quiescent"
            break
        if res.steps >= max_steps:
            res.stop_reason = "max_steps"
            break
        cands = kernel.enabled(s)
        if not cands:
            res.stop_reason = "no_enabled_step"
            break
        choice = rng.randrange(len(cands))
        c = cands[choice]
        post = c.apply(s)
        idx = res.steps
        res.entries.append(make_entry(idx, c, choice, s, post))
        pairs.append((c, s, post))
        res.steps += 1
        done = _completion(s, post, c)
        if done:
            completed.append(done)
        stop = emit(monitor.check_transition(s, post, c, idx))
        stop = emit(monitor.check_state(post, idx + 1)) or stop
        s = post
        if stop:
            res.stop_reason = "fail_fast"
    emit(monitor.check_trace(pairs))
    res.final_state = s
    res.termination = termination_verdicts(kernel.services, s, completed)
    return res


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def replay(
    kernel: Kernel,
    s0: KernelState,
    recorded: Sequence[TraceEntry],
    monitor,
    expected_steps: Optional[int] = None,
    on_violation: Optional[Callable[[Violation], None]] = None,
) -> RunResult:
    """Re-execute the recorded choices; any digest or label divergence is a ReplayError."""
    res = RunResult()
    s = s0
    completed: List[Dict[str, object]] = []
    pairs: List[Tuple[Candidate, KernelState, KernelState]] = []

    def emit(vs: List[Violation]) -> None:
        for v in vs:
            res.violations.append(v)
            if on_violation:
                on_violation(v)

    emit(monitor.check_state(s, 0))
    for k, rec in enumerate(recorded):
        if rec.index != k:
            raise ReplayError(f"trace record {k} carries index {rec.index}")
        if rec.pre_digest != s.digest:
            raise ReplayError(f"step {k}: pre digest {rec.pre_digest} != state {s.digest}")
        cands = kernel.enabled(s)
        if rec.choice >= len(cands):
            raise ReplayError(f"step {k}: choice {rec.choice} but only {len(cands)} enabled")
        c = cands[rec.choice]
        if c.label != rec.event_name or c.domain != rec.domain:
            raise ReplayError(f"step {k}: recorded {rec.domain} {rec.event_name}, got {c.domain} {c.label}")
        post = c.apply(s)
        if post.digest != rec.post_digest:
            raise ReplayError(f"step {k}: post digest {rec.post_digest} != state {post.digest}")
        res.entries.append(make_entry(k, c, rec.choice, s, post))
        pairs.append((c, s, post))
        done = _completion(s, post, c)
        if done:
            completed.append(done)
        emit(monitor.check_transition(s, post, c, k))
        emit(monitor.check_state(post, k + 1))
        s = post
        res.steps += 1
    emit(monitor.check_trace(pairs))
    res.quiescent = kernel.services.all_done(s)
    res.partial = expected_steps is not None and res.steps < expected_steps
    res.stop_reason = "partial" if res.partial else ("quiescent" if res.quiescent else "end_of_trace")
    res.final_state = s
    res.termination = termination_verdicts(kernel.services, s, completed)
    return res


# ---------------------------------------------------------------------------
# exhaustive exploration
# ---------------------------------------------------------------------------

@dataclass
class ExplorationReport:
    states: int = 0
    transitions: int = 0
    max_depth: int = 0
    bound_exhausted: bool = False
    complete_states: int = 0
    violations: List[Violation] = field(default_factory=list)
    violation_counts: Dict[str, int] = field(default_factory=dict)
    stopped_early: bool = False

    @property
    def exhaustive(self) -> bool:
        return not self.bound_exhausted and not self.stopped_early


def _schedule_to(
    parents: Dict[str, Tuple[Optional[str], int, str]], digest: str
) -> List[Tuple[int, str]]:
    path: List[Tuple[int, str]] = []
    d: Optional[str] = digest
    while d is not None:
        parent, choice, label = parents[d]
        if parent is None:
            break
        path.append((choice, label))
        d = parent
    path.reverse()
    return path


def _event_span(
    run: Tuple[Tuple[Candidate, KernelState, KernelState], ...],
    c: Candidate,
    s: KernelState,
    post: KernelState,
) -> Tuple[Tuple[Candidate, KernelState, KernelState], ...]:
    """Extend run with (c, s, post) when it is the same thread's same event, else start over."""
    step = ((c, s, post),)
    if not run or c.domain.kind != "THREAD":
        return step
    last_c, last_pre, _ = run[-1]
    t = c.domain.thread
    if last_c.domain != c.domain or last_pre.loc(t).op_index != s.loc(t).op_index:
        return step
    return run + step


def explore(
    kernel: Kernel,
    s0: KernelState,
    depth_bound: int,
    monitor,
    max_violations_per_check: int = 20,
    on_violation: Optional[Callable[[Violation], None]] = None,
    fail_fast: bool = False,
) -> ExplorationReport:
    """
    Breadth-first enumeration of every schedule up to depth_bound with
    digest pruning. Breadth-first order makes the schedule attached to each
    violation a shortest one.

    Event integrity is checked over the contiguous run of the acting event's
    steps that ends at each transition, so a span that starts several steps
    back along the parent chain is judged as one event.
    """
    rep = ExplorationReport()
    parents: Dict[str, Tuple[Optional[str], int, str]] = {s0.digest: (None, -1, "")}
    queue: Deque[Tuple[KernelState, int]] = deque([(s0, 0)])
    kept: Dict[str, int] = {}
    # digest -> steps of the event run that ends in that state (queued states only)
    runs: Dict[str, Tuple[Tuple[Candidate, KernelState, KernelState], ...]] = {}

    def record(vs: List[Violation], digest: str, extra: Optional[Tuple[int, str]] = None) -> bool:
        # monitor already drops repeats of the same (check, witness)
        for v in vs:
            if kept.get(v.check_name, 0) >= max_violations_per_check:
                continue
            kept[v.check_name] = kept.get(v.check_name, 0) + 1
            sched = _schedule_to(parents, digest)
            if extra is not None:
                sched.append(extra)
            v = v.with_schedule(sched)
            rep.violations.append(v)
            if on_violation:
                on_violation(v)
        return bool(vs) and fail_fast

    while queue:
        s, depth = queue.popleft()
        rep.states += 1
        run_here = runs.pop(s.digest, ())
        rep.max_depth = max(rep.max_depth, depth)
        if kernel.services.all_done(s):
            rep.complete_states += 1
        if record(monitor.check_state(s, depth), s.digest):
            rep.stopped_early = True
            break
        cands = kernel.enabled(s)
        if depth >= depth_bound:
            for c in cands:
                if c.apply(s).digest not in parents:
                    rep.bound_exhausted = True
                    break
            continue
        stop = False
        for choice, c in enumerate(cands):
            post = c.apply(s)
            rep.transitions += 1
            vs = monitor.check_transition(s, post, c, depth)
            span = _event_span(run_here, c, s, post)
            vs += monitor.check_trace(list(span))
            if record(vs, s.digest, (choice, c.label)):
                stop = True
                break
            if post.digest not in parents:
                parents[post.digest] = (s.digest, choice, c.label)
                if c.domain.kind == "THREAD":
                    runs[post.digest] = span
                queue.append((post, depth + 1))
        if stop:
            rep.stopped_early = True
            break
    rep.violation_counts = dict(getattr(monitor, "counts", {}))
    return rep


def schedule_states(kernel: Kernel, s0: KernelState, schedule: Sequence[Tuple[int, str]]) -> List[Tuple[Candidate, KernelState, KernelState]]:
    """Re-run a (choice, label) schedule from s0; used to turn a counterexample into a trace."""
    out = []
    s = s0
    for choice, label in schedule:
        c, post = kernel.step(s, choice)
        if c.label != label:
            raise ReplayError(f"schedule diverged: expected {label}, got {c.label}")
        out.append((c, s, post))
        s = post
    return out


# ---------------------------------------------------------------------------
# fault injection (checker self-test)
# ---------------------------------------------------------------------------

INJECTIONS = ("mblocks_leak", "tick_write", "foreign_local")


def _other_thread(s: KernelState, t: str) -> str:
    others = [x for x in sorted(s.thd_state) if x != t]
    return others[0] if others else t


def make_injector(name: str) -> Injector:
    """
    Mutate the post-state of every event occurrence:
    - mblocks_leak: a phantom block appears in another thread's mblocks
    - tick_write: the thread advances tick
    - foreign_local: the thread writes a local of another thread
    """
    if name == "mblocks_leak":
        def inj(pre: KernelState, post: KernelState, t: str) -> KernelState:
            o = _other_thread(post, t)
            pool = post.pool(post.mem_pools[0])
            phantom = BlockId(pool.config.pool_id, 0, 0, pool.config.buf)
            return post.with_mblocks(o, post.mblocks[o].add(phantom))
    elif name == "tick_write":
        def inj(pre: KernelState, post: KernelState, t: str) -> KernelState:
            return replace(post, tick=post.tick + 1)
    elif name == "foreign_local":
        def inj(pre: KernelState, post: KernelState, t: str) -> KernelState:
            o = _other_thread(post, t)
            return post.with_locals(o, bb=post.loc(o).bb + 1)
    else:
        raise ValueError(f"unknown injection: {name!r} (expected one of {', '.join(INJECTIONS)})")
    return inj
