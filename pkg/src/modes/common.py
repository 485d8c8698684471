# -*- coding: utf-8 -*-
"""
common.py
Pieces shared by the run modes: kernel/monitor assembly, violation streaming, report skeleton.
"""

from __future__ import annotations

from typing import Callable, List, Optional, Sequence

from ..audit_logger import AuditLogger
from ..kernel_sim import Kernel, RunResult, TraceEntry, make_entry, make_injector, schedule_states
from ..mem_services import MemServices
from ..monitor import CHECK_GROUPS, Monitor
from ..report import RunReport
from ..scenario_spec import Scenario
from ..sim_cfg import SimCfg
from ..state import KernelState
from ..trace_store import make_header, write_trace
from ..verdicts import Violation

CONFIG_SAMPLE = 64


def build_kernel(scenario: Scenario, cfg: SimCfg, max_ticks: Optional[int], check_every: int = 1):
    services = MemServices(scenario.scripts(), scenario.bugs)
    injector = make_injector(cfg.inject) if cfg.inject else None
    kernel = Kernel(services, max_ticks=max_ticks, injector=injector)
    monitor = Monitor(
        scenario.checks, services, strict_free=cfg.strict_free, check_every=check_every,
    )
    return kernel, monitor, scenario.initial_state()


def streamer(audit: AuditLogger) -> Callable[[Violation], None]:
    def on_violation(v: Violation) -> None:
        audit.event("violation", **v.to_dict())

    return on_violation


def base_report(scenario: Scenario, cfg: SimCfg) -> RunReport:
    return RunReport(
        scenario=scenario.name,
        scenario_digest=scenario.digest,
        mode=scenario.mode,
        seed=scenario.seed,
        bugs=str(scenario.bugs),
        checks=[c for c in CHECK_GROUPS if c in scenario.checks],
        inject=cfg.inject,
    )


def sample_states(kernel: Kernel, s0: KernelState, choices: Sequence[int], limit: int = CONFIG_SAMPLE) -> List[KernelState]:
    """States along a choice sequence (first `limit`); input for the policy / identity checks."""
    out = [s0]
    s = s0
    for choice in choices[: limit - 1]:
        _, s = kernel.step(s, choice)
        out.append(s)
    return out


def fill_from_run(rep: RunReport, res: RunResult, audit: AuditLogger) -> None:
    rep.states = res.steps + 1
    rep.transitions = res.steps
    rep.max_depth = res.steps
    rep.quiescent = res.quiescent
    rep.partial = res.partial
    rep.stop_reason = res.stop_reason
    rep.termination = res.termination
    rep.violations.extend(res.violations)
    rep.bound_exhausted = not res.quiescent and res.stop_reason == "max_steps"
    for t in res.termination:
        if t.get("verdict") != "TERMINATED":
            audit.event("termination", **t)
    if rep.bound_exhausted:
        audit.event("bound_exhausted", steps=res.steps, stop_reason=res.stop_reason)


def finish_config_checks(rep: RunReport, monitor: Monitor, states: Sequence[KernelState],
                         on_violation: Callable[[Violation], None]) -> None:
    for v in monitor.check_config(states):
        rep.violations.append(v)
        on_violation(v)
    rep.violation_counts = dict(monitor.counts)


def save_trace(path: str, scenario: Scenario, cfg: SimCfg, max_ticks: Optional[int],
               entries: Sequence[TraceEntry], audit: AuditLogger) -> None:
    header = make_header(
        scenario.digest, scenario.mode, scenario.seed, str(scenario.bugs), cfg.inject,
        max_ticks, len(entries),
    )
    write_trace(path, header, entries)
    audit.event("trace_written", path=path, steps=len(entries))


def entries_for_schedule(kernel: Kernel, s0: KernelState, schedule) -> List[TraceEntry]:
    out: List[TraceEntry] = []
    for k, ((choice, _), (c, pre, post)) in enumerate(zip(schedule, schedule_states(kernel, s0, schedule))):
        out.append(make_entry(k, c, choice, pre, post))
    return out
