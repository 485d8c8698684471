# -*- coding: utf-8 -*-
"""
exhaustive.py
目的：
- depth_bound までの全スケジュールを幅優先で列挙（digest で枝刈り）
- 違反には最短の再現スケジュールが付く。--trace-out には最初の違反の反例を trace として書く
- ここでは check_every を無視して全 state を検査する
"""

from __future__ import annotations

from ..kernel_sim import explore
from ..report import RunReport
from .common import (
    base_report,
    build_kernel,
    entries_for_schedule,
    finish_config_checks,
    sample_states,
    save_trace,
    streamer,
)


def run(*, scenario, cfg, audit, **kwargs) -> RunReport:
    kernel, monitor, s0 = build_kernel(scenario, cfg, max_ticks=scenario.max_ticks)
    on_violation = streamer(audit)
    ex = explore(
        kernel, s0, scenario.depth_bound, monitor,
        on_violation=on_violation, fail_fast=cfg.fail_fast,
    )

    rep = base_report(scenario, cfg)
    rep.states = ex.states
    rep.transitions = ex.transitions
    rep.max_depth = ex.max_depth
    rep.complete_states = ex.complete_states
    rep.exhaustive = ex.exhaustive
    rep.bound_exhausted = ex.bound_exhausted
    rep.stop_reason = "fail_fast" if ex.stopped_early else ("bound" if ex.bound_exhausted else "exhausted")
    rep.violations.extend(ex.violations)
    if ex.bound_exhausted:
        audit.event("bound_exhausted", depth_bound=scenario.depth_bound, states=ex.states)

    first = next((v for v in ex.violations if v.schedule is not None), None)
    choices = [c for c, _ in first.schedule] if first is not None else []
    finish_config_checks(rep, monitor, sample_states(kernel, s0, choices), on_violation)

    if cfg.trace_out:
        entries = entries_for_schedule(kernel, s0, first.schedule) if first is not None else []
        save_trace(cfg.trace_out, scenario, cfg, scenario.max_ticks, entries, audit)
    return rep
