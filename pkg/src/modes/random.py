# -*- coding: utf-8 -*-
"""
random.py
目的：
- seed 付き一様スケジューラで 1 本の実行を作り、全 check を毎 step かける
- 同じ (scenario, seed, flags) なら trace はビット単位で同一
- timer には上限を付けない（bug3 の NONTERMINATION はここで出る）
"""

from __future__ import annotations

from ..kernel_sim import run_random
from ..report import RunReport
from .common import (
    base_report,
    build_kernel,
    fill_from_run,
    finish_config_checks,
    sample_states,
    save_trace,
    streamer,
)


def run(*, scenario, cfg, audit, **kwargs) -> RunReport:
    kernel, monitor, s0 = build_kernel(scenario, cfg, max_ticks=None, check_every=cfg.check_every)
    on_violation = streamer(audit)
    res = run_random(
        kernel, s0, scenario.seed, scenario.max_steps, monitor,
        on_violation=on_violation, fail_fast=cfg.fail_fast,
    )
    rep = base_report(scenario, cfg)
    fill_from_run(rep, res, audit)
    finish_config_checks(rep, monitor, sample_states(kernel, s0, [e.choice for e in res.entries]), on_violation)
    if cfg.trace_out:
        save_trace(cfg.trace_out, scenario, cfg, None, res.entries, audit)
    return rep
