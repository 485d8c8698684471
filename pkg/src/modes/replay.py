# -*- coding: utf-8 -*-
"""
replay.py
目的：
- 記録済み trace の choice 列をそのまま再実行し、digest を 1 entry ずつ照合する
- scenario / bugs / inject がヘッダと違えば実行前に ReplayError
- 途中で切れた trace は prefix だけ再実行して partial を報告
"""

from __future__ import annotations

from ..errors import ConfigError
from ..kernel_sim import replay
from ..report import RunReport
from ..trace_store import header_max_ticks, read_trace
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
    if not cfg.trace_in:
        raise ConfigError("replay mode needs --trace (MEMPOOL_TRACE_IN)")
    tf = read_trace(cfg.trace_in)
    tf.check_against(scenario.digest, str(scenario.bugs), cfg.inject)
    max_ticks = header_max_ticks(tf)

    kernel, monitor, s0 = build_kernel(scenario, cfg, max_ticks=max_ticks, check_every=cfg.check_every)
    on_violation = streamer(audit)
    res = replay(
        kernel, s0, tf.entries, monitor,
        expected_steps=tf.expected_steps, on_violation=on_violation,
    )
    rep = base_report(scenario, cfg)
    fill_from_run(rep, res, audit)
    finish_config_checks(rep, monitor, sample_states(kernel, s0, [e.choice for e in res.entries]), on_violation)
    if cfg.trace_out:
        save_trace(cfg.trace_out, scenario, cfg, max_ticks, res.entries, audit)
    return rep
