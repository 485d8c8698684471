# -*- coding: utf-8 -*-
"""
sim_cfg.py
Run configuration from the environment (MEMPOOL_*).

- 空の env 値は「指定なし」。数値が壊れていたら run 開始前に ConfigError
- 優先順位: flag/env > scenario file > 既定値（resolve() で確定）
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import FrozenSet, Optional

from .errors import ConfigError
from .kernel_sim import INJECTIONS
from .mem_services import BugConfig
from .monitor import parse_checks
from .scenario_spec import MODES, Scenario


def _env(key: str, default: str = "") -> str:
    return os.environ.get(key, default).strip()


def _must_env(key: str) -> str:
    v = _env(key, "")
    if not v:
        raise ConfigError(f"Missing required env: {key}")
    return v


def _env_int(key: str, default: Optional[int]) -> Optional[int]:
    v = _env(key, "")
    if not v:
        return default
    try:
        n = int(v)
    except ValueError as e:
        raise ConfigError(f"{key}: expected an integer, got {v!r}") from e
    if n < 0:
        raise ConfigError(f"{key}: must be >= 0 (got {n})")
    return n


def _env_bool(key: str, default: bool = False) -> bool:
    v = _env(key, "").lower()
    if not v:
        return default
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


@dataclass(frozen=True)
class SimCfg:
    # system
    logs_dir: str
    scenario_path: str

    # run controls (None = scenario の値を使う)
    mode: Optional[str]
    seed: Optional[int]
    max_steps: Optional[int]
    depth: Optional[int]
    max_ticks: Optional[int]
    bugs: Optional[BugConfig]
    checks: Optional[FrozenSet[str]]

    # outputs
    trace_out: str
    trace_in: str
    report_out: str
    report_xlsx: str

    # switches
    fail_fast: bool
    inject: str
    strict_free: bool
    strict_bounds: bool
    check_every: int

    @classmethod
    def from_env(cls) -> "SimCfg":
        mode = _env("MEMPOOL_MODE") or None
        if mode is not None and mode not in MODES:
            raise ConfigError(f"MEMPOOL_MODE: expected one of {', '.join(MODES)}, got {mode!r}")

        bugs_txt = _env("MEMPOOL_BUGS")
        try:
            bugs = BugConfig.parse(bugs_txt) if bugs_txt else None
        except ValueError as e:
            raise ConfigError(f"MEMPOOL_BUGS: {e}") from e
        checks_txt = _env("MEMPOOL_CHECKS")
        checks = parse_checks(checks_txt) if checks_txt else None

        inject = _env("MEMPOOL_INJECT")
        if inject and inject not in INJECTIONS:
            raise ConfigError(f"MEMPOOL_INJECT: expected one of {', '.join(INJECTIONS)}, got {inject!r}")

        check_every = _env_int("MEMPOOL_CHECK_EVERY", 1) or 1

        return cls(
            logs_dir=_env("LOGS_DIR"),
            scenario_path=_must_env("MEMPOOL_SCENARIO"),

            mode=mode,
            seed=_env_int("MEMPOOL_SEED", None),
            max_steps=_env_int("MEMPOOL_MAX_STEPS", None),
            depth=_env_int("MEMPOOL_DEPTH", None),
            max_ticks=_env_int("MEMPOOL_MAX_TICKS", None),
            bugs=bugs,
            checks=checks,

            trace_out=_env("MEMPOOL_TRACE_OUT"),
            trace_in=_env("MEMPOOL_TRACE_IN"),
            report_out=_env("MEMPOOL_REPORT_OUT"),
            report_xlsx=_env("MEMPOOL_REPORT_XLSX"),

            fail_fast=_env_bool("MEMPOOL_FAIL_FAST"),
            inject=inject,
            strict_free=_env_bool("MEMPOOL_STRICT_FREE"),
            strict_bounds=_env_bool("MEMPOOL_STRICT_BOUNDS"),
            check_every=check_every,
        )

    def resolve(self, scenario: Scenario) -> Scenario:
        """Scenario with every explicit flag/env value applied on top."""
        changes = {}
        for attr, value in (
            ("mode", self.mode),
            ("seed", self.seed),
            ("max_steps", self.max_steps),
            ("depth_bound", self.depth),
            ("max_ticks", self.max_ticks),
            ("bugs", self.bugs),
            ("checks", self.checks),
        ):
            if value is not None:
                changes[attr] = value
        return replace(scenario, **changes)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario_path,
            "mode": self.mode,
            "seed": self.seed,
            "max_steps": self.max_steps,
            "depth": self.depth,
            "max_ticks": self.max_ticks,
            "bugs": str(self.bugs) if self.bugs is not None else None,
            "checks": sorted(self.checks) if self.checks is not None else None,
            "trace_out": self.trace_out,
            "trace_in": self.trace_in,
            "report_out": self.report_out,
            "report_xlsx": self.report_xlsx,
            "fail_fast": self.fail_fast,
            "inject": self.inject,
            "strict_free": self.strict_free,
            "strict_bounds": self.strict_bounds,
            "check_every": self.check_every,
            "logs": self.logs_dir,
        }
