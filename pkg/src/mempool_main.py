# -*- coding: utf-8 -*-
"""
mempool_main.py
- MEMPOOL_* env を読み、scenario をロードして mode に対応する module の run() を呼ぶ
- mode module が無い / scenario が壊れている場合は fail-fast（exit 2）
- LOGS_DIR に jsonl で監査ログ（失敗しても stdout にフォールバック）
- exit: 0 clean / 1 violation / 2 invalid scenario・config・trace / 3 bound exhausted (--strict-bounds) / 4 internal
"""

from __future__ import annotations

import importlib
import os
import sys
import time
from typing import Any, List

from .audit_logger import AuditLogger, utc_now_iso
from .errors import ConfigError, ReplayError, ScenarioError
from .excel_exporter import write_report_xlsx
from .report import EXIT_INTERNAL, EXIT_INVALID, exit_code_for, write_report_json
from .scenario_spec import load_scenario
from .sim_cfg import SimCfg


def safe_env(key: str, default: str = "") -> str:
    v = os.environ.get(key, "")
    return v.strip() if v is not None and str(v).strip() != "" else default


def resolve_mode_module_candidates(mode: str) -> List[str]:
    return [f"src.modes.{mode}", f"{__package__ or 'src'}.modes.{mode}"]


def import_mode_module(mode: str) -> Any:
    errors = []
    for mod in dict.fromkeys(resolve_mode_module_candidates(mode)):
        try:
            return importlib.import_module(mod)
        except Exception as e:
            errors.append(f"{mod}: {type(e).__name__}: {e}")
    raise ModuleNotFoundError("no mode module found:\n" + "\n".join(errors))


def _end(audit: AuditLogger, t0: float, ok: bool, exit_code: int) -> int:
    audit.write({
        "ts_utc": utc_now_iso(),
        "event": "run_end",
        "elapsed_s": round(time.time() - t0, 3),
        "ok": ok,
        "exit_code": exit_code,
    })
    return exit_code


def main() -> int:
    t0 = time.time()
    audit = AuditLogger(safe_env("LOGS_DIR"))

    # config（壊れた env は run 開始前に落とす）
    try:
        cfg = SimCfg.from_env()
    except ConfigError as e:
        audit.write({"ts_utc": utc_now_iso(), "event": "error", "where": "SimCfg.from_env",
                     "error": f"{type(e).__name__}: {e}", "note": "Fail-fast: exiting with code 2."})
        return _end(audit, t0, False, EXIT_INVALID)

    audit.write({
        "ts_utc": utc_now_iso(),
        "event": "run_start",
        "config": cfg.to_dict(),
        "python": sys.version.split()[0],
    })

    try:
        scenario = cfg.resolve(load_scenario(cfg.scenario_path))
    except (ScenarioError, ConfigError) as e:
        audit.write({"ts_utc": utc_now_iso(), "event": "error", "where": "load_scenario",
                     "error": f"{type(e).__name__}: {e}",
                     "field_path": getattr(e, "field_path", ""),
                     "note": "Fail-fast: exiting with code 2."})
        return _end(audit, t0, False, EXIT_INVALID)

    audit.write({
        "ts_utc": utc_now_iso(),
        "event": "scenario_loaded",
        "scenario": scenario.name,
        "digest": scenario.digest,
        "pools": [p.to_dict() for p in scenario.pools],
        "threads": scenario.thread_ids(),
    })

    try:
        mod = import_mode_module(scenario.mode)
    except Exception as e:
        audit.write({"ts_utc": utc_now_iso(), "event": "error", "where": "mode_dispatch",
                     "mode": scenario.mode, "error": f"{type(e).__name__}: {e}",
                     "note": "Fail-fast: exiting with code 2."})
        return _end(audit, t0, False, EXIT_INVALID)

    audit.write({
        "ts_utc": utc_now_iso(),
        "event": "mode_start",
        "mode": scenario.mode,
        "module": getattr(mod, "__name__", ""),
        "seed": scenario.seed,
        "bugs": str(scenario.bugs),
        "checks": sorted(scenario.checks),
        "max_steps": scenario.max_steps,
        "depth_bound": scenario.depth_bound,
        "max_ticks": scenario.max_ticks,
        "inject": cfg.inject or None,
    })

    try:
        report = mod.run(scenario=scenario, cfg=cfg, audit=audit)
    except (ReplayError, ConfigError, ScenarioError) as e:
        audit.write({"ts_utc": utc_now_iso(), "event": "error", "where": "mode_run",
                     "error": f"{type(e).__name__}: {e}"})
        return _end(audit, t0, False, EXIT_INVALID)
    except Exception as e:
        audit.write({"ts_utc": utc_now_iso(), "event": "error", "where": "mode_run",
                     "error": f"{type(e).__name__}: {e}"})
        return _end(audit, t0, False, EXIT_INTERNAL)

    report.exit_code = exit_code_for(report, cfg.strict_bounds)
    audit.write({
        "ts_utc": utc_now_iso(),
        "event": "mode_end",
        "mode": scenario.mode,
        "states": report.states,
        "transitions": report.transitions,
        "violations": len(report.violations),
        "bound_exhausted": report.bound_exhausted,
        "elapsed_s": round(time.time() - t0, 3),
    })

    # report（書けなくても verdict は変えない）
    print(report.to_text(), file=sys.stderr, flush=True)
    for path, writer in ((cfg.report_out, write_report_json), (cfg.report_xlsx, write_report_xlsx)):
        if not path:
            continue
        try:
            writer(path, report)
            audit.write({"ts_utc": utc_now_iso(), "event": "report_written", "path": path})
        except Exception as e:
            audit.write({"ts_utc": utc_now_iso(), "event": "warn", "where": writer.__name__,
                         "error": f"{type(e).__name__}: {e}"})

    return _end(audit, t0, report.ok, report.exit_code)


if __name__ == "__main__":
    raise SystemExit(main())
