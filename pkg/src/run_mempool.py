# -*- coding: utf-8 -*-
"""
Local/Manual runner for the memory pool model.

Examples:
  python -m src.run_mempool run --scenario scenarios/bug3.json --mode random --bugs bug3
  python -m src.run_mempool run --scenario scenarios/bug1.json --mode exhaustive --depth 400
  python -m src.run_mempool run --scenario scenarios/bug2.json --mode replay --trace t.log

This script sets env vars and then calls src.mempool_main.main().
CI can also set MEMPOOL_* directly and call `python -m src.mempool_main`.
"""

from __future__ import annotations

import argparse
import os
import sys

from src.mempool_main import main as mempool_main


def _set_if(provided: str | None, env_key: str) -> None:
    if provided is not None and str(provided).strip() != "":
        os.environ[env_key] = str(provided).strip()


def parse_args(argv: list[str]) -> argparse.Namespace:
    p = argparse.ArgumentParser(add_help=True, description="Run a memory pool scenario under the checkers")
    p.add_argument("command", nargs="?", default="run", choices=["run"])
    p.add_argument("--scenario", default=None, help="MEMPOOL_SCENARIO env (scenario JSON path)")
    p.add_argument("--mode", default=None, choices=["random", "exhaustive", "replay"], help="MEMPOOL_MODE env")
    p.add_argument("--seed", default=None, help="MEMPOOL_SEED env")
    p.add_argument("--max-steps", default=None, help="MEMPOOL_MAX_STEPS env (random runs)")
    p.add_argument("--depth", default=None, help="MEMPOOL_DEPTH env (exhaustive depth bound)")
    p.add_argument("--max-ticks", default=None, help="MEMPOOL_MAX_TICKS env (tick steps per explored path)")
    p.add_argument("--bugs", default=None, help="MEMPOOL_BUGS env: none / all / bug1,bug2,bug3")
    p.add_argument("--check", "--checks", dest="checks", default=None, help="MEMPOOL_CHECKS env: all / comma list")
    p.add_argument("--trace-out", default=None, help="MEMPOOL_TRACE_OUT env")
    p.add_argument("--trace", default=None, help="MEMPOOL_TRACE_IN env (replay input)")
    p.add_argument("--report-out", default=None, help="MEMPOOL_REPORT_OUT env (JSON report)")
    p.add_argument("--report-xlsx", default=None, help="MEMPOOL_REPORT_XLSX env (Excel report)")
    p.add_argument("--logs-dir", default=None, help="LOGS_DIR env (JSONL audit log root)")
    p.add_argument("--inject", default=None, help="MEMPOOL_INJECT env: mblocks_leak / tick_write / foreign_local")
    p.add_argument("--check-every", default=None, help="MEMPOOL_CHECK_EVERY env (state check sampling)")
    p.add_argument("--fail-fast", action="store_const", const="1", default=None, help="MEMPOOL_FAIL_FAST=1")
    p.add_argument("--strict-free", action="store_const", const="1", default=None, help="MEMPOOL_STRICT_FREE=1")
    p.add_argument("--strict-bounds", action="store_const", const="1", default=None, help="MEMPOOL_STRICT_BOUNDS=1")
    return p.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    ns = parse_args(sys.argv[1:] if argv is None else argv)

    _set_if(ns.scenario, "MEMPOOL_SCENARIO")
    _set_if(ns.mode, "MEMPOOL_MODE")
    _set_if(ns.seed, "MEMPOOL_SEED")
    _set_if(ns.max_steps, "MEMPOOL_MAX_STEPS")
    _set_if(ns.depth, "MEMPOOL_DEPTH")
    _set_if(ns.max_ticks, "MEMPOOL_MAX_TICKS")
    _set_if(ns.bugs, "MEMPOOL_BUGS")
    _set_if(ns.checks, "MEMPOOL_CHECKS")
    _set_if(ns.trace_out, "MEMPOOL_TRACE_OUT")
    _set_if(ns.trace, "MEMPOOL_TRACE_IN")
    _set_if(ns.report_out, "MEMPOOL_REPORT_OUT")
    _set_if(ns.report_xlsx, "MEMPOOL_REPORT_XLSX")
    _set_if(ns.logs_dir, "LOGS_DIR")
    _set_if(ns.inject, "MEMPOOL_INJECT")
    _set_if(ns.check_every, "MEMPOOL_CHECK_EVERY")
    _set_if(ns.fail_fast, "MEMPOOL_FAIL_FAST")
    _set_if(ns.strict_free, "MEMPOOL_STRICT_FREE")
    _set_if(ns.strict_bounds, "MEMPOOL_STRICT_BOUNDS")

    return int(mempool_main())


if __name__ == "__main__":
    raise SystemExit(main())
