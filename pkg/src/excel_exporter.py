# -*- coding: utf-8 -*-
"""
excel_exporter.py
RunReport -> xlsx bytes（summary / violations / termination の 3 シート）

※ 書式は最小。レビューで並べ替え・フィルタできれば十分
"""

from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Any, Iterable, List

import openpyxl
from openpyxl.styles import Font

from .report import RunReport


def _header(ws, cols: List[str]) -> None:
    ws.append(cols)
    for cell in ws[1]:
        cell.font = Font(bold=True)
    ws.freeze_panes = "A2"


def _cell(v: Any) -> Any:
    if v is None or isinstance(v, (bool, int, float, str)):
        return v
    return json.dumps(v, ensure_ascii=False, sort_keys=True, default=str)


def _rows(ws, rows: Iterable[List[Any]]) -> None:
    for r in rows:
        ws.append([_cell(v) for v in r])


def report_workbook_bytes(report: RunReport) -> bytes:
    wb = openpyxl.Workbook()

    ws = wb.active
    ws.title = "summary"
    _header(ws, ["key", "value"])
    d = report.to_dict()
    _rows(ws, [
        ["scenario", d["scenario"]],
        ["scenario_digest", d["scenario_digest"]],
        ["mode", d["mode"]],
        ["seed", d["seed"]],
        ["bugs", d["bugs"]],
        ["checks", ",".join(d["checks"])],
        ["inject", d["inject"]],
        ["states", report.states],
        ["transitions", report.transitions],
        ["max_depth", report.max_depth],
        ["exhaustive", report.exhaustive],
        ["bound_exhausted", report.bound_exhausted],
        ["stop_reason", report.stop_reason],
        ["violations", len(report.violations)],
        ["exit_code", report.exit_code],
    ])

    ws = wb.create_sheet("violations")
    _header(ws, ["check_name", "step", "detail", "witness", "state_digest", "schedule_len", "schedule"])
    _rows(ws, (
        [
            v.check_name, v.step, v.detail, v.witness, v.state_digest,
            len(v.schedule) if v.schedule is not None else None,
            " ".join(lbl for _, lbl in v.schedule) if v.schedule else None,
        ]
        for v in report.violations
    ))

    ws = wb.create_sheet("termination")
    _header(ws, ["thread", "op_index", "event", "verdict", "ret"])
    _rows(ws, (
        [t.get("thread"), t.get("op_index"), t.get("event"), t.get("verdict"), t.get("ret")]
        for t in report.termination
    ))

    buf = io.BytesIO()
    wb.save(buf)
    return buf.getvalue()


def write_report_xlsx(path: str, report: RunReport) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(report_workbook_bytes(report))
