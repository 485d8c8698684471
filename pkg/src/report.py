# -*- coding: utf-8 -*-
"""
report.py
Run report: JSON file, console text, exit code.

- exit code は違反リスト（と --strict-bounds）だけで決まる
- JSON は ensure_ascii=False, indent=2
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .verdicts import Violation

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INVALID = 2
EXIT_BOUND = 3
EXIT_INTERNAL = 4


@dataclass
class RunReport:
    scenario: str
    scenario_digest: str
    mode: str
    seed: int
    bugs: str
    checks: List[str]
    inject: str = ""
    states: int = 0
    transitions: int = 0
    max_depth: int = 0
    complete_states: int = 0
    exhaustive: Optional[bool] = None
    bound_exhausted: bool = False
    quiescent: bool = False
    partial: bool = False
    stop_reason: str = ""
    violations: List[Violation] = field(default_factory=list)
    violation_counts: Dict[str, int] = field(default_factory=dict)
    termination: List[Dict[str, Any]] = field(default_factory=list)
    exit_code: int = EXIT_OK

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_check(self) -> Dict[str, List[Violation]]:
        out: Dict[str, List[Violation]] = {}
        for v in self.violations:
            out.setdefault(v.check_name, []).append(v)
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "scenario_digest": self.scenario_digest,
            "mode": self.mode,
            "seed": self.seed,
            "bugs": self.bugs,
            "checks": list(self.checks),
            "inject": self.inject or None,
            "explored": {
                "states": self.states,
                "transitions": self.transitions,
                "max_depth": self.max_depth,
                "complete_states": self.complete_states,
                "exhaustive": self.exhaustive,
            },
            "bound_exhausted": self.bound_exhausted,
            "quiescent": self.quiescent,
            "partial": self.partial,
            "stop_reason": self.stop_reason,
            "violations": {k: [v.to_dict() for v in vs] for k, vs in sorted(self.by_check().items())},
            "violation_counts": dict(sorted(self.violation_counts.items())),
            "termination": self.termination,
            "exit_code": self.exit_code,
        }

    def to_text(self) -> str:
        lines = [
            f"scenario : {self.scenario} ({self.scenario_digest})",
            f"mode     : {self.mode} seed={self.seed} bugs={self.bugs}"
            + (f" inject={self.inject}" if self.inject else ""),
            f"explored : {self.states} states, {self.transitions} transitions, depth {self.max_depth}",
        ]
        if self.stop_reason:
            lines.append(f"stop     : {self.stop_reason}")
        if self.bound_exhausted:
            lines.append("bound    : exhausted (not every schedule was covered)")
        verdicts: Dict[str, int] = {}
        for t in self.termination:
            verdicts[str(t.get("verdict"))] = verdicts.get(str(t.get("verdict")), 0) + 1
        if verdicts:
            lines.append("events   : " + ", ".join(f"{k}={n}" for k, n in sorted(verdicts.items())))
        if not self.violations:
            lines.append("result   : OK (no violations)")
        else:
            lines.append(f"result   : {len(self.violations)} violation(s)")
            for name, vs in sorted(self.by_check().items()):
                lines.append(f"  {name} ({self.violation_counts.get(name, len(vs))} hit(s))")
                for v in vs[:5]:
                    lines.append(f"    {v.format()}")
                    if v.schedule:
                        sched = " ".join(lbl for _, lbl in v.schedule)
                        lines.append(f"      schedule[{len(v.schedule)}]: {sched}")
        lines.append(f"exit     : {self.exit_code}")
        return "\n".join(lines)


def exit_code_for(report: RunReport, strict_bounds: bool = False) -> int:
    if report.violations:
        return EXIT_VIOLATION
    if strict_bounds and report.bound_exhausted:
        return EXIT_BOUND
    return EXIT_OK


def write_report_json(path: str, report: RunReport) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(report.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
