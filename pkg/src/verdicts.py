# -*- coding: utf-8 -*-
"""
verdicts.py
Checker results shared by the safety and security layers and the run report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple


@dataclass(frozen=True)
class Verdict:
    ok: bool
    witness: Optional[Dict[str, Any]] = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok

    @staticmethod
    def fail(detail: str, **witness: Any) -> "Verdict":
        return Verdict(False, dict(witness), detail)

    def to_dict(self) -> Dict[str, Any]:
        if self.ok:
            return {"ok": True}
        return {"ok": False, "witness": self.witness, "detail": self.detail}


PASS = Verdict(True)


@dataclass(frozen=True)
class Violation:
    """`{step, check_name, witness, state_digest}` plus optional reproducing schedule."""
    step: int
    check_name: str
    witness: Dict[str, Any]
    state_digest: str
    detail: str = ""
    schedule: Optional[Tuple[Tuple[int, str], ...]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @staticmethod
    def of(step: int, check_name: str, verdict: Verdict, state_digest: str, /, **extra: Any) -> "Violation":
        return Violation(
            step=step,
            check_name=check_name,
            witness=dict(verdict.witness or {}),
            state_digest=state_digest,
            detail=verdict.detail,
            extra=dict(extra),
        )

    def witness_key(self) -> str:
        return json.dumps(self.witness, sort_keys=True, default=str)

    def with_schedule(self, schedule: List[Tuple[int, str]]) -> "Violation":
        return replace(self, schedule=tuple((int(c), str(lbl)) for c, lbl in schedule))

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            "step": self.step,
            "check_name": self.check_name,
            "witness": self.witness,
            "state_digest": self.state_digest,
            "detail": self.detail,
        }
        if self.schedule is not None:
            d["schedule"] = [{"choice": c, "step": lbl} for c, lbl in self.schedule]
        if self.extra:
            d.update(self.extra)
        return d

    def format(self) -> str:
        loc = ", ".join(f"{k}={v}" for k, v in sorted(self.witness.items()))
        return f"[{self.check_name}] step {self.step}: {self.detail} ({loc})"
