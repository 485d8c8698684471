# -*- coding: utf-8 -*-
"""
audit_logger.py
Write JSONL audit logs of a run to LOGS_DIR.

- 1行=1イベント。毎回 flush（途中で死んでもログが残る）
- LOGS_DIR が空なら stdout。書き込み失敗時は stderr に warn を出して stdout にフォールバック
- ログの失敗で run は止めない
"""
from __future__ import annotations

import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


def _today_utc_ymd() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%d")


def new_run_id() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")


class AuditLogger:
    def __init__(self, logs_dir: str = "", run_id: Optional[str] = None):
        self.logs_dir = logs_dir or ""
        self.run_id = run_id or new_run_id()
        self.buf: List[str] = []
        self.log_path: Optional[Path] = None

    def _ensure_log_path(self) -> Optional[Path]:
        if not self.logs_dir:
            return None
        if self.log_path is not None:
            return self.log_path
        folder = Path(self.logs_dir) / _today_utc_ymd()
        folder.mkdir(parents=True, exist_ok=True)
        self.log_path = folder / f"run_{self.run_id}.jsonl"
        return self.log_path

    def write(self, event: Dict[str, Any]) -> None:
        rec = dict(event)
        rec.setdefault("ts_utc", utc_now_iso())
        rec.setdefault("run_id", self.run_id)
        self.buf.append(json.dumps(rec, ensure_ascii=False, default=str))
        self.flush()

    def event(self, name: str, **fields: Any) -> None:
        self.write({"event": name, **fields})

    def flush(self) -> None:
        if not self.buf:
            return
        payload = "\n".join(self.buf) + "\n"
        self.buf = []
        try:
            path = self._ensure_log_path()
            if path is None:
                sys.stdout.write(payload)
                sys.stdout.flush()
                return
            with path.open("a", encoding="utf-8") as f:
                f.write(payload)
        except Exception as e:
            # 最後の砦：stdout
            print(f"[warn] audit log write failed ({type(e).__name__}: {e}); fallback to stdout",
                  file=sys.stderr, flush=True)
            sys.stdout.write(payload)
            sys.stdout.flush()
