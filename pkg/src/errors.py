# -*- coding: utf-8 -*-
"""
errors.py
- ライブラリ側は例外を投げるだけ。exit code への変換は mempool_main.main() だけが行う。
"""

from __future__ import annotations

from typing import Optional


class MemPoolError(Exception):
    """Root of every error raised by the simulator."""


class ConfigError(MemPoolError, RuntimeError):
    """Invalid pool configuration, level out of range, or malformed env value."""


class AlignmentError(MemPoolError):
    """block_num called on an address that is not aligned to the level size."""


class ConsistencyError(MemPoolError):
    """Free-list distinctness broken, removal of an absent entry, index out of range."""


class StepError(MemPoolError):
    """A disabled step was executed (e.g. scheduling a thread that is not READY)."""


class ReplayError(MemPoolError):
    """Recorded trace does not match the scenario or diverges while replaying."""


class ScenarioError(MemPoolError):
    """
    Scenario validation failure.
    field_path は JSON 上の位置（例: threads[0].script[2].alloc_index）。
    """

    def __init__(self, message: str, field_path: Optional[str] = None):
        self.field_path = field_path or ""
        if self.field_path:
            message = f"{self.field_path}: {message}"
        super().__init__(message)
