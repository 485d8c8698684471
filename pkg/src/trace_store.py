# -*- coding: utf-8 -*-
"""
trace_store.py
- trace ファイル（1行=1 TraceEntry, 先頭に `# key: value` のヘッダ）の読み書き
- 壊れた trace は黙って空にせず ReplayError（replay は「同一性」が目的なので）
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .errors import ReplayError
from .kernel_sim import TraceEntry

TRACE_FORMAT = "mempool-trace"
TRACE_VERSION = "1"

HEADER_KEYS = ("format", "version", "scenario", "mode", "seed", "bugs", "inject", "max_ticks", "steps")


@dataclass
class TraceFile:
    header: Dict[str, str] = field(default_factory=dict)
    entries: List[TraceEntry] = field(default_factory=list)

    @property
    def expected_steps(self) -> Optional[int]:
        v = self.header.get("steps", "")
        return int(v) if v.isdigit() else None

    def to_text(self) -> str:
        lines = [f"# {k}: {self.header[k]}" for k in HEADER_KEYS if k in self.header]
        lines += [e.to_line() for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TraceFile":
        tf = cls()
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if not sep:
                    raise ReplayError(f"trace line {n}: malformed header {raw!r}")
                tf.header[key.strip()] = value.strip()
                continue
            tf.entries.append(TraceEntry.from_line(line))
        if tf.header.get("format") != TRACE_FORMAT:
            raise ReplayError(f"not a trace file (format={tf.header.get('format')!r})")
        if tf.header.get("version") != TRACE_VERSION:
            raise ReplayError(
                f"trace version {tf.header.get('version')!r} does not match {TRACE_VERSION!r}"
            )
        for a, b in zip(tf.entries, tf.entries[1:]):
            if a.post_digest != b.pre_digest:
                raise ReplayError(f"trace records {a.index} and {b.index} do not chain")
        return tf

    def check_against(self, scenario_digest: str, bugs: str, inject: str) -> None:
        """Header must describe the same scenario and code switches as the replaying run."""
        for key, want in (("scenario", scenario_digest), ("bugs", bugs), ("inject", inject or "none")):
            got = self.header.get(key, "")
            if got != want:
                raise ReplayError(f"trace {key} {got!r} does not match this run ({want!r})")


def make_header(
    scenario_digest: str, mode: str, seed: int, bugs: str, inject: str,
    max_ticks: Optional[int], steps: int,
) -> Dict[str, str]:
    return {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "scenario": scenario_digest,
        "mode": mode,
        "seed": str(seed),
        "bugs": bugs,
        "inject": inject or "none",
        "max_ticks": "none" if max_ticks is None else str(max_ticks),
        "steps": str(steps),
    }


def write_trace(path: str, header: Dict[str, str], entries: Sequence[TraceEntry]) -> None:
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(TraceFile(dict(header), list(entries)).to_text(), encoding="utf-8")


def read_trace(path: str) -> TraceFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ReplayError(f"cannot read trace {path}: {e}") from e
    return TraceFile.from_text(text)


def header_max_ticks(tf: TraceFile) -> Optional[int]:
    """tick bound the recording kernel used (None = unbounded)."""
    v = tf.header.get("max_ticks", "none")
    if v == "none":
        return None
    if not v.isdigit():
        raise ReplayError(f"trace max_ticks {v!r} is not a number")
    return int(v)
