# -*- coding: utf-8 -*-
"""
scenario_spec.py
Scenario JSON の読み込みと検証。

- エラーは ScenarioError(field_path 付き)。例: threads[0].script[2].alloc_index
- pool の buf が省略されたら、前の pool の直後に詰めて割り当てる
- 知らないキーは無視（フィールド名で意味が決まる）
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

from .errors import ConfigError, ScenarioError
from .mem_services import AllocOp, BugConfig, FreeOp, Op
from .monitor import CHECK_GROUPS, parse_checks
from .pool_core import PoolConfig, pool_addrspace, validate_config
from .state import KernelState, TimeoutMode, digest_of, init_kernel_state

MODES = ("random", "exhaustive", "replay")

DEFAULT_SEED = 0
DEFAULT_MAX_STEPS = 10_000
DEFAULT_DEPTH = 500
DEFAULT_MAX_TICKS = 2


@dataclass(frozen=True)
class ThreadScript:
    id: str
    script: Tuple[Op, ...]


@dataclass(frozen=True)
class Scenario:
    name: str
    pools: Tuple[PoolConfig, ...]
    threads: Tuple[ThreadScript, ...]
    bugs: BugConfig = field(default_factory=BugConfig)
    checks: FrozenSet[str] = frozenset(CHECK_GROUPS)
    mode: str = "random"
    seed: int = DEFAULT_SEED
    max_steps: int = DEFAULT_MAX_STEPS
    depth_bound: int = DEFAULT_DEPTH
    max_ticks: int = DEFAULT_MAX_TICKS

    def scripts(self) -> Dict[str, Tuple[Op, ...]]:
        return {t.id: t.script for t in self.threads}

    def thread_ids(self) -> List[str]:
        return [t.id for t in self.threads]

    def initial_state(self) -> KernelState:
        return init_kernel_state(self.pools, self.thread_ids())

    def to_dict(self) -> Dict[str, Any]:
        """Canonical form (run 設定の上書き前の値)。digest はここから取る。"""
        return {
            "name": self.name,
            "pools": [p.to_dict() for p in self.pools],
            "threads": [
                {"id": t.id, "script": [_op_to_dict(op) for op in t.script]} for t in self.threads
            ],
            "bugs": str(self.bugs),
            "checks": sorted(self.checks),
            "mode": self.mode,
            "seed": self.seed,
            "max_steps": self.max_steps,
            "depth_bound": self.depth_bound,
            "max_ticks": self.max_ticks,
        }

    @property
    def digest(self) -> str:
        # 実行条件（bugs/mode/seed…）は含めない：同じ pool/script なら同じ digest
        d = self.to_dict()
        return digest_of({"pools": d["pools"], "threads": d["threads"]})


def _op_to_dict(op: Op) -> Dict[str, Any]:
    if isinstance(op, AllocOp):
        return {"op": "alloc", "pool": op.pool, "size": op.size, "timeout": op.timeout.to_json()}
    return {"op": "free", "alloc_index": op.alloc_index}


# ---------------------------------------------------------------------------
# field parsers
# ---------------------------------------------------------------------------

def _nat(obj: Dict[str, Any], key: str, where: str, default: Optional[int] = None, positive: bool = False) -> int:
    path = f"{where}.{key}" if where else key
    if key not in obj:
        if default is None:
            raise ScenarioError("missing required field", path)
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"expected an integer, got {type(v).__name__}", path)
    if v < (1 if positive else 0):
        raise ScenarioError(f"must be {'> 0' if positive else '>= 0'} (got {v})", path)
    return v


def _str(obj: Dict[str, Any], key: str, where: str) -> str:
    path = f"{where}.{key}" if where else key
    v = obj.get(key)
    if not isinstance(v, str) or not v.strip():
        raise ScenarioError("expected a non-empty string", path)
    if any(ch.isspace() for ch in v):
        raise ScenarioError(f"must not contain whitespace: {v!r}", path)
    return v


def _list(obj: Dict[str, Any], key: str, where: str) -> List[Any]:
    path = f"{where}.{key}" if where else key
    v = obj.get(key)
    if not isinstance(v, list) or not v:
        raise ScenarioError("expected a non-empty list", path)
    return v


def _dict(v: Any, path: str) -> Dict[str, Any]:
    if not isinstance(v, dict):
        raise ScenarioError(f"expected an object, got {type(v).__name__}", path)
    return v


def parse_timeout(v: Any, path: str = "timeout") -> TimeoutMode:
    """'FOREVER' / 'NOWAIT' / {"ticks": n} / n"""
    try:
        if isinstance(v, str) and v.upper() in ("FOREVER", "NOWAIT"):
            return TimeoutMode(v.upper())
        if isinstance(v, dict) and set(v) == {"ticks"}:
            v = v["ticks"]
        if isinstance(v, int) and not isinstance(v, bool):
            return TimeoutMode.after(v)
    except ConfigError as e:
        raise ScenarioError(str(e), path) from e
    raise ScenarioError(f"expected FOREVER, NOWAIT or {{\"ticks\": n}}, got {v!r}", path)


def _names(v: Any, path: str) -> str:
    if isinstance(v, list):
        if not all(isinstance(x, str) for x in v):
            raise ScenarioError("expected a list of names", path)
        return ",".join(v) if v else "none"
    if isinstance(v, str):
        return v
    raise ScenarioError("expected a name list or a comma separated string", path)


# ---------------------------------------------------------------------------
# sections
# ---------------------------------------------------------------------------

def _parse_pools(raw: List[Any]) -> Tuple[PoolConfig, ...]:
    pools: List[PoolConfig] = []
    ids: Dict[str, int] = {}
    cursor = 0
    for k, item in enumerate(raw):
        where = f"pools[{k}]"
        obj = _dict(item, where)
        pid = _str(obj, "id", where)
        if pid in ids:
            raise ScenarioError(f"duplicate pool id {pid!r} (first at pools[{ids[pid]}])", f"{where}.id")
        ids[pid] = k
        buf = _nat(obj, "buf", where, default=cursor)
        cfg = PoolConfig(
            pool_id=pid,
            buf=buf,
            max_sz=_nat(obj, "max_sz", where, positive=True),
            n_max=_nat(obj, "n_max", where, positive=True),
            n_levels=_nat(obj, "n_levels", where, positive=True),
        )
        try:
            validate_config(cfg)
        except ConfigError as e:
            raise ScenarioError(str(e), where) from e
        lo, hi = pool_addrspace(cfg)
        for other in pools:
            olo, ohi = pool_addrspace(other)
            if lo < ohi and olo < hi:
                raise ScenarioError(
                    f"window [{lo}, {hi}) overlaps pool {other.pool_id} [{olo}, {ohi}) "
                    f"(inv_pools_notoverlap)",
                    f"{where}.buf",
                )
        cursor = max(cursor, hi)
        pools.append(cfg)
    return tuple(pools)


def _parse_op(item: Any, where: str, pool_ids: FrozenSet[str], n_allocs: int, freed: Dict[int, str]) -> Op:
    obj = _dict(item, where)
    kind = obj.get("op")
    if kind == "alloc":
        pool = _str(obj, "pool", where)
        if pool not in pool_ids:
            raise ScenarioError(f"unknown pool {pool!r}", f"{where}.pool")
        if "timeout" not in obj:
            raise ScenarioError("missing required field", f"{where}.timeout")
        return AllocOp(
            pool=pool,
            size=_nat(obj, "size", where, positive=True),
            timeout=parse_timeout(obj["timeout"], f"{where}.timeout"),
        )
    if kind == "free":
        idx = _nat(obj, "alloc_index", where)
        if idx >= n_allocs:
            raise ScenarioError(
                f"references alloc #{idx} but only {n_allocs} alloc(s) precede it",
                f"{where}.alloc_index",
            )
        if idx in freed:
            raise ScenarioError(f"alloc #{idx} already freed at {freed[idx]}", f"{where}.alloc_index")
        freed[idx] = where
        return FreeOp(alloc_index=idx)
    raise ScenarioError(f"expected \"alloc\" or \"free\", got {kind!r}", f"{where}.op")


def _parse_threads(raw: List[Any], pool_ids: FrozenSet[str]) -> Tuple[ThreadScript, ...]:
    out: List[ThreadScript] = []
    seen: Dict[str, int] = {}
    for k, item in enumerate(raw):
        where = f"threads[{k}]"
        obj = _dict(item, where)
        tid = _str(obj, "id", where)
        if tid in seen:
            raise ScenarioError(f"duplicate thread id {tid!r}", f"{where}.id")
        seen[tid] = k
        script = obj.get("script", [])
        if not isinstance(script, list):
            raise ScenarioError("expected a list", f"{where}.script")
        ops: List[Op] = []
        n_allocs = 0
        freed: Dict[int, str] = {}
        for j, op_raw in enumerate(script):
            op = _parse_op(op_raw, f"{where}.script[{j}]", pool_ids, n_allocs, freed)
            if isinstance(op, AllocOp):
                n_allocs += 1
            ops.append(op)
        out.append(ThreadScript(tid, tuple(ops)))
    return tuple(out)


def parse_scenario(raw: Any, name: str = "scenario") -> Scenario:
    obj = _dict(raw, "")
    pools = _parse_pools(_list(obj, "pools", ""))
    threads = _parse_threads(_list(obj, "threads", ""), frozenset(p.pool_id for p in pools))

    try:
        bugs = BugConfig.parse(_names(obj.get("bugs", "none"), "bugs"))
    except ValueError as e:
        raise ScenarioError(str(e), "bugs") from e
    try:
        checks = parse_checks(_names(obj.get("checks", "all"), "checks"))
    except ConfigError as e:
        raise ScenarioError(str(e), "checks") from e

    mode = obj.get("mode", "random")
    if mode not in MODES:
        raise ScenarioError(f"expected one of {', '.join(MODES)}, got {mode!r}", "mode")

    return Scenario(
        name=str(obj.get("name") or name),
        pools=pools,
        threads=threads,
        bugs=bugs,
        checks=checks,
        mode=mode,
        seed=_nat(obj, "seed", "", default=DEFAULT_SEED),
        max_steps=_nat(obj, "max_steps", "", default=DEFAULT_MAX_STEPS),
        depth_bound=_nat(obj, "depth_bound", "", default=DEFAULT_DEPTH),
        max_ticks=_nat(obj, "max_ticks", "", default=DEFAULT_MAX_TICKS),
    )


def load_scenario(path: str) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot read scenario file {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    return parse_scenario(raw, name=p.stem)
