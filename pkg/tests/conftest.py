# -*- coding: utf-8 -*-
from __future__ import annotations

import pytest

from src.pool_core import init_pool

from .support import POOL_A, POOL_B, POOL_C


@pytest.fixture
def pool_a():
    return init_pool(POOL_A)


@pytest.fixture
def pool_b():
    return init_pool(POOL_B)


@pytest.fixture
def pool_c():
    return init_pool(POOL_C)


@pytest.fixture
def clean_env(monkeypatch, tmp_path):
    """No MEMPOOL_* leaks between tests; logs go under tmp_path."""
    import os

    for k in list(os.environ):
        if k.startswith("MEMPOOL_"):
            monkeypatch.delenv(k, raising=False)
    monkeypatch.setenv("LOGS_DIR", str(tmp_path / "logs"))
    yield tmp_path
    # run_mempool writes os.environ directly
    for k in list(os.environ):
        if k.startswith("MEMPOOL_"):
            del os.environ[k]
