from __future__ import annotations

import numpy as np
import pytest

from hepnas.dataset import SplitSpec, gen_blobs, gen_spirals, split
from hepnas.searchspace import ORACLE_PALETTE, CellSpec


def central_diff(f, params: dict[str, np.ndarray], eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar function of named arrays."""
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = f(params)
            flat[i] = old - eps
            down = f(params)
            flat[i] = old
            g.reshape(-1)[i] = (up - down) / (2 * eps)
        out[name] = g
    return out


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray, rel: float = 1e-4, floor: float = 1e-7) -> None:
    err = np.abs(analytic - numeric)
    bound = rel * np.maximum(np.abs(analytic), np.abs(numeric)) + floor
    assert np.all(err <= bound), f"max err {err.max()} (analytic {analytic.ravel()[:4]}, numeric {numeric.ravel()[:4]})"


@pytest.fixture(scope="session")
def blobs_splits():
    return split(gen_blobs(1, 400, 2, 3, 0.3), SplitSpec(seed=1))


@pytest.fixture(scope="session")
def spiral_splits():
    return split(gen_spirals(0, 600, 3, 0.15, turns=1.25), SplitSpec(seed=0))


@pytest.fixture(scope="session")
def small_spec():
    return CellSpec(n_nodes=4, width=8, n_classes=3, in_dim=2)


@pytest.fixture(scope="session")
def oracle_spec():
    return CellSpec(n_nodes=4, width=8, n_classes=3, in_dim=2, palette=ORACLE_PALETTE)


# ------------------------------------------------------------ acceptance lines

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def _record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
