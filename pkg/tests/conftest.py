from __future__ import annotations

import numpy as np
import pytest

from disambig3d import _backend
from disambig3d.geometry import LabeledPointCloud


def make_cloud(xyz, labels=None, mask_index=None) -> LabeledPointCloud:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    labels = np.ones(n, dtype=np.int64) if labels is None else labels
    mask_index = np.ones(n, dtype=np.int64) if mask_index is None else mask_index
    return LabeledPointCloud(xyz, labels, mask_index)


def brute_nearest_pairs(a: np.ndarray, b: np.ndarray, tau_d: float) -> set[tuple[int, int]]:
    """O(n^2) reference for radius_match, written with plain loops."""
    if len(a) == 0 or len(b) == 0:
        return set()
    swap = len(a) > len(b)
    q, r = (b, a) if swap else (a, b)
    out = set()
    for i, p in enumerate(q):
        best, best_j = float("inf"), -1
        for j, s in enumerate(r):
            d = p - s
            d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
            if d2 < best:
                best, best_j = d2, j
        if best < tau_d * tau_d:
            out.add((best_j, i) if swap else (i, best_j))
    return out


@pytest.fixture(params=_backend.available_backends())
def backend(request):
    return request.param


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
