"""Select the radius-search kernel at import.

The compiled extension is used when it was built; otherwise, or when
``DISAMBIG3D_PURE_PYTHON`` is set to a non-empty value, the numpy fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _radius_py

try:
    if os.environ.get("DISAMBIG3D_PURE_PYTHON"):
        raise ImportError("pure-python backend forced by environment")
    from . import _radius_core
except ImportError:
    _radius_core = None

BACKEND = "cython" if _radius_core is not None else "python"


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _radius_core is not None else [])


def nearest_within(query: np.ndarray, ref: np.ndarray, radius: float, backend: str | None = None) -> np.ndarray:
    backend = backend or BACKEND
    query = np.ascontiguousarray(query, dtype=np.float64)
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    if backend == "python":
        return _radius_py.nearest_within(query, ref, radius)
    if backend != "cython" or _radius_core is None:
        raise ValueError(f"backend {backend!r} is not available")
    if len(query) == 0 or len(ref) == 0:
        return np.full(len(query), -1, dtype=np.int64)
    sorted_keys, order = _radius_py.build_grid(ref, radius)
    qcells = np.ascontiguousarray(_radius_py.cell_coords(query, radius))
    return _radius_core.nearest_within_grid(query, qcells, ref, sorted_keys, order, radius)
