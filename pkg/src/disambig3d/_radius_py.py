"""Pure numpy fixed-radius nearest-neighbour search on a uniform voxel hash grid.

Also holds the grid preparation shared with the compiled kernel, so both
backends see identical cell keys and candidate order.
"""
from __future__ import annotations

import numpy as np

from .errors import InputError

_BITS = 21
_OFFSET = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1

# 27-cell neighbourhood, fixed order
NEIGHBOR_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
    dtype=np.int64,
)


def cell_coords(xyz: np.ndarray, cell: float) -> np.ndarray:
    c = np.floor(xyz / cell).astype(np.int64)
    if c.size and np.abs(c).max() >= _OFFSET - 1:
        raise InputError("coordinates too far from the origin for the grid key range")
    return c


def pack_keys(cells: np.ndarray) -> np.ndarray:
    c = cells + _OFFSET
    return (c[:, 0] << (2 * _BITS)) | (c[:, 1] << _BITS) | c[:, 2]


def build_grid(ref: np.ndarray, cell: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (sorted cell keys, permutation into ``ref``); stable so equal keys keep index order."""
    keys = pack_keys(cell_coords(ref, cell))
    order = np.argsort(keys, kind="stable")
    return keys[order], order


def nearest_within(query: np.ndarray, ref: np.ndarray, radius: float) -> np.ndarray:
    """For each query point, index of its nearest ``ref`` point if closer than ``radius``, else -1.

    Distance ties go to the smaller ref index.
    """
    nq = len(query)
    out = np.full(nq, -1, dtype=np.int64)
    if nq == 0 or len(ref) == 0:
        return out
    sorted_keys, order = build_grid(ref, radius)
    qcells = cell_coords(query, radius)

    cand_q, cand_r = [], []
    for off in NEIGHBOR_OFFSETS:
        nk = pack_keys(qcells + off)
        lo = np.searchsorted(sorted_keys, nk, side="left")
        hi = np.searchsorted(sorted_keys, nk, side="right")
        cnt = hi - lo
        total = int(cnt.sum())
        if total == 0:
            continue
        qi = np.repeat(np.arange(nq), cnt)
        starts = np.cumsum(cnt) - cnt
        pos = lo[qi] + np.arange(total) - starts[qi]
        cand_q.append(qi)
        cand_r.append(order[pos])
    if not cand_q:
        return out
    qi = np.concatenate(cand_q)
    ri = np.concatenate(cand_r)
    d = query[qi] - ref[ri]
    d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]

    sel = np.lexsort((ri, d2, qi))
    qi, ri, d2 = qi[sel], ri[sel], d2[sel]
    first = np.ones(len(qi), dtype=bool)
    first[1:] = qi[1:] != qi[:-1]
    qi, ri, d2 = qi[first], ri[first], d2[first]
    hit = d2 < radius * radius
    out[qi[hit]] = ri[hit]
    return out
