"""Label alignment costs, Hungarian assignment, and rendered/label map fusion."""
from __future__ import annotations

from collections.abc import Iterator

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import CapacityError, DimensionError

CE_EPS = 1e-7


def _flatten(pred: np.ndarray, label: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label)
    if pred.ndim != 3 or pred.shape[:2] != label.shape:
        raise DimensionError(f"prediction {pred.shape} does not match label map {label.shape}")
    y = pred.reshape(-1, pred.shape[2])
    t_max = int(label.max()) if label.size else 0
    onehot = (label.reshape(-1, 1) == np.arange(1, t_max + 1)[None, :]).astype(np.float64)
    return y, onehot


def siou_cost(pred: np.ndarray, label: np.ndarray) -> np.ndarray:
    """Negative soft IoU between every prediction slot and every label mask.

    ``pred`` is H x W x U (slot 0 is the empty slot), ``label`` is H x W with
    ids 1..T. Returns U x T; column t-1 holds label id t. 0/0 is defined as 0.
    """
    y, m = _flatten(pred, label)
    inter = y.T @ m
    union = y.sum(axis=0)[:, None] + m.sum(axis=0)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(-inter, union, out=out, where=union > 0)
    return out


def ce_cost(pred: np.ndarray, label: np.ndarray, eps: float = CE_EPS) -> np.ndarray:
    """Mean binary cross-entropy between every slot and every one-hot label channel (U x T)."""
    y, m = _flatten(pred, label)
    y = np.clip(y, eps, 1.0 - eps)
    j = y.shape[0]
    return -(np.log(y).T @ m + np.log1p(-y).T @ (1.0 - m)) / j


def hungarian_assign(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost injective map from label columns to slot rows.

    Returns an int array ``slot`` with ``slot[t]`` the row assigned to column t.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DimensionError("cost matrix must be 2-D")
    n_slots, n_labels = cost.shape
    if n_labels > n_slots:
        raise CapacityError(f"{n_labels} label masks but only {n_slots} instance slots")
    if n_labels == 0:
        return np.zeros(0, dtype=np.int64)
    rows, cols = linear_sum_assignment(cost)
    slot = np.empty(n_labels, dtype=np.int64)
    slot[cols] = rows
    return slot


def align_labels(pred: np.ndarray, label: np.ndarray) -> dict[int, int]:
    """Match each label id to a non-empty prediction slot using sIoU + CE.

    Slot 0 is excluded. Returns {label id t: slot u}.
    """
    cost = siou_cost(pred, label) + ce_cost(pred, label)
    slot = hungarian_assign(cost[1:]) + 1
    return {t + 1: int(u) for t, u in enumerate(slot)}


def overlap_fill(label: np.ndarray, rendered: np.ndarray, next_fresh_id: Iterator[int]) -> np.ndarray:
    """Rewrite each label mask with the rendered id it overlaps most.

    Background (0) in either map never wins; ties go to the smaller rendered
    id. A mask with no rendered overlap takes ``next(next_fresh_id)``. Label
    masks are visited in increasing id order, so fresh ids are drawn
    deterministically.
    """
    label = np.asarray(label)
    rendered = np.asarray(rendered)
    if label.shape != rendered.shape:
        raise DimensionError(f"label {label.shape} and rendered {rendered.shape} shapes differ")
    lab = label.reshape(-1).astype(np.int64)
    ren = rendered.reshape(-1).astype(np.int64)

    fg = (lab > 0) & (ren > 0)
    pair, count = np.unique(np.stack([lab[fg], ren[fg]], axis=1), axis=0, return_counts=True)
    best: dict[int, int] = {}
    if len(pair):
        sel = np.lexsort((pair[:, 1], -count, pair[:, 0]))
        pair = pair[sel]
        first = np.ones(len(pair), dtype=bool)
        first[1:] = pair[1:, 0] != pair[:-1, 0]
        best = dict(zip(pair[first, 0].tolist(), pair[first, 1].tolist()))

    ids = np.unique(lab[lab > 0])
    mapping = np.zeros(int(ids.max()) + 1 if len(ids) else 1, dtype=np.int64)
    for t in ids.tolist():
        mapping[t] = best[t] if t in best else next(next_fresh_id)
    return mapping[lab].reshape(label.shape)
