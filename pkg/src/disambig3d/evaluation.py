"""Instance, clustering and semantic metrics.

Partitions are flat integer arrays over a shared element universe (pixels,
points or masks). In instance partitions id 0 means "unassigned"; in the
clustering metrics (ARI, NMI) every value, 0 included, is a cluster.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError

AP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    gt = np.asarray(gt).reshape(-1).astype(np.int64)
    if pred.shape != gt.shape:
        raise DimensionError(f"partitions cover different universes: {pred.size} vs {gt.size}")
    return pred, gt


def contingency(pred, gt) -> np.ndarray:
    """Dense cluster-by-cluster co-occurrence counts (rows: pred, columns: gt)."""
    pred, gt = _pair(pred, gt)
    _, pi = np.unique(pred, return_inverse=True)
    _, gi = np.unique(gt, return_inverse=True)
    table = np.zeros((pi.max(initial=-1) + 1, gi.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (pi.reshape(-1), gi.reshape(-1)), 1)
    return table


def _comb2(x: np.ndarray) -> float:
    x = x.astype(np.float64)
    return float((x * (x - 1) / 2).sum())


def _same_partition(table: np.ndarray) -> bool:
    return bool(((table > 0).sum(axis=0) == 1).all() and ((table > 0).sum(axis=1) == 1).all())


def ari(pred, gt) -> float:
    """Adjusted Rand index. Degenerate 0/0 cases give 1.0 for identical partitions, else 0.0."""
    table = contingency(pred, gt)
    n = table.sum()
    if n == 0:
        return 1.0
    index = _comb2(table)
    sum_a = _comb2(table.sum(axis=1))
    sum_b = _comb2(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2
    denom = max_index - expected
    if denom == 0:
        return 1.0 if _same_partition(table) else 0.0
    return float((index - expected) / denom)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, gt) -> float:
    """Mutual information normalised by the arithmetic mean of the two entropies."""
    table = contingency(pred, gt)
    n = int(table.sum())
    if n == 0:
        return 1.0
    h_pred = _entropy(table.sum(axis=1), n)
    h_gt = _entropy(table.sum(axis=0), n)
    if h_pred == 0 or h_gt == 0:
        return 1.0 if _same_partition(table) else 0.0
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / (n * n)
    mi = float((pij * np.log(pij / outer)).sum())
    return float(min(max(mi / ((h_pred + h_gt) / 2), 0.0), 1.0))


def iou_matrix(pred, gt) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """IoU between every predicted and every ground-truth instance (ids > 0).

    Returns (pred ids, gt ids, iou) with iou of shape (len(pred ids), len(gt ids)).
    """
    pred, gt = _pair(pred, gt)
    pids, parea = np.unique(pred[pred > 0], return_counts=True)
    gids, garea = np.unique(gt[gt > 0], return_counts=True)
    inter = np.zeros((len(pids), len(gids)), dtype=np.int64)
    both = (pred > 0) & (gt > 0)
    if both.any():
        pairs, cnt = np.unique(np.stack([pred[both], gt[both]], axis=1), axis=0, return_counts=True)
        inter[np.searchsorted(pids, pairs[:, 0]), np.searchsorted(gids, pairs[:, 1])] = cnt
    union = parea[:, None] + garea[None, :] - inter
    return pids, gids, inter / np.maximum(union, 1)


def _interpolated_area(tp: np.ndarray, n_gt: int) -> float:
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(((mrec[step + 1] - mrec[step]) * mpre[step + 1]).sum())


def _ap_at(iou: np.ndarray, rank: np.ndarray, thr: float) -> float:
    n_pred, n_gt = iou.shape
    if n_gt == 0:
        return 0.0 if n_pred else 1.0
    if n_pred == 0:
        return 0.0
    taken = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(n_pred)
    for k, p in enumerate(rank):
        cand = np.where(~taken & (iou[p] >= thr), iou[p], -1.0)
        j = int(np.argmax(cand))  # first max -> smaller gt id
        if cand[j] >= 0:
            taken[j] = True
            tp[k] = 1.0
    return _interpolated_area(tp, n_gt)


def average_precision(
    pred,
    gt,
    iou_thresholds=AP_THRESHOLDS,
    confidence: dict[int, float] | None = None,
) -> dict[str, float]:
    """Class-agnostic AP with greedy matching and all-point interpolation.

    Predictions are ranked by confidence (default 1.0), then by their best
    IoU with any ground truth, then by id. Each prediction takes the
    unmatched ground truth with the largest IoU at or above the threshold.
    ``AP`` averages over ``iou_thresholds``; ``AP50`` and ``AP25`` are
    reported alongside.
    """
    pids, _, iou = iou_matrix(pred, gt)
    confidence = confidence or {}
    conf = np.array([confidence.get(int(p), 1.0) for p in pids])
    best = iou.max(axis=1) if iou.shape[1] else np.zeros(len(pids))
    rank = np.lexsort((pids, -best, -conf))
    per = {float(t): _ap_at(iou, rank, t) for t in sorted(set(iou_thresholds) | {0.5, 0.25})}
    return {
        "AP": float(np.mean([per[float(t)] for t in iou_thresholds])),
        "AP50": per[0.5],
        "AP25": per[0.25],
    }


def miou_macc(pred_maps, gt_maps, n_classes: int) -> tuple[float, float]:
    """Mean IoU and mean accuracy over classes 1..n_classes present in the ground truth.

    Ground-truth class 0 pixels are ignored. Returns (0, 0) when no class is present.
    """
    pred = np.concatenate([np.asarray(m).reshape(-1) for m in pred_maps]).astype(np.int64)
    gt = np.concatenate([np.asarray(m).reshape(-1) for m in gt_maps]).astype(np.int64)
    if pred.shape != gt.shape:
        raise DimensionError("prediction and ground-truth maps cover different pixel counts")
    keep = gt > 0
    pred, gt = pred[keep], gt[keep]
    ious, accs = [], []
    for c in range(1, n_classes + 1):
        g = gt == c
        if not g.any():
            continue
        p = pred == c
        inter = int((p & g).sum())
        ious.append(inter / int((p | g).sum()))
        accs.append(inter / int(g.sum()))
    if not ious:
        return 0.0, 0.0
    return float(np.mean(ious)), float(np.mean(accs))

