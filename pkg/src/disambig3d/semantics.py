"""Multi-view instance-to-class voting.

Vote matrices are indexed directly by id: row = instance id, column = class
id. Row 0 and column 0 (background / unlabeled) never receive votes.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DimensionError


def vote_single_view(
    instances: np.ndarray,
    classes: np.ndarray,
    n_instances: int | None = None,
    n_classes: int | None = None,
    valid: np.ndarray | None = None,
) -> np.ndarray:
    """One vote per instance present in the view, for the class it overlaps most.

    Class 0 never wins; an instance that only covers class-0 pixels abstains.
    Ties go to the smaller class id. ``valid`` (optional, same shape) marks
    pixels whose class survived upstream filtering; others count as class 0.
    """
    instances = np.asarray(instances).astype(np.int64)
    classes = np.asarray(classes).astype(np.int64)
    if instances.shape != classes.shape:
        raise DimensionError(f"instance map {instances.shape} and class map {classes.shape} differ")
    if valid is not None:
        if np.shape(valid) != classes.shape:
            raise DimensionError("validity map shape differs from class map")
        classes = np.where(np.asarray(valid) > 0, classes, 0)
    rows = int(n_instances if n_instances is not None else instances.max(initial=0)) + 1
    cols = int(n_classes if n_classes is not None else classes.max(initial=0)) + 1
    votes = np.zeros((rows, cols), dtype=np.int64)

    fg = (instances > 0) & (classes > 0)
    if not fg.any():
        return votes
    pair, count = np.unique(np.stack([instances[fg], classes[fg]], axis=1), axis=0, return_counts=True)
    sel = np.lexsort((pair[:, 1], -count, pair[:, 0]))
    pair = pair[sel]
    first = np.ones(len(pair), dtype=bool)
    first[1:] = pair[1:, 0] != pair[:-1, 0]
    votes[pair[first, 0], pair[first, 1]] = 1
    return votes


def aggregate_votes(votes) -> np.ndarray:
    votes = list(votes)
    if not votes:
        raise DimensionError("no vote matrices to aggregate")
    shape = votes[0].shape
    for v in votes[1:]:
        if v.shape != shape:
            raise DimensionError(f"vote matrix shapes differ: {shape} vs {v.shape}")
    return np.sum(votes, axis=0)


def assign_classes(total: np.ndarray) -> dict[int, int]:
    """Row-wise argmax (smallest class on ties); rows without votes map to 0."""
    out = {}
    for u in range(1, total.shape[0]):
        row = total[u]
        out[u] = int(np.argmax(row)) if row.max(initial=0) > 0 else 0
    return out


def aggregate_and_assign(votes) -> dict[int, int]:
    return assign_classes(aggregate_votes(votes))


def read_class_names(path) -> dict[int, str]:
    """One name per line; line k (counting from 1) names class k."""
    lines = Path(path).read_text().splitlines()
    return {i + 1: name.strip() for i, name in enumerate(lines)}
