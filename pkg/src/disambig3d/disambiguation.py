"""Hierarchical instance disambiguation inside groups of 3D masks sharing a rendered id.

Masks are compared pairwise in rounds (1-2, 3-4, ...), each pair's union goes
on to the next round, until a single cloud remains. Two point labels are
merged when their matched-point count exceeds half of the smaller label's
point count, or exceeds the absolute floor ``tau_n``.
"""
from __future__ import annotations

import random
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConsistencyError, InputError
from .geometry import LabeledPointCloud, radius_match

DEFAULT_TAU_D = 0.075
DEFAULT_TAU_N = 50


class MaskKey(NamedTuple):
    """Address of one mask: rendered id, view, and source label id.

    ``label_id`` is 0 when masks are addressed at rendered-id granularity,
    i.e. the whole region of ``rendered_id`` in the fused map of ``view``.
    """

    rendered_id: int
    view: int
    label_id: int = 0


@dataclass
class MaskRecord:
    """One 3D mask. Every point carries ``ordinal`` as both label and mask_index."""

    key: MaskKey
    ordinal: int
    cloud: LabeledPointCloud


@dataclass
class MaskGroup:
    rendered_id: int
    records: list[MaskRecord] = field(default_factory=list)

    def ordered(self, order: str = "timestamp", seed: int | None = None) -> list[MaskRecord]:
        recs = sorted(self.records, key=lambda r: (r.key.view, r.key.label_id, r.ordinal))
        if order == "shuffled":
            random.Random(seed).shuffle(recs)
        elif order != "timestamp":
            raise InputError(f"unknown mask order {order!r}")
        return recs


@dataclass(frozen=True)
class MergeEvent:
    round: int
    group: int
    winner: int
    absorbed: int
    overlap: int
    rule: str  # "half", "tau_n" or "both"

    def format(self) -> str:
        return f"{self.round} {self.group} {self.winner} {self.absorbed} {self.overlap} {self.rule}"


class UnionFind:
    """Disjoint sets over integer labels; the smallest label is always the root."""

    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent.get(root, root) != root:
            root = parent[root]
        while x != root:
            parent[x], x = root, parent.get(x, x)
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        lo, hi = min(ra, rb), max(ra, rb)
        self.parent[hi] = lo
        self.parent.setdefault(lo, lo)
        return lo


def overlap_table(a: LabeledPointCloud, b: LabeledPointCloud, tau_d: float) -> dict[tuple[int, int], int]:
    """Matched-point counts keyed by (label in a, label in b)."""
    pairs = radius_match(a, b, tau_d)
    if len(pairs) == 0:
        return {}
    la = a.labels[pairs[:, 0]]
    lb = b.labels[pairs[:, 1]]
    keys, counts = np.unique(np.stack([la, lb], axis=1), axis=0, return_counts=True)
    return {(int(k[0]), int(k[1])): int(c) for k, c in zip(keys, counts)}


def _label_counts(cloud: LabeledPointCloud) -> dict[int, int]:
    lab, cnt = np.unique(cloud.labels, return_counts=True)
    return dict(zip(lab.tolist(), cnt.tolist()))


def compare_pair(
    a: LabeledPointCloud,
    b: LabeledPointCloud,
    tau_d: float = DEFAULT_TAU_D,
    tau_n: float = DEFAULT_TAU_N,
    *,
    round_no: int = 0,
    group: int = 0,
) -> tuple[LabeledPointCloud, list[MergeEvent]]:
    """Match two clouds, merge overlapping labels, and return their union.

    In the union, every merged label set is relabeled to its smallest label.
    """
    if tau_n < 0:
        raise InputError(f"tau_n must be non-negative, got {tau_n}")
    table = overlap_table(a, b, tau_d)
    count_a, count_b = _label_counts(a), _label_counts(b)
    uf = UnionFind()
    events = []
    for (la, lb), o in sorted(table.items()):
        smaller = min(count_a[la], count_b[lb])
        half = o > smaller / 2
        floor = o > tau_n
        if not (half or floor):
            continue
        rule = "both" if half and floor else ("half" if half else "tau_n")
        events.append(MergeEvent(round_no, group, la, lb, o, rule))
        uf.union(la, lb)

    union = LabeledPointCloud.concat([a, b])
    if events:
        lut = {lab: uf.find(lab) for lab in np.unique(union.labels).tolist()}
        union = union.relabeled(np.array([lut[x] for x in union.labels.tolist()], dtype=np.int64))
    return union, events


@dataclass
class GroupResult:
    rendered_id: int
    blocks: list[frozenset[MaskKey]]
    events: list[MergeEvent]


def disambiguate_group(
    group: MaskGroup,
    tau_d: float = DEFAULT_TAU_D,
    tau_n: float = DEFAULT_TAU_N,
    order: str = "timestamp",
    seed: int | None = None,
    executor: ThreadPoolExecutor | None = None,
) -> GroupResult:
    """Partition a group's masks into real objects.

    Blocks are sorted by their smallest mask ordinal. An odd cloud out in a
    round is carried unpaired into the next one. ``executor`` lets the
    disjoint pairs of one round run concurrently; the result does not
    depend on it.
    """
    if not group.records:
        raise InputError(f"group {group.rendered_id} is empty")
    recs = group.ordered(order, seed)
    key_of = {r.ordinal: r.key for r in recs}
    uf = UnionFind()
    clouds = [r.cloud.relabeled(np.full(len(r.cloud), r.ordinal, dtype=np.int64)) for r in recs]
    events: list[MergeEvent] = []
    rnd = 0
    while len(clouds) > 1:
        jobs = [(clouds[i], clouds[i + 1]) for i in range(0, len(clouds) - 1, 2)]

        def run(job, rnd=rnd):
            return compare_pair(job[0], job[1], tau_d, tau_n, round_no=rnd, group=group.rendered_id)

        results = list(executor.map(run, jobs)) if executor is not None else [run(j) for j in jobs]
        nxt = []
        for union, evs in results:
            for e in evs:
                uf.union(e.winner, e.absorbed)
            events.extend(evs)
            nxt.append(union)
        if len(clouds) % 2:
            nxt.append(clouds[-1])
        clouds = nxt
        rnd += 1

    by_root: dict[int, list[int]] = defaultdict(list)
    for ordinal in key_of:
        by_root[uf.find(ordinal)].append(ordinal)
    blocks = [frozenset(key_of[o] for o in members) for _, members in sorted(by_root.items())]
    return GroupResult(group.rendered_id, blocks, events)


def brute_force_partition(
    records: list[MaskRecord], tau_d: float = DEFAULT_TAU_D, tau_n: float = DEFAULT_TAU_N
) -> list[frozenset[MaskKey]]:
    """Transitive closure of independent all-pairs merge decisions."""
    uf = UnionFind()
    for r in records:
        uf.find(r.ordinal)
    for i, ri in enumerate(records):
        a = ri.cloud.relabeled(np.full(len(ri.cloud), ri.ordinal, dtype=np.int64))
        for rj in records[i + 1:]:
            b = rj.cloud.relabeled(np.full(len(rj.cloud), rj.ordinal, dtype=np.int64))
            _, evs = compare_pair(a, b, tau_d, tau_n)
            if evs:
                uf.union(ri.ordinal, rj.ordinal)
    by_root: dict[int, set[MaskKey]] = defaultdict(set)
    for r in records:
        by_root[uf.find(r.ordinal)].add(r.key)
    return [frozenset(v) for _, v in sorted(by_root.items())]


def correct_maps(
    results: list[GroupResult],
    fused: list[np.ndarray],
    labels: list[np.ndarray] | None = None,
) -> tuple[list[np.ndarray], dict[MaskKey, int]]:
    """Rewrite fused maps so each partition block has one globally unique id.

    Blocks are numbered 1, 2, ... in (rendered id, block order). Foreground
    pixels not covered by any key get further fresh ids, one per
    (view, fused id, label id) region, numbered in view order. ``labels`` is
    needed whenever keys carry a non-zero ``label_id``.

    Returns the corrected maps and the key -> global id table.
    """
    global_id: dict[MaskKey, int] = {}
    next_id = 1
    for res in sorted(results, key=lambda r: r.rendered_id):
        for block in res.blocks:
            for key in block:
                if key in global_id:
                    raise ConsistencyError(f"mask {key} appears in two partition blocks")
                global_id[key] = next_id
            next_id += 1

    out = [np.zeros(np.shape(m), dtype=np.int64) for m in fused]
    covered = [np.zeros(np.shape(m), dtype=bool) for m in fused]
    for key, gid in global_id.items():
        if not 0 <= key.view < len(fused):
            raise ConsistencyError(f"mask {key} refers to a missing view")
        sel = fused[key.view] == key.rendered_id
        if key.label_id:
            if labels is None:
                raise ConsistencyError("label-granularity keys need the label maps")
            sel &= labels[key.view] == key.label_id
        if not sel.any():
            raise ConsistencyError(f"mask {key} addresses no pixels")
        out[key.view][sel] = gid
        covered[key.view] |= sel

    for n, m in enumerate(fused):
        rest = (np.asarray(m) > 0) & ~covered[n]
        if not rest.any():
            continue
        lab = np.asarray(labels[n]) if labels is not None else np.zeros_like(m)
        regions = np.unique(np.stack([np.asarray(m)[rest], lab[rest]], axis=1), axis=0)
        for u, t in regions.tolist():
            sel = rest & (m == u) & (lab == t)
            out[n][sel] = next_id
            next_id += 1
    return out, global_id
