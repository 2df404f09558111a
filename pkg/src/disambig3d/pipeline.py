"""End-to-end run: fuse maps, extract 3D masks, disambiguate, correct, vote, evaluate."""
from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import overlap_fill
from .bundle import ID_DTYPE, SceneBundle, write_map, write_ply
from .disambiguation import (
    DEFAULT_TAU_D,
    DEFAULT_TAU_N,
    GroupResult,
    MaskGroup,
    MaskKey,
    MaskRecord,
    MergeEvent,
    correct_maps,
    disambiguate_group,
)
from .errors import BundleError, InputError
from .evaluation import ari, average_precision, miou_macc, nmi
from .geometry import DEFAULT_VOXEL_SIZE, LabeledPointCloud, backproject, voxel_downsample
from .semantics import aggregate_votes, assign_classes, vote_single_view
from .synthetic import CorruptionSpec, GTView, corrupt


@dataclass
class PipelineConfig:
    tau_d: float = DEFAULT_TAU_D
    tau_n: float = DEFAULT_TAU_N
    voxel_size: float = DEFAULT_VOXEL_SIZE
    max_instances: int = 200
    order: str = "timestamp"
    seed: int = 0
    # "label": one 3D mask per source label mask; "rendered": one per (rendered id, view)
    granularity: str = "label"
    workers: int = 1
    disambiguate: bool = True
    # used only when the bundle has no rendered maps but has ground truth
    corruption: CorruptionSpec | None = None

    def __post_init__(self):
        if not self.tau_d > 0:
            raise InputError("tau_d must be positive")
        if self.tau_n < 0:
            raise InputError("tau_n must be non-negative")
        if not self.voxel_size > 0:
            raise InputError("voxel_size must be positive")
        if self.max_instances < 1:
            raise InputError("max_instances must be at least 1")
        if self.order not in ("timestamp", "shuffled"):
            raise InputError(f"order must be 'timestamp' or 'shuffled', got {self.order!r}")
        if self.granularity not in ("label", "rendered"):
            raise InputError(f"granularity must be 'label' or 'rendered', got {self.granularity!r}")
        if self.workers < 1:
            raise InputError("workers must be at least 1")


@dataclass
class PipelineResult:
    fused: list[np.ndarray]
    corrected: list[np.ndarray]
    records: list[MaskRecord]
    groups: list[GroupResult]
    global_id: dict[MaskKey, int]
    cloud: LabeledPointCloud
    votes: np.ndarray | None = None
    instance_class: dict[int, int] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)

    @property
    def events(self) -> list[MergeEvent]:
        return [e for g in self.groups for e in g.events]


def rendered_maps(bundle: SceneBundle, config: PipelineConfig) -> list[np.ndarray]:
    if bundle.has("rendered"):
        return [v.rendered for v in bundle.views]
    if bundle.has("gt_instance") and config.corruption is not None:
        gt = [
            GTView(v.depth, v.gt_instance.astype(np.int64), np.zeros_like(v.gt_instance, dtype=np.int64))
            for v in bundle.views
        ]
        return [c.rendered for c in corrupt(gt, config.corruption, config.seed).views]
    raise BundleError("rendered_0000.bin", "bundle has no rendered maps and no ground truth to emulate them from")


def _extract_view(bundle: SceneBundle, n: int, fused: np.ndarray, config: PipelineConfig):
    """3D masks of one view, in (rendered id, label id) order; ordinals are filled in later."""
    view = bundle.views[n]
    label = view.instance.astype(np.int64)
    if config.granularity == "label":
        regions = np.unique(np.stack([fused[label > 0], label[label > 0]], axis=1), axis=0).tolist()
    else:
        regions = [[u, 0] for u in np.unique(fused[fused > 0]).tolist()]
    out = []
    for u, t in regions:
        sel = (fused == u) & (label == t) if t else fused == u
        cloud = backproject(view.depth, bundle.intrinsics, view.pose, sel.astype(np.int64))
        out.append((MaskKey(int(u), n, int(t)), voxel_downsample(cloud, config.voxel_size)))
    return out


def _mask_truth(key: MaskKey, fused, labels, gt) -> int:
    sel = fused[key.view] == key.rendered_id
    if key.label_id:
        sel &= labels[key.view] == key.label_id
    ids, cnt = np.unique(gt[key.view][sel], return_counts=True)
    return int(ids[np.argmax(cnt)])


def run_pipeline(bundle: SceneBundle, config: PipelineConfig | None = None) -> PipelineResult:
    config = config or PipelineConfig()
    labels = [v.instance.astype(np.int64) for v in bundle.views]
    rendered = [r.astype(np.int64) for r in rendered_maps(bundle, config)]

    fresh = itertools.count(max(config.max_instances, max(int(r.max(initial=0)) for r in rendered)) + 1)
    fused = [overlap_fill(lab, ren, fresh) for lab, ren in zip(labels, rendered)]

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        per_view = list(pool.map(lambda n: _extract_view(bundle, n, fused[n], config), range(len(bundle.views))))

        records: list[MaskRecord] = []
        for masks in per_view:
            for key, cloud in masks:
                ordinal = len(records) + 1
                cloud = LabeledPointCloud(cloud.xyz, np.full(len(cloud), ordinal), np.full(len(cloud), ordinal))
                records.append(MaskRecord(key, ordinal, cloud))

        groups: dict[int, MaskGroup] = {}
        for rec in records:
            groups.setdefault(rec.key.rendered_id, MaskGroup(rec.key.rendered_id)).records.append(rec)
        ordered = [groups[u] for u in sorted(groups)]

        def solve(group: MaskGroup) -> GroupResult:
            if not config.disambiguate:
                return GroupResult(group.rendered_id, [frozenset(r.key for r in group.records)], [])
            return disambiguate_group(
                group, config.tau_d, config.tau_n, config.order, seed=f"{config.seed}:{group.rendered_id}"
            )

        results = list(pool.map(solve, ordered))

    corrected, global_id = correct_maps(results, fused, labels if config.granularity == "label" else None)
    cloud = LabeledPointCloud.concat(
        LabeledPointCloud(r.cloud.xyz, np.full(len(r.cloud), global_id[r.key]), r.cloud.mask_index) for r in records
    )
    result = PipelineResult(fused, corrected, records, results, global_id, cloud)

    if bundle.has("semantic"):
        n_inst = max(int(c.max(initial=0)) for c in corrected)
        n_cls = max([int(v.semantic.max(initial=0)) for v in bundle.views] + list(bundle.class_names))
        votes = [
            vote_single_view(c, v.semantic, n_inst, n_cls, v.semantic_valid) for c, v in zip(corrected, bundle.views)
        ]
        result.votes = aggregate_votes(votes)
        result.instance_class = assign_classes(result.votes)

    result.metrics = compute_metrics(bundle, result, labels)
    return result


def compute_metrics(bundle: SceneBundle, result: PipelineResult, labels=None) -> dict[str, float]:
    m: dict[str, float] = {
        "n_views": len(bundle.views),
        "n_masks": len(result.records),
        "n_groups": len(result.groups),
        "n_instances": len({g for g in result.global_id.values()}),
        "n_merge_events": len(result.events),
        "n_points": len(result.cloud),
    }
    if not bundle.has("gt_instance"):
        return m
    gt = [v.gt_instance.astype(np.int64) for v in bundle.views]
    gt_flat = np.concatenate([g.reshape(-1) for g in gt])
    before = np.concatenate([f.reshape(-1) for f in result.fused])
    after = np.concatenate([c.reshape(-1) for c in result.corrected])
    for tag, pred in (("before", before), ("after", after)):
        ap = average_precision(pred, gt_flat)
        m[f"ap_{tag}"], m[f"ap50_{tag}"], m[f"ap25_{tag}"] = ap["AP"], ap["AP50"], ap["AP25"]
        fg = gt_flat > 0
        m[f"ari_pixel_{tag}"] = ari(pred[fg], gt_flat[fg])
        m[f"nmi_pixel_{tag}"] = nmi(pred[fg], gt_flat[fg])

    labels = labels if labels is not None else [v.instance.astype(np.int64) for v in bundle.views]
    keys = [r.key for r in result.records]
    truth = [_mask_truth(k, result.fused, labels, gt) for k in keys]
    mask_before = [k.rendered_id for k in keys]
    mask_after = [result.global_id[k] for k in keys]
    m["ari_mask_before"], m["ari_mask_after"] = ari(mask_before, truth), ari(mask_after, truth)
    m["nmi_mask_before"], m["nmi_mask_after"] = nmi(mask_before, truth), nmi(mask_after, truth)

    if result.instance_class and bundle.has("gt_semantic"):
        lut = np.zeros(max(result.instance_class) + 1, dtype=np.int64)
        for u, c in result.instance_class.items():
            lut[u] = c
        pred_sem = [lut[c] for c in result.corrected]
        n_cls = max(int(v.gt_semantic.max(initial=0)) for v in bundle.views)
        m["miou"], m["macc"] = miou_macc(pred_sem, [v.gt_semantic for v in bundle.views], n_cls)
    return m


def format_report(metrics: dict[str, float]) -> str:
    lines = []
    for k in sorted(metrics):
        v = metrics[k]
        lines.append(f"{k}={v:.10f}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"


def write_outputs(result: PipelineResult, out_dir, class_names: dict[int, str] | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for n, c in enumerate(result.corrected):
        write_map(out / f"corrected_{n:04d}.bin", c, ID_DTYPE)
    write_ply(out / "cloud.ply", result.cloud)
    log = ["# round group winner absorbed overlap rule"] + [e.format() for e in result.events]
    (out / "merge_log.txt").write_text("\n".join(log) + "\n")
    (out / "report.txt").write_text(format_report(result.metrics))
    (out / "report.json").write_text(json.dumps(result.metrics, indent=2, sort_keys=True) + "\n")
    if result.votes is not None:
        names = class_names or {}
        rows = ["# instance class class_name votes..."]
        for u in range(1, result.votes.shape[0]):
            c = result.instance_class.get(u, 0)
            tally = " ".join(str(x) for x in result.votes[u, 1:].tolist())
            rows.append(f"{u} {c} {names.get(c, 'unknown' if c == 0 else f'class_{c}')} {tally}")
        (out / "instance_classes.txt").write_text("\n".join(rows) + "\n")
