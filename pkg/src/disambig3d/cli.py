"""Command-line entry point.

Exit codes: 0 success, 1 data error (bad or missing bundle files), 2 usage
error (bad flags or configuration values).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bundle import ID_DTYPE, SceneBundle, read_map, write_ply
from .errors import BundleError, InputError
from .evaluation import ari, average_precision, nmi
from .geometry import DEFAULT_VOXEL_SIZE, LabeledPointCloud, backproject, voxel_downsample
from .pipeline import PipelineConfig, format_report, run_pipeline, write_outputs
from .synthetic import CorruptionSpec, SceneSpec, generate_bundle, make_large_object_scene, make_scene

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("disambig3d")


class UsageError(Exception):
    pass


def _corruption(args) -> CorruptionSpec:
    return CorruptionSpec(
        alias_rate=args.alias,
        fragmentation_rate=args.fragmentation,
        boundary_noise_px=args.boundary_noise,
        semantic_noise_rate=args.semantic_noise,
        max_instances=args.max_instances,
    )


def cmd_generate(args) -> int:
    try:
        if args.scene:
            spec = SceneSpec.load(args.scene)
        elif args.large_object:
            spec = make_large_object_scene(seed=args.seed)
        else:
            spec = make_scene(n_objects=args.objects, n_views=args.views, seed=args.seed, n_classes=args.classes)
        corruption = _corruption(args)
    except InputError as exc:
        raise UsageError(str(exc)) from exc
    if args.write_scene:
        spec.save(args.write_scene)
    bundle = generate_bundle(spec, corruption, args.seed)
    bundle.save(args.out)
    log.info("wrote %d views to %s", len(bundle.views), args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        config = PipelineConfig(
            tau_d=args.tau_d,
            tau_n=args.tau_n,
            voxel_size=args.voxel_size,
            max_instances=args.max_instances,
            order=args.order,
            seed=args.seed,
            granularity=args.granularity,
            workers=args.workers,
            disambiguate=not args.no_disambiguation,
            corruption=CorruptionSpec(alias_rate=args.alias, boundary_noise_px=args.boundary_noise)
            if args.emulate_rendered
            else None,
        )
    except InputError as exc:
        raise UsageError(str(exc)) from exc
    bundle = SceneBundle.load(args.bundle)
    result = run_pipeline(bundle, config)
    write_outputs(result, args.out, bundle.class_names)
    sys.stdout.write(format_report(result.metrics))
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = SceneBundle.load(args.bundle)
    if not bundle.has("gt_instance"):
        raise BundleError(Path(args.bundle) / "gt_instance_0000.bin", "evaluation needs ground-truth instance maps")
    pred = [read_map(Path(args.pred) / f"{args.prefix}_{n:04d}.bin", ID_DTYPE) for n in range(len(bundle.views))]
    p = np.concatenate([m.reshape(-1) for m in pred]).astype(np.int64)
    g = np.concatenate([v.gt_instance.reshape(-1) for v in bundle.views]).astype(np.int64)
    ap = average_precision(p, g)
    fg = g > 0
    metrics = {"ap": ap["AP"], "ap50": ap["AP50"], "ap25": ap["AP25"], "ari_pixel": ari(p[fg], g[fg]), "nmi_pixel": nmi(p[fg], g[fg])}
    text = format_report(metrics)
    if args.out:
        Path(args.out).write_text(text)
        Path(args.out).with_suffix(".json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_export(args) -> int:
    if not args.voxel_size > 0:
        raise UsageError("voxel size must be positive")
    bundle = SceneBundle.load(args.bundle)
    clouds = []
    for n, v in enumerate(bundle.views):
        ids = v.instance if args.maps is None else read_map(Path(args.maps) / f"{args.prefix}_{n:04d}.bin", ID_DTYPE)
        ids = ids.astype(np.int64)
        for u in np.unique(ids[ids > 0]).tolist():
            cloud = backproject(v.depth, bundle.intrinsics, v.pose, np.where(ids == u, u, 0))
            clouds.append(voxel_downsample(cloud, args.voxel_size))
    cloud = LabeledPointCloud.concat(clouds)
    write_ply(args.out, cloud)
    log.info("wrote %d points to %s", len(cloud), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="disambig3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic scene into a bundle")
    g.add_argument("out", help="bundle directory to write")
    g.add_argument("--scene", help="scene description (JSON) to render instead of a random one")
    g.add_argument("--write-scene", help="also save the scene description here")
    g.add_argument("--large-object", action="store_true", help="long box filmed with small view overlap")
    g.add_argument("--objects", type=int, default=10)
    g.add_argument("--views", type=int, default=20)
    g.add_argument("--classes", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--alias", type=float, default=0.3, help="fraction of objects that borrow another's rendered id")
    g.add_argument("--fragmentation", type=float, default=0.3, help="probability a label mask is split in two")
    g.add_argument("--boundary-noise", type=int, default=1, help="rendered-mask dilation/erosion in pixels")
    g.add_argument("--semantic-noise", type=float, default=0.1, help="per-view probability of a wrong class")
    g.add_argument("--max-instances", type=int, default=200)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="disambiguate a bundle and write corrected maps, cloud, log and report")
    r.add_argument("bundle")
    r.add_argument("out")
    r.add_argument("--tau-d", type=float, default=PipelineConfig.tau_d, help="match radius in meters")
    r.add_argument("--tau-n", type=float, default=PipelineConfig.tau_n, help="absolute matched-point floor")
    r.add_argument("--voxel-size", type=float, default=PipelineConfig.voxel_size)
    r.add_argument("--max-instances", type=int, default=PipelineConfig.max_instances)
    r.add_argument("--order", default="timestamp", help="timestamp or shuffled")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--granularity", default="label", help="label or rendered")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--no-disambiguation", action="store_true", help="keep rendered ids (ablation baseline)")
    r.add_argument("--emulate-rendered", action="store_true", help="derive rendered maps from ground truth if absent")
    r.add_argument("--alias", type=float, default=0.0, help="alias rate for --emulate-rendered")
    r.add_argument("--boundary-noise", type=int, default=0, help="boundary noise for --emulate-rendered")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score predicted instance maps against bundle ground truth")
    e.add_argument("bundle")
    e.add_argument("pred", help="directory with predicted maps")
    e.add_argument("--prefix", default="corrected")
    e.add_argument("--out", help="write the key=value report here (and a .json next to it)")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="write per-mask voxelised clouds of a bundle as PLY")
    x.add_argument("bundle")
    x.add_argument("out")
    x.add_argument("--maps", help="directory of instance maps to use instead of the bundle's label maps")
    x.add_argument("--prefix", default="corrected")
    x.add_argument("--voxel-size", type=float, default=DEFAULT_VOXEL_SIZE)
    x.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BundleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
