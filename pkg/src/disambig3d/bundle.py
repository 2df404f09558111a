"""On-disk scene bundles and PLY export.

Bundle layout (one directory)::

    intrinsics.txt          fx fy cx cy width height
    pose_0000.txt           4x4 camera-to-world, row-major
    depth_0000.bin          float32 depth in meters, 0 = invalid
    instance_0000.bin       uint16 label instance ids
    rendered_0000.bin       optional, uint16 rendered instance ids
    semantic_0000.bin       optional, uint16 class ids
    semantic_valid_0000.bin optional, uint16 0/1 per-pixel validity of the class map
    gt_instance_0000.bin    optional, uint16 ground-truth instance ids
    gt_semantic_0000.bin    optional, uint16 ground-truth class ids
    classes.txt             optional, one class name per line (line k = class k)

Every ``.bin`` file starts with a 16-byte header: magic ``CU3D``, then
little-endian u32 version (1), u32 height, u32 width; the payload follows
row-major and little-endian.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleError, InputError
from .geometry import CameraIntrinsics, LabeledPointCloud, validate_pose

MAGIC = b"CU3D"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

DEPTH_DTYPE = np.dtype("<f4")
ID_DTYPE = np.dtype("<u2")
OPTIONAL_MAPS = ("rendered", "semantic", "semantic_valid", "gt_instance", "gt_semantic")


def write_map(path, array: np.ndarray, dtype: np.dtype) -> None:
    array = np.asarray(array)
    if array.ndim != 2:
        raise InputError(f"map must be 2-D, got shape {array.shape}")
    if dtype.kind == "u" and array.size and (array.min() < 0 or array.max() > np.iinfo(dtype).max):
        raise InputError(f"values out of range for {dtype}")
    h, w = array.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, h, w))
        fh.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def read_map(path, dtype: np.dtype) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise BundleError(path, f"cannot read ({exc.strerror})") from exc
    if len(raw) < _HEADER.size:
        raise BundleError(path, "truncated header")
    magic, version, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BundleError(path, f"bad magic {magic!r}")
    if version != VERSION:
        raise BundleError(path, f"unsupported version {version}")
    expected = _HEADER.size + h * w * dtype.itemsize
    if len(raw) != expected:
        raise BundleError(path, f"payload size {len(raw) - _HEADER.size} does not match {h}x{w} {dtype}")
    return np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(h, w).copy()


def write_intrinsics(path, intr: CameraIntrinsics) -> None:
    Path(path).write_text(f"{intr.fx!r} {intr.fy!r} {intr.cx!r} {intr.cy!r} {intr.width} {intr.height}\n")


def read_intrinsics(path) -> CameraIntrinsics:
    path = Path(path)
    try:
        fields = path.read_text().split()
        if len(fields) != 6:
            raise ValueError(f"expected 6 values, got {len(fields)}")
        fx, fy, cx, cy = (float(x) for x in fields[:4])
        return CameraIntrinsics(fx, fy, cx, cy, int(fields[4]), int(fields[5]))
    except OSError as exc:
        raise BundleError(path, f"cannot read ({exc.strerror})") from exc
    except ValueError as exc:
        raise BundleError(path, str(exc)) from exc


def write_pose(path, pose: np.ndarray) -> None:
    rows = [" ".join(repr(float(x)) for x in row) for row in np.asarray(pose)]
    Path(path).write_text("\n".join(rows) + "\n")


def read_pose(path) -> np.ndarray:
    path = Path(path)
    try:
        values = np.array(path.read_text().split(), dtype=np.float64)
        if values.size != 16:
            raise ValueError(f"expected 16 values, got {values.size}")
        return validate_pose(values.reshape(4, 4))
    except OSError as exc:
        raise BundleError(path, f"cannot read ({exc.strerror})") from exc
    except ValueError as exc:
        raise BundleError(path, str(exc)) from exc


@dataclass
class View:
    pose: np.ndarray
    depth: np.ndarray
    instance: np.ndarray
    rendered: np.ndarray | None = None
    semantic: np.ndarray | None = None
    semantic_valid: np.ndarray | None = None
    gt_instance: np.ndarray | None = None
    gt_semantic: np.ndarray | None = None


@dataclass
class SceneBundle:
    intrinsics: CameraIntrinsics
    views: list[View]
    class_names: dict[int, str] = field(default_factory=dict)

    def has(self, name: str) -> bool:
        return bool(self.views) and all(getattr(v, name) is not None for v in self.views)

    def save(self, root) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        write_intrinsics(root / "intrinsics.txt", self.intrinsics)
        for n, v in enumerate(self.views):
            write_pose(root / f"pose_{n:04d}.txt", v.pose)
            write_map(root / f"depth_{n:04d}.bin", v.depth, DEPTH_DTYPE)
            write_map(root / f"instance_{n:04d}.bin", v.instance, ID_DTYPE)
            for name in OPTIONAL_MAPS:
                arr = getattr(v, name)
                if arr is not None:
                    write_map(root / f"{name}_{n:04d}.bin", arr, ID_DTYPE)
        if self.class_names:
            names = [self.class_names.get(c, f"class_{c}") for c in range(1, max(self.class_names) + 1)]
            (root / "classes.txt").write_text("\n".join(names) + "\n")

    @classmethod
    def load(cls, root) -> SceneBundle:
        root = Path(root)
        if not root.is_dir():
            raise BundleError(root, "bundle directory does not exist")
        intr = read_intrinsics(root / "intrinsics.txt")
        n_views = 0
        while (root / f"pose_{n_views:04d}.txt").exists():
            n_views += 1
        if n_views == 0:
            raise BundleError(root / "pose_0000.txt", "bundle has no views")
        stray = sorted(p.name for p in root.glob("pose_*.txt") if int(p.stem.split("_")[1]) >= n_views)
        if stray:
            raise BundleError(root / stray[0], "view numbering is not contiguous from 0")

        views = []
        for n in range(n_views):
            depth = read_map(root / f"depth_{n:04d}.bin", DEPTH_DTYPE).astype(np.float64)
            if not np.all(np.isfinite(depth)) or np.any(depth < 0):
                raise BundleError(root / f"depth_{n:04d}.bin", "depth must be finite and non-negative")
            v = View(read_pose(root / f"pose_{n:04d}.txt"), depth, read_map(root / f"instance_{n:04d}.bin", ID_DTYPE))
            for name in OPTIONAL_MAPS:
                p = root / f"{name}_{n:04d}.bin"
                if p.exists():
                    setattr(v, name, read_map(p, ID_DTYPE))
            for name in ("depth", "instance", *OPTIONAL_MAPS):
                arr = getattr(v, name)
                if arr is not None and arr.shape != intr.shape:
                    raise BundleError(root / f"{name}_{n:04d}.bin", f"shape {arr.shape} differs from intrinsics {intr.shape}")
            views.append(v)

        names = {}
        if (root / "classes.txt").exists():
            lines = (root / "classes.txt").read_text().splitlines()
            names = {i + 1: s.strip() for i, s in enumerate(lines)}
        return cls(intr, views, names)


def write_ply(path, cloud: LabeledPointCloud) -> None:
    """ASCII PLY: x y z as doubles, instance id as an int property."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "property int instance",
        "end_header",
    ]
    lines += [f"{x!r} {y!r} {z!r} {lab}" for (x, y, z), lab in zip(cloud.xyz.tolist(), cloud.labels.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> LabeledPointCloud:
    path = Path(path)
    text = path.read_text().splitlines()
    try:
        end = text.index("end_header")
    except ValueError as exc:
        raise BundleError(path, "missing end_header") from exc
    if text[:2] != ["ply", "format ascii 1.0"]:
        raise BundleError(path, "not an ASCII PLY file")
    count = next(int(line.split()[2]) for line in text[:end] if line.startswith("element vertex"))
    rows = [line.split() for line in text[end + 1 : end + 1 + count]]
    if len(rows) != count:
        raise BundleError(path, f"expected {count} vertices, found {len(rows)}")
    xyz = np.array([[float(r[0]), float(r[1]), float(r[2])] for r in rows]).reshape(-1, 3)
    labels = np.array([int(r[3]) for r in rows], dtype=np.int64)
    return LabeledPointCloud(xyz, labels, labels)
