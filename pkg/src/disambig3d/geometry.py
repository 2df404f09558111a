"""Pinhole camera model, depth back-projection, voxel downsampling and radius matching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import DimensionError, InputError

DEFAULT_VOXEL_SIZE = 0.05


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InputError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError("principal point lies outside the image")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def validate_pose(pose: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Check a 4x4 camera-to-world matrix and return it as float64."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4):
        raise DimensionError(f"pose must be 4x4, got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise InputError("pose contains non-finite values")
    if not np.allclose(pose[3], [0.0, 0.0, 0.0, 1.0], atol=tol, rtol=0):
        raise InputError("pose last row must be (0, 0, 0, 1)")
    rot = pose[:3, :3]
    if not np.allclose(rot.T @ rot, np.eye(3), atol=tol, rtol=0) or abs(np.linalg.det(rot) - 1.0) > tol:
        raise InputError("pose rotation block is not a proper rotation")
    return pose


@dataclass
class LabeledPointCloud:
    """Points with an instance label and the ordinal of the mask they came from."""

    xyz: np.ndarray
    labels: np.ndarray
    mask_index: np.ndarray

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.mask_index = np.asarray(self.mask_index, dtype=np.int64).reshape(-1)
        n = len(self.xyz)
        if len(self.labels) != n or len(self.mask_index) != n:
            raise DimensionError("xyz, labels and mask_index lengths differ")

    def __len__(self) -> int:
        return len(self.xyz)

    @classmethod
    def empty(cls) -> LabeledPointCloud:
        return cls(np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0, np.int64))

    @classmethod
    def concat(cls, clouds) -> LabeledPointCloud:
        clouds = list(clouds)
        if not clouds:
            return cls.empty()
        return cls(
            np.concatenate([c.xyz for c in clouds]),
            np.concatenate([c.labels for c in clouds]),
            np.concatenate([c.mask_index for c in clouds]),
        )

    def relabeled(self, labels: np.ndarray) -> LabeledPointCloud:
        return LabeledPointCloud(self.xyz, labels, self.mask_index)


def backproject(
    depth: np.ndarray,
    intr: CameraIntrinsics,
    pose: np.ndarray,
    ids: np.ndarray,
    mask_index: int | None = None,
) -> LabeledPointCloud:
    """Lift every pixel with positive depth and positive id into world space.

    Points come out in row-major pixel order. ``mask_index`` defaults to the
    pixel's id when not given.
    """
    depth = np.asarray(depth)
    ids = np.asarray(ids)
    if depth.shape != ids.shape or depth.ndim != 2:
        raise DimensionError(f"depth {depth.shape} and id map {ids.shape} must be equal 2-D shapes")
    if depth.shape != intr.shape:
        raise DimensionError(f"map shape {depth.shape} does not match intrinsics {intr.shape}")
    if not np.all(np.isfinite(depth)):
        raise InputError("depth map contains non-finite values")
    if np.any(depth < 0):
        raise InputError("depth map contains negative values")
    pose = validate_pose(pose)

    v, u = np.nonzero((depth > 0) & (ids > 0))
    z = depth[v, u].astype(np.float64)
    cam = np.stack([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z], axis=1)
    world = cam @ pose[:3, :3].T + pose[:3, 3]
    labels = ids[v, u].astype(np.int64)
    idx = labels if mask_index is None else np.full(len(labels), mask_index, dtype=np.int64)
    return LabeledPointCloud(world, labels, idx)


def reproject(xyz: np.ndarray, intr: CameraIntrinsics, pose: np.ndarray) -> np.ndarray:
    """World points to (u, v, depth) columns for the given camera."""
    pose = validate_pose(pose)
    cam = (np.asarray(xyz, dtype=np.float64) - pose[:3, 3]) @ pose[:3, :3]
    z = cam[:, 2]
    return np.stack([cam[:, 0] * intr.fx / z + intr.cx, cam[:, 1] * intr.fy / z + intr.cy, z], axis=1)


def voxel_downsample(cloud: LabeledPointCloud, voxel_size: float = DEFAULT_VOXEL_SIZE) -> LabeledPointCloud:
    """Collapse each occupied voxel to the centroid of its points.

    The surviving label is the voxel's majority label (smaller label on ties);
    mask_index is taken from the first point that fell into the voxel. Output
    order follows the first occurrence of each voxel in the input.
    """
    if not voxel_size > 0:
        raise InputError(f"voxel_size must be positive, got {voxel_size}")
    if len(cloud) == 0:
        return LabeledPointCloud.empty()

    keys = np.floor(cloud.xyz / voxel_size).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # renumber voxels by first appearance so output order is input-driven
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    vox = rank[inverse]
    nvox = len(first)

    counts = np.bincount(vox, minlength=nvox).astype(np.float64)
    centroid = np.stack([np.bincount(vox, weights=cloud.xyz[:, k], minlength=nvox) for k in range(3)], axis=1)
    centroid /= counts[:, None]
    # rounding can push a mean just outside its voxel; members' bounds pin it
    lo = np.full((nvox, 3), np.inf)
    hi = np.full((nvox, 3), -np.inf)
    np.minimum.at(lo, vox, cloud.xyz)
    np.maximum.at(hi, vox, cloud.xyz)
    centroid = np.clip(centroid, lo, hi)

    # majority label: count (voxel, label) runs, keep the largest run per voxel
    pair, pair_count = np.unique(np.stack([vox, cloud.labels], axis=1), axis=0, return_counts=True)
    sel = np.lexsort((pair[:, 1], -pair_count, pair[:, 0]))
    pair = pair[sel]
    keep = np.ones(len(pair), dtype=bool)
    keep[1:] = pair[1:, 0] != pair[:-1, 0]
    labels = np.empty(nvox, dtype=np.int64)
    labels[pair[keep, 0]] = pair[keep, 1]

    first_sorted = np.sort(first)
    return LabeledPointCloud(centroid, labels, cloud.mask_index[first_sorted])


def radius_match(
    a: LabeledPointCloud, b: LabeledPointCloud, tau_d: float, backend: str | None = None
) -> np.ndarray:
    """Nearest-neighbour pairs closer than ``tau_d``, as an (K, 2) array of (index in a, index in b).

    Each point of the smaller cloud (``a`` when sizes tie) contributes at most
    one pair; points of the larger cloud may be matched several times. Rows
    are sorted by a-index, then b-index.
    """
    if not tau_d > 0:
        raise InputError(f"tau_d must be positive, got {tau_d}")
    if len(a) == 0 or len(b) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if len(a) <= len(b):
        nn = _backend.nearest_within(a.xyz, b.xyz, tau_d, backend)
        qi = np.nonzero(nn >= 0)[0]
        pairs = np.stack([qi, nn[qi]], axis=1)
    else:
        nn = _backend.nearest_within(b.xyz, a.xyz, tau_d, backend)
        qi = np.nonzero(nn >= 0)[0]
        pairs = np.stack([nn[qi], qi], axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order].astype(np.int64)
