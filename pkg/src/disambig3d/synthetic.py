"""Analytic test scenes: ray-cast boxes and spheres, then corrupt the instance ids.

The corrupted output mimics the two inputs the pipeline expects:

* a *rendered* map whose ids are consistent across views but whose masks have
  sloppy boundaries, and where some distinct objects share one id;
* a *label* map with exact boundaries but per-view random ids, where some
  masks are split into two fragments.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .disambiguation import (
    DEFAULT_TAU_D,
    DEFAULT_TAU_N,
    MaskGroup,
    MaskKey,
    MaskRecord,
    brute_force_partition,
)
from .errors import InputError
from .geometry import CameraIntrinsics, LabeledPointCloud, validate_pose, voxel_downsample


@dataclass
class SceneObject:
    kind: str  # "box" or "sphere"
    center: list[float]
    size: list[float]  # box: half extents (x, y, z); sphere: [radius]
    instance_id: int
    class_id: int

    def __post_init__(self):
        if self.kind not in ("box", "sphere"):
            raise InputError(f"unknown object kind {self.kind!r}")
        if self.kind == "sphere" and len(self.size) != 1:
            raise InputError("sphere size is [radius]")
        if self.kind == "box" and len(self.size) != 3:
            raise InputError("box size is [hx, hy, hz]")
        if min(self.size) <= 0:
            raise InputError(f"object {self.instance_id} has a non-positive extent")
        if self.instance_id < 1 or self.class_id < 1:
            raise InputError("instance and class ids start at 1")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.size * 3 if self.kind == "sphere" else self.size, dtype=np.float64)
        return c - h, c + h


@dataclass
class SceneSpec:
    room_min: list[float]
    room_max: list[float]
    objects: list[SceneObject]
    poses: list[list[list[float]]]
    intrinsics: CameraIntrinsics
    n_classes: int
    seed: int = 0

    def __post_init__(self):
        lo, hi = np.asarray(self.room_min), np.asarray(self.room_max)
        for obj in self.objects:
            blo, bhi = obj.bounds()
            if np.any(blo < lo - 1e-9) or np.any(bhi > hi + 1e-9):
                raise InputError(f"object {obj.instance_id} leaves the room")
            if obj.class_id > self.n_classes:
                raise InputError(f"object {obj.instance_id} has class {obj.class_id} > {self.n_classes}")
        if not self.poses:
            raise InputError("scene needs at least one camera")
        for p in self.poses:
            validate_pose(np.asarray(p))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intrinsics"] = asdict(self.intrinsics)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        d = dict(d)
        d["objects"] = [SceneObject(**o) for o in d["objects"]]
        d["intrinsics"] = CameraIntrinsics(**d["intrinsics"])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> SceneSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class CorruptionSpec:
    alias_rate: float = 0.0
    fragmentation_rate: float = 0.0
    boundary_noise_px: int = 0
    semantic_noise_rate: float = 0.0
    # randomise rendered ids and per-view label ids; off gives rendered == label == GT at zero rates
    relabel: bool = True
    max_instances: int = 200

    def __post_init__(self):
        for name in ("alias_rate", "fragmentation_rate", "semantic_noise_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {v}")
        if self.boundary_noise_px < 0:
            raise InputError("boundary_noise_px must be non-negative")


@dataclass
class GTView:
    depth: np.ndarray
    instance: np.ndarray
    semantic: np.ndarray


@dataclass
class CorruptedView:
    rendered: np.ndarray
    label: np.ndarray
    semantic: np.ndarray


@dataclass
class Corruption:
    views: list[CorruptedView]
    rendered_id: dict[int, int] = field(default_factory=dict)  # GT instance -> rendered id


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose for an x-right, y-down, z-forward camera."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f /= np.linalg.norm(f)
    r = np.cross(f, up)
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = r, d, f, eye
    return pose


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=130.0, fy=130.0, cx=80.0, cy=60.0, width=160, height=120)


def make_scene(
    n_objects: int = 10,
    n_views: int = 20,
    seed: int = 0,
    n_classes: int = 8,
    intrinsics: CameraIntrinsics | None = None,
    gap: float = 0.3,
) -> SceneSpec:
    """Random tabletop-free room: objects on the floor, cameras on a circle looking in."""
    rng = np.random.default_rng(seed)
    half = 2.2
    objects: list[SceneObject] = []
    placed: list[tuple[float, float, float]] = []
    attempts = 0
    while len(objects) < n_objects:
        attempts += 1
        if attempts > 10000:
            raise InputError("could not place all objects; lower n_objects or gap")
        if rng.random() < 0.5:
            h = rng.uniform(0.18, 0.3, size=3)
            kind, size, foot, hz = "box", h.tolist(), float(np.hypot(h[0], h[1])), float(h[2])
        else:
            r = float(rng.uniform(0.2, 0.3))
            kind, size, foot, hz = "sphere", [r], r, r
        xy = rng.uniform(-half + foot, half - foot, size=2)
        if any(np.hypot(xy[0] - x, xy[1] - y) < foot + f + gap for x, y, f in placed):
            continue
        placed.append((float(xy[0]), float(xy[1]), foot))
        objects.append(
            SceneObject(kind, [float(xy[0]), float(xy[1]), hz], size, len(objects) + 1, int(rng.integers(1, n_classes + 1)))
        )
    phase = rng.uniform(0, 2 * np.pi)
    poses = []
    for k in range(n_views):
        a = phase + 2 * np.pi * k / n_views
        poses.append(look_at([4.5 * np.cos(a), 4.5 * np.sin(a), 2.0], [0.0, 0.0, 0.3]).tolist())
    return SceneSpec([-3.0, -3.0, 0.0], [3.0, 3.0, 3.0], objects, poses, intrinsics or default_intrinsics(), n_classes, seed)


def make_large_object_scene(camera_x=(-1.8, -0.66, 0.58, 1.72), seed: int = 0) -> SceneSpec:
    """One long box filmed face-on from 1 m by a camera sliding along it.

    Each view covers about 1.23 m of the 4.8 m front face, so neighbouring
    masks share only a thin strip: with the default camera positions about
    68, 17 and 51 matched points after voxelisation, far below half a mask
    (~430 points) but around the absolute floor.
    """
    objects = [SceneObject("box", [0.0, 0.0, 0.4], [2.4, 0.35, 0.4], 1, 1)]
    poses = [look_at([x, -1.35, 0.4], [x, 0.0, 0.4]).tolist() for x in camera_x]
    return SceneSpec([-3.0, -3.0, 0.0], [3.0, 3.0, 3.0], objects, poses, default_intrinsics(), 1, seed)


def _pixel_rays(intr: CameraIntrinsics, pose: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[0 : intr.height, 0 : intr.width]
    d_cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones(u.shape)], axis=-1).reshape(-1, 3)
    return pose[:3, 3], d_cam @ pose[:3, :3].T


def _hit_sphere(origin, dirs, center, radius) -> np.ndarray:
    oc = origin - np.asarray(center)
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = 2.0 * dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - 4 * a * c
    s = np.full(len(dirs), np.inf)
    ok = disc >= 0
    root = np.sqrt(np.where(ok, disc, 0.0))
    s1 = (-b - root) / (2 * a)
    s2 = (-b + root) / (2 * a)
    s = np.where(ok & (s1 > 0), s1, s)
    s = np.where(ok & ~(s1 > 0) & (s2 > 0), s2, s)
    return s


def _hit_box(origin, dirs, lo, hi) -> np.ndarray:
    t_near = np.full(len(dirs), -np.inf)
    t_far = np.full(len(dirs), np.inf)
    for k in range(3):
        dk = dirs[:, k]
        par = dk == 0
        inside = lo[k] <= origin[k] <= hi[k]
        safe = np.where(par, 1.0, dk)
        t1 = (lo[k] - origin[k]) / safe
        t2 = (hi[k] - origin[k]) / safe
        tmin = np.where(par, -np.inf if inside else np.inf, np.minimum(t1, t2))
        tmax = np.where(par, np.inf if inside else -np.inf, np.maximum(t1, t2))
        t_near = np.maximum(t_near, tmin)
        t_far = np.minimum(t_far, tmax)
    hit = t_near <= t_far
    s = np.where(hit & (t_near > 0), t_near, np.inf)
    return np.where(hit & ~(t_near > 0) & (t_far > 0), t_far, s)


def render_view(spec: SceneSpec, view: int) -> GTView:
    intr = spec.intrinsics
    origin, dirs = _pixel_rays(intr, np.asarray(spec.poses[view], dtype=np.float64))
    depth = np.full(len(dirs), np.inf)
    inst = np.zeros(len(dirs), dtype=np.int64)
    sem = np.zeros(len(dirs), dtype=np.int64)
    for obj in spec.objects:
        if obj.kind == "sphere":
            s = _hit_sphere(origin, dirs, obj.center, obj.size[0])
        else:
            lo, hi = obj.bounds()
            s = _hit_box(origin, dirs, lo, hi)
        win = s < depth
        depth[win] = s[win]
        inst[win] = obj.instance_id
        sem[win] = obj.class_id
    depth[~np.isfinite(depth)] = 0.0
    shape = intr.shape
    # rays have unit z in camera space, so the ray parameter is the axial depth
    return GTView(depth.reshape(shape), inst.reshape(shape), sem.reshape(shape))


def render_views(spec: SceneSpec) -> list[GTView]:
    return [render_view(spec, n) for n in range(len(spec.poses))]


def _alias_plan(ids: list[int], rate: float, rng: np.random.Generator) -> dict[int, int]:
    """Map each aliased object to the object whose rendered id it borrows."""
    n_alias = int(round(rate * len(ids)))
    if n_alias == 0:
        return {}
    perm = [ids[i] for i in rng.permutation(len(ids))]
    victims, hosts = perm[:n_alias], perm[n_alias:]
    if not hosts:
        hosts = victims[:1]
        victims = victims[1:]
    return {v: hosts[i % len(hosts)] for i, v in enumerate(victims)}


def _split(mask: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray] | None:
    rows, cols = np.nonzero(mask)
    for axis in rng.permutation(2):
        coord = rows if axis == 0 else cols
        cut = np.median(coord)
        part = coord <= cut if (coord < cut).sum() == 0 else coord < cut
        if 0 < part.sum() < len(coord):
            a = np.zeros_like(mask)
            a[rows[part], cols[part]] = True
            return a, mask & ~a
    return None


def corrupt(gt: list[GTView], corruption: CorruptionSpec, seed: int = 0, n_classes: int | None = None) -> Corruption:
    """Emulate rendered and label instance maps from ground truth.

    Randomness comes from one stream for the scene-level alias plan and one
    independent stream per view, all derived from ``seed``. ``n_classes``
    bounds the replacement classes drawn by semantic noise (default: the
    largest class id seen).
    """
    ids = sorted(set().union(*(np.unique(g.instance[g.instance > 0]).tolist() for g in gt)))
    if n_classes is None:
        n_classes = int(max((g.semantic.max(initial=0) for g in gt), default=0))
    scene_ss, *view_ss = np.random.SeedSequence(seed).spawn(len(gt) + 1)
    rng = np.random.default_rng(scene_ss)
    if corruption.relabel:
        if len(ids) > corruption.max_instances:
            raise InputError("more objects than instance slots")
        slots = rng.choice(np.arange(1, corruption.max_instances + 1), size=len(ids), replace=False)
        rendered_id = {i: int(s) for i, s in zip(ids, slots)}
    else:
        rendered_id = {i: i for i in ids}
    for victim, host in _alias_plan(ids, corruption.alias_rate, rng).items():
        rendered_id[victim] = rendered_id[host]

    views = []
    k = corruption.boundary_noise_px
    structure = np.ones((2 * k + 1, 2 * k + 1), dtype=bool)
    for g, ss in zip(gt, view_ss):
        vrng = np.random.default_rng(ss)
        present = [i for i in ids if (g.instance == i).any()]

        rendered = np.zeros_like(g.instance)
        mean_depth = {i: float(g.depth[g.instance == i].mean()) for i in present}
        ops = {i: vrng.random() < 0.5 for i in present}  # True: dilate
        for i in sorted(present, key=lambda i: (-mean_depth[i], i)):
            m = g.instance == i
            if k:
                m = ndimage.binary_dilation(m, structure) if ops[i] else ndimage.binary_erosion(m, structure)
            rendered[m] = rendered_id[i]

        segments: list[tuple[int, np.ndarray]] = []
        for i in present:
            m = g.instance == i
            parts = _split(m, vrng) if vrng.random() < corruption.fragmentation_rate else None
            segments.extend((i, p) for p in (parts or (m,)))
        label = np.zeros_like(g.instance)
        if corruption.relabel:
            new_ids = vrng.permutation(len(segments)) + 1
        else:
            new_ids, extra, seen = [], max(ids, default=0), set()
            for i, _ in segments:
                if i in seen:
                    extra += 1
                    new_ids.append(extra)
                else:
                    seen.add(i)
                    new_ids.append(i)
        for (_, m), t in zip(segments, new_ids):
            label[m] = t

        semantic = g.semantic.copy()
        for i in present:
            if n_classes > 1 and vrng.random() < corruption.semantic_noise_rate:
                m = g.instance == i
                true_c = int(g.semantic[m][0])
                wrong = int(vrng.integers(1, n_classes))
                semantic[m] = wrong if wrong < true_c else wrong + 1
        views.append(CorruptedView(rendered, label, semantic))
    return Corruption(views, rendered_id)


def brute_force_disambiguate(
    group: MaskGroup, tau_d: float = DEFAULT_TAU_D, tau_n: float = DEFAULT_TAU_N
) -> list[frozenset[MaskKey]]:
    """Reference partition: every mask pair compared independently, then transitive closure."""
    return brute_force_partition(list(group.records), tau_d, tau_n)


def _surface_samples(obj: SceneObject, spacing: float, rng: np.random.Generator) -> np.ndarray:
    if obj.kind == "sphere":
        r = obj.size[0]
        n = int(4 * np.pi * r * r / spacing**2)
        v = rng.normal(size=(n, 3))
        return np.asarray(obj.center) + r * v / np.linalg.norm(v, axis=1, keepdims=True)
    lo, hi = obj.bounds()
    ext = hi - lo
    area = 2 * (ext[0] * ext[1] + ext[1] * ext[2] + ext[0] * ext[2])
    n = int(area / spacing**2)
    pts = rng.uniform(lo, hi, size=(n, 3))
    face_axis = rng.integers(0, 3, size=n)
    side = rng.integers(0, 2, size=n)
    pts[np.arange(n), face_axis] = np.where(side == 1, hi[face_axis], lo[face_axis])
    return pts


def make_consistent_group(
    n_masks: int,
    n_objects: int,
    seed: int,
    voxel_size: float = 0.05,
    rendered_id: int = 1,
) -> tuple[MaskGroup, dict[MaskKey, int]]:
    """A mask group whose pairwise merge decisions do not depend on comparison order.

    Objects are at least 1 m apart; each mask is a random 60-100% subset of
    one object's dense surface sampling, voxel-downsampled. Same-object masks
    therefore overlap almost completely and different objects never match.
    Returns the group and each mask's true object.
    """
    rng = np.random.default_rng(seed)
    objs = []
    for j in range(n_objects):
        center = [2.0 * j, float(rng.uniform(-0.2, 0.2)), 0.5]
        if rng.random() < 0.5:
            objs.append(SceneObject("sphere", center, [float(rng.uniform(0.15, 0.35))], j + 1, 1))
        else:
            objs.append(SceneObject("box", center, rng.uniform(0.1, 0.35, size=3).tolist(), j + 1, 1))
    dense = [_surface_samples(o, 0.015, rng) for o in objs]
    owner = np.concatenate([np.arange(n_objects), rng.integers(0, n_objects, size=max(0, n_masks - n_objects))])
    owner = owner[rng.permutation(len(owner))][:n_masks]
    group = MaskGroup(rendered_id)
    truth = {}
    for l, j in enumerate(owner.tolist(), start=1):
        pts = dense[j]
        keep = rng.random(len(pts)) < rng.uniform(0.6, 1.0)
        cloud = LabeledPointCloud(pts[keep], np.full(keep.sum(), l), np.full(keep.sum(), l))
        key = MaskKey(rendered_id, l - 1, 0)
        group.records.append(MaskRecord(key, l, voxel_downsample(cloud, voxel_size)))
        truth[key] = j + 1
    return group, truth


def generate_bundle(spec: SceneSpec, corruption: CorruptionSpec, seed: int = 0):
    """Render, corrupt and package a scene. Depth is rounded to float32, as on disk."""
    from .bundle import SceneBundle, View

    gt = render_views(spec)
    cor = corrupt(gt, corruption, seed, spec.n_classes)
    views = []
    for pose, g, c in zip(spec.poses, gt, cor.views):
        views.append(
            View(
                pose=np.asarray(pose, dtype=np.float64),
                depth=g.depth.astype(np.float32).astype(np.float64),
                instance=c.label,
                rendered=c.rendered,
                semantic=c.semantic,
                gt_instance=g.instance,
                gt_semantic=g.semantic,
            )
        )
    names = {c: f"class_{c}" for c in range(1, spec.n_classes + 1)}
    return SceneBundle(spec.intrinsics, views, names)
