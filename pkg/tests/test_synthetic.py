import numpy as np
import pytest

from disambig3d.errors import InputError
from disambig3d.pipeline import run_pipeline
from disambig3d.synthetic import (
    CorruptionSpec,
    SceneObject,
    SceneSpec,
    brute_force_disambiguate,
    corrupt,
    default_intrinsics,
    generate_bundle,
    look_at,
    make_consistent_group,
    make_scene,
    render_view,
    render_views,
)
from disambig3d.disambiguation import disambiguate_group

ROOM = ([-6.0, -6.0, -6.0], [6.0, 6.0, 6.0])


def _spec(objects, poses, n_classes=3):
    return SceneSpec(*ROOM, objects, poses, default_intrinsics(), n_classes)


def test_look_at_axes():
    pose = look_at([0, 0, 0], [1, 0, 0])
    np.testing.assert_allclose(pose[:3, 2], [1, 0, 0])  # forward
    np.testing.assert_allclose(pose[:3, 1], [0, 0, -1])  # image down is world down
    assert np.linalg.det(pose[:3, :3]) == pytest.approx(1.0)


def test_empty_room():
    view = render_view(_spec([], [look_at([0, 0, 0], [1, 0, 0]).tolist()]), 0)
    assert (view.depth == 0).all() and (view.instance == 0).all()


def test_sphere_center_depth():
    spec = _spec([SceneObject("sphere", [3.0, 0, 0], [1.0], 1, 2)], [look_at([0, 0, 0], [1, 0, 0]).tolist()])
    view = render_view(spec, 0)
    assert view.depth[60, 80] == pytest.approx(2.0, abs=1e-12)
    assert view.instance[60, 80] == 1 and view.semantic[60, 80] == 2


def test_overlapping_boxes_zbuffer():
    near = SceneObject("box", [3.0, 0.0, 0.5], [0.5, 0.5, 0.5], 1, 1)
    far = SceneObject("box", [4.0, 0.3, 0.5], [0.5, 0.5, 0.5], 2, 2)
    pose = look_at([0, 0, 0.5], [1, 0, 0.5])
    view = render_view(_spec([near, far], [pose.tolist()]), 0)

    # the camera sits inside both boxes' y and z slabs, so each box is entered through its x = const front face
    intr = default_intrinsics()
    v, u = np.mgrid[0 : intr.height, 0 : intr.width]
    dy = -(u - intr.cx) / intr.fx  # camera x axis is world -y
    dz = -(v - intr.cy) / intr.fy  # camera y axis is world -z
    exp_depth = np.zeros(intr.shape)
    exp_id = np.zeros(intr.shape, dtype=int)
    for obj, x in ((far, 3.5), (near, 2.5)):
        y, z = dy * x, 0.5 + dz * x
        lo, hi = obj.bounds()
        inside = (y >= lo[1]) & (y <= hi[1]) & (z >= lo[2]) & (z <= hi[2])
        exp_depth[inside] = x
        exp_id[inside] = obj.instance_id
    edge = np.zeros(intr.shape, dtype=bool)
    for obj, x in ((far, 3.5), (near, 2.5)):
        lo, hi = obj.bounds()
        for b in (lo[1], hi[1]):
            edge |= np.abs(dy * x - b) < 1e-9
        for b in (lo[2], hi[2]):
            edge |= np.abs(0.5 + dz * x - b) < 1e-9
    ok = ~edge
    np.testing.assert_array_equal(view.instance[ok], exp_id[ok])
    np.testing.assert_allclose(view.depth[ok], exp_depth[ok], atol=1e-12)
    assert (exp_id == 1).sum() > 100 and (exp_id == 2).sum() > 100


def test_scene_validation():
    with pytest.raises(InputError):
        SceneObject("cone", [0, 0, 0], [1.0], 1, 1)
    with pytest.raises(InputError):
        _spec([SceneObject("sphere", [5.5, 0, 0], [1.0], 1, 1)], [np.eye(4).tolist()])
    with pytest.raises(InputError):
        _spec([], [])
    with pytest.raises(InputError):
        CorruptionSpec(alias_rate=1.5)


def test_scene_json_roundtrip(tmp_path):
    spec = make_scene(n_objects=4, n_views=3, seed=2)
    spec.save(tmp_path / "scene.json")
    again = SceneSpec.load(tmp_path / "scene.json")
    assert again == spec


@pytest.fixture(scope="module")
def gt_views():
    return render_views(make_scene(n_objects=10, n_views=6, seed=3))


def test_zero_rates_reproduce_ground_truth(gt_views):
    cor = corrupt(gt_views, CorruptionSpec(relabel=False), seed=1)
    for g, c in zip(gt_views, cor.views):
        np.testing.assert_array_equal(c.rendered, g.instance)
        np.testing.assert_array_equal(c.label, g.instance)
        np.testing.assert_array_equal(c.semantic, g.semantic)


def test_alias_shares_ids(gt_views):
    cor = corrupt(gt_views, CorruptionSpec(alias_rate=0.3), seed=1)
    ids = cor.rendered_id
    assert len(ids) == 10
    assert len(set(ids.values())) == 7
    for g, c in zip(gt_views, cor.views):
        for i, r in ids.items():
            m = g.instance == i
            assert (c.rendered[m] == r).all()


def test_label_maps_keep_boundaries(gt_views):
    cor = corrupt(gt_views, CorruptionSpec(fragmentation_rate=0.5, boundary_noise_px=2), seed=4)
    n_fragments = 0
    for g, c in zip(gt_views, cor.views):
        assert ((c.label > 0) == (g.instance > 0)).all()
        for t in np.unique(c.label[c.label > 0]):
            assert len(np.unique(g.instance[c.label == t])) == 1
        n_fragments += len(np.unique(c.label[c.label > 0])) - len(np.unique(g.instance[g.instance > 0]))
    assert n_fragments > 0


def test_no_boundary_noise_keeps_pixel_counts(gt_views):
    cor = corrupt(gt_views, CorruptionSpec(alias_rate=0.0), seed=5)
    for g, c in zip(gt_views, cor.views):
        for i, r in cor.rendered_id.items():
            assert (c.rendered == r).sum() == (g.instance == i).sum()


def test_semantic_noise_replaces_whole_object(gt_views):
    cor = corrupt(gt_views, CorruptionSpec(semantic_noise_rate=1.0), seed=6, n_classes=8)
    for g, c in zip(gt_views, cor.views):
        for i in np.unique(g.instance[g.instance > 0]):
            m = g.instance == i
            assert len(np.unique(c.semantic[m])) == 1
            assert c.semantic[m][0] != g.semantic[m][0]


def test_corruption_deterministic(gt_views):
    spec = CorruptionSpec(0.3, 0.3, 1, 0.1)
    a, b = corrupt(gt_views, spec, seed=9), corrupt(gt_views, spec, seed=9)
    for x, y in zip(a.views, b.views):
        for name in ("rendered", "label", "semantic"):
            np.testing.assert_array_equal(getattr(x, name), getattr(y, name))


@pytest.mark.parametrize("seed", range(5))
def test_brute_force_independent_of_order(seed):
    group, truth = make_consistent_group(9, 3, seed)
    ref = brute_force_disambiguate(group)
    group.records.reverse()
    assert brute_force_disambiguate(group) == ref
    assert disambiguate_group(group, order="shuffled", seed=seed).blocks == ref


@pytest.mark.parametrize("alias", [0.0, 0.3, 0.5])
def test_end_to_end_recovers_instances(alias):
    bundle = generate_bundle(make_scene(seed=1), CorruptionSpec(alias_rate=alias, fragmentation_rate=0.3), seed=1)
    metrics = run_pipeline(bundle).metrics
    assert metrics["ari_mask_after"] == 1.0
    assert metrics["ari_pixel_after"] == 1.0
