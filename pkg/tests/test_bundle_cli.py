import filecmp
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from disambig3d.bundle import DEPTH_DTYPE, ID_DTYPE, SceneBundle, read_map, read_ply, write_map, write_ply
from disambig3d.cli import main
from disambig3d.errors import BundleError, InputError
from disambig3d.geometry import LabeledPointCloud
from disambig3d.pipeline import PipelineConfig, run_pipeline

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def golden(tmp_path_factory):
    root = tmp_path_factory.mktemp("golden")
    assert main(["generate", str(root / "bundle"), "--seed", "7"]) == 0
    return root / "bundle"


@pytest.fixture(scope="module")
def golden_out(golden, tmp_path_factory):
    out = tmp_path_factory.mktemp("golden_out")
    assert main(["run", str(golden), str(out)]) == 0
    return out


def _read_log(path):
    return [line for line in Path(path).read_text().splitlines() if not line.startswith("#")]


class TestMaps:
    def test_roundtrip(self, tmp_path):
        ids = np.arange(12, dtype=np.uint16).reshape(3, 4) * 1000
        write_map(tmp_path / "m.bin", ids, ID_DTYPE)
        np.testing.assert_array_equal(read_map(tmp_path / "m.bin", ID_DTYPE), ids)
        depth = np.linspace(0, 5, 12).reshape(3, 4).astype(np.float32)
        write_map(tmp_path / "d.bin", depth, DEPTH_DTYPE)
        np.testing.assert_array_equal(read_map(tmp_path / "d.bin", DEPTH_DTYPE), depth)

    def test_header_layout(self, tmp_path):
        write_map(tmp_path / "m.bin", np.ones((2, 3), dtype=np.uint16), ID_DTYPE)
        raw = (tmp_path / "m.bin").read_bytes()
        assert raw[:4] == b"CU3D"
        assert raw[4:16] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
        assert raw[16:18] == b"\x01\x00"
        assert len(raw) == 16 + 12

    @pytest.mark.parametrize(
        "mutate, message",
        [
            (lambda b: b"XXXX" + b[4:], "magic"),
            (lambda b: b[:4] + (2).to_bytes(4, "little") + b[8:], "version"),
            (lambda b: b[:-2], "payload"),
            (lambda b: b[:10], "header"),
        ],
    )
    def test_rejects_corrupt(self, tmp_path, mutate, message):
        p = tmp_path / "m.bin"
        write_map(p, np.ones((2, 2), dtype=np.uint16), ID_DTYPE)
        p.write_bytes(mutate(p.read_bytes()))
        with pytest.raises(BundleError, match=message):
            read_map(p, ID_DTYPE)

    def test_out_of_range_ids(self, tmp_path):
        with pytest.raises(InputError):
            write_map(tmp_path / "m.bin", np.array([[70000]]), ID_DTYPE)


class TestPly:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        cloud = LabeledPointCloud(rng.normal(size=(20, 3)), rng.integers(1, 9, 20), np.ones(20, dtype=np.int64))
        write_ply(tmp_path / "c.ply", cloud)
        back = read_ply(tmp_path / "c.ply")
        np.testing.assert_array_equal(back.xyz, cloud.xyz)
        np.testing.assert_array_equal(back.labels, cloud.labels)

    def test_empty(self, tmp_path):
        write_ply(tmp_path / "c.ply", LabeledPointCloud.empty())
        assert len(read_ply(tmp_path / "c.ply")) == 0


class TestBundle:
    def test_save_load(self, golden, tmp_path):
        b = SceneBundle.load(golden)
        assert len(b.views) == 20 and b.has("rendered") and b.has("gt_semantic")
        assert b.class_names[1] == "class_1"
        b.save(tmp_path / "copy")
        for name in sorted(os.listdir(golden)):
            assert filecmp.cmp(golden / name, tmp_path / "copy" / name, shallow=False), name

    def test_gap_in_numbering(self, golden, tmp_path):
        b = SceneBundle.load(golden)
        b.views = b.views[:2]
        b.save(tmp_path / "b")
        (tmp_path / "b" / "pose_0005.txt").write_text((tmp_path / "b" / "pose_0000.txt").read_text())
        with pytest.raises(BundleError, match="contiguous"):
            SceneBundle.load(tmp_path / "b")

    def test_missing_depth(self, golden, tmp_path):
        b = SceneBundle.load(golden)
        b.views = b.views[:1]
        b.save(tmp_path / "b")
        (tmp_path / "b" / "depth_0000.bin").unlink()
        with pytest.raises(BundleError, match="depth_0000"):
            SceneBundle.load(tmp_path / "b")


class TestCli:
    def test_golden_report(self, golden_out):
        assert (golden_out / "report.txt").read_text() == (DATA / "golden_report.txt").read_text()

    def test_outputs_present(self, golden_out):
        names = set(os.listdir(golden_out))
        assert {"cloud.ply", "merge_log.txt", "report.txt", "report.json", "instance_classes.txt"} <= names
        assert sum(n.startswith("corrected_") for n in names) == 20

    def test_ply_counts_every_downsampled_mask(self, golden):
        result = run_pipeline(SceneBundle.load(golden))
        assert len(result.cloud) == sum(len(r.cloud) for r in result.records)
        assert result.metrics["n_points"] == len(result.cloud)

    def test_ply_file_vertex_count(self, golden_out):
        header = (golden_out / "cloud.ply").read_text().split("end_header")[0]
        report = dict(line.split("=") for line in (golden_out / "report.txt").read_text().split())
        assert f"element vertex {report['n_points']}" in header

    def test_eval_matches_run(self, golden, golden_out, tmp_path, capsys):
        assert main(["eval", str(golden), str(golden_out), "--out", str(tmp_path / "e.txt")]) == 0
        ev = dict(line.split("=") for line in (tmp_path / "e.txt").read_text().split())
        run = dict(line.split("=") for line in (golden_out / "report.txt").read_text().split())
        assert ev["ap"] == run["ap_after"]
        assert ev["ari_pixel"] == run["ari_pixel_after"]

    def test_export(self, golden, tmp_path):
        assert main(["export", str(golden), str(tmp_path / "x.ply")]) == 0
        assert len(read_ply(tmp_path / "x.ply")) > 0

    def test_usage_errors(self, golden, tmp_path, capsys):
        assert main(["run", str(golden), str(tmp_path / "o"), "--tau-d", "-1"]) == 2
        assert main(["run", str(golden), str(tmp_path / "o"), "--order", "sideways"]) == 2
        assert main(["export", str(golden), str(tmp_path / "x.ply"), "--voxel-size", "0"]) == 2
        with pytest.raises(SystemExit) as exc:
            main(["run"])
        assert exc.value.code == 2

    def test_data_errors(self, golden, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope"), str(tmp_path / "o")]) == 1
        assert main(["eval", str(golden), str(tmp_path / "nope")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_module_entry_point(self, golden, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "disambig3d", "run", str(tmp_path / "missing"), str(tmp_path / "o")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 1

    def test_tau_n_ablation_only_drops_floor_merges(self, tmp_path):
        assert main(["generate", str(tmp_path / "b"), "--large-object", "--alias", "0", "--fragmentation", "0", "--boundary-noise", "0"]) == 0
        assert main(["run", str(tmp_path / "b"), str(tmp_path / "o0"), "--tau-n", "0"]) == 0
        assert main(["run", str(tmp_path / "b"), str(tmp_path / "o50"), "--tau-n", "50"]) == 0
        with_floor = _read_log(tmp_path / "o0" / "merge_log.txt")
        without = _read_log(tmp_path / "o50" / "merge_log.txt")
        assert set(without) <= set(with_floor)
        dropped = [line for line in with_floor if line not in without]
        assert dropped and all(line.split()[-1] == "tau_n" for line in dropped)

    def test_no_disambiguation_keeps_rendered_ids(self, golden):
        result = run_pipeline(SceneBundle.load(golden), PipelineConfig(disambiguate=False))
        assert result.events == []
        assert result.metrics["n_instances"] == result.metrics["n_groups"]

    def test_emulated_rendered_maps(self, golden, tmp_path):
        b = SceneBundle.load(golden)
        for v in b.views:
            v.rendered = None
        b.save(tmp_path / "b")
        assert main(["run", str(tmp_path / "b"), str(tmp_path / "o")]) == 1
        assert main(["run", str(tmp_path / "b"), str(tmp_path / "o"), "--emulate-rendered", "--alias", "0.3"]) == 0


def _run_to(bundle, out, workers, env=None):
    cmd = [sys.executable, "-m", "disambig3d", "run", str(bundle), str(out), "--workers", str(workers)]
    subprocess.run(cmd, check=True, capture_output=True, env={**os.environ, **(env or {})})


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


@pytest.mark.slow
def test_backends_write_identical_outputs(golden, golden_out, tmp_path):
    _run_to(golden, tmp_path / "py", 1, {"DISAMBIG3D_PURE_PYTHON": "1"})
    assert _same_tree(golden_out, tmp_path / "py")
