import os
import subprocess
import sys

import numpy as np
import pytest

from disambig3d import _backend
from disambig3d.errors import InputError
from disambig3d.geometry import LabeledPointCloud, radius_match


def _probe(env):
    code = "import disambig3d; print(disambig3d.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env={**os.environ, **env})
    return out.stdout.strip()


def test_env_forces_python():
    assert _probe({"DISAMBIG3D_PURE_PYTHON": "1"}) == "python"


def test_default_prefers_compiled():
    env = {k: v for k, v in os.environ.items() if k != "DISAMBIG3D_PURE_PYTHON"}
    code = "import disambig3d; print(disambig3d.BACKEND)"
    got = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env).stdout.strip()
    assert got == ("cython" if "cython" in _backend.available_backends() else "python")


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.nearest_within(np.zeros((1, 3)), np.zeros((1, 3)), 0.1, backend="fortran")


@pytest.mark.skipif("cython" not in _backend.available_backends(), reason="extension not built")
def test_backends_agree_on_dense_clouds():
    rng = np.random.default_rng(0)
    for n in (10, 500, 5000):
        a = rng.random((n, 3)) * np.cbrt(n) * 0.05
        b = rng.random((n, 3)) * np.cbrt(n) * 0.05
        ca = LabeledPointCloud(a, np.ones(n, dtype=np.int64), np.ones(n, dtype=np.int64))
        cb = LabeledPointCloud(b, np.ones(n, dtype=np.int64), np.ones(n, dtype=np.int64))
        np.testing.assert_array_equal(radius_match(ca, cb, 0.075, "python"), radius_match(ca, cb, 0.075, "cython"))


def test_coordinates_beyond_grid_range():
    far = np.array([[1e9, 0.0, 0.0]])
    with pytest.raises(InputError):
        radius_match(LabeledPointCloud(far, np.ones(1, int), np.ones(1, int)), LabeledPointCloud(far, np.ones(1, int), np.ones(1, int)), 0.075)
