import subprocess
import sys

import numpy as np
import pytest

from bundlemart import _pykernels

ck = pytest.importorskip("bundlemart._ckernels")


def _inputs(n_paths=64, n_steps=300, dt=1e-2):
    rng = np.random.default_rng(1)
    dW = rng.standard_normal((n_paths, n_steps, 2)) * np.sqrt(dt)
    x0 = np.tile([0.5, 0.0], (n_paths, 1))
    return dW, x0


def test_sphere_kernel_matches_numpy():
    dW, x0 = _inputs()
    c0 = np.zeros(len(x0), dtype=np.int64)
    a = _pykernels.sphere_euler(x0, c0, dW, 1.0, 1.5, 3)
    b = ck.sphere_euler(x0, c0, dW, 1.0, 1.5, 3)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    assert np.array_equal(a[1], b[1])


@pytest.mark.parametrize("reflect", [0, 1])
def test_torus_kernel_matches_numpy(reflect):
    dW, x0 = _inputs()
    y0 = x0 + [1.5, 0.3]
    a = _pykernels.torus_couple(x0, y0, dW, reflect, 0.1, 1)
    b = ck.torus_couple(x0, y0, dW, reflect, 0.1, 1)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, atol=1e-10)


def test_pure_fallback_selected_by_environment():
    code = "import bundlemart.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"BUNDLEMART_PURE": "1", "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"
