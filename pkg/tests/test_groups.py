import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from bundlemart.groups import MatrixGroup

angles = st.floats(-3.0, 3.0, allow_nan=False)


@given(angles, angles, angles)
@settings(max_examples=50, deadline=None)
def test_ad_invariance_so3(a, b, c):
    G = MatrixGroup("SO3")
    g = G.exp(np.array([a, b, c]) / 2)
    xi, eta = np.array([a, c, b]), np.array([c, a, b])
    assert abs(G.inner(G.Ad(g, xi), G.Ad(g, eta)) - G.inner(xi, eta)) <= 1e-10 * (1 + abs(a * b * c))


@given(angles)
@settings(max_examples=50, deadline=None)
def test_exp_log_roundtrip_one_dim(t):
    for name in ("U1", "SO2"):
        G = MatrixGroup(name)
        assert abs(G.log(G.exp(np.array([t])))[0] - t) < 1e-10


def test_exp_log_so3_near_identity(rng):
    G = MatrixGroup("SO3")
    for _ in range(20):
        w = rng.normal(size=3) * 0.1
        np.testing.assert_allclose(G.exp(G.log(G.exp(w))), G.exp(w), atol=1e-10)


def test_so3_log_at_pi():
    G = MatrixGroup("SO3")
    w = np.array([0.0, 0.0, np.pi])
    np.testing.assert_allclose(G.exp(G.log(G.exp(w))), G.exp(w), atol=1e-8)


def test_circle_distance():
    G = MatrixGroup("U1")
    for th in (0.1, 1.0, 3.0):
        assert abs(G.distance(G.identity(), G.exp(np.array([th]))) - th) < 1e-12


def test_o2_reflections_are_far():
    G = MatrixGroup("O2")
    assert np.isinf(G.distance(np.eye(2), np.diag([1.0, -1.0])))


def test_unknown_group_rejected():
    import pytest
    with pytest.raises(ValueError):
        MatrixGroup("SU3")
