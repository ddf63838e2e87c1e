import numpy as np
import pytest

from bundlemart.errors import ChartEscapeError, DegenerateMetricError, NoOverlapError
from bundlemart.geometry import (Chart, ChartedManifold, OneFormVal, PointRef, TangentVec,
                                 christoffel_from_metric, distance_estimate, geodesic_shoot,
                                 transition_point)
from bundlemart.manifolds import colatitude_point, flat_space, sphere, torus, wrapped_difference
from bundlemart.models import riemann_tensor


def test_sphere_charts_agree_on_overlap(s2, rng):
    for _ in range(50):
        x = rng.uniform(-1.2, 1.2, 2)
        if np.linalg.norm(x) < 0.3:
            continue
        y = s2.transition(0, 1, x)
        np.testing.assert_allclose(s2.embed(0, x), s2.embed(1, y), atol=1e-12)
        np.testing.assert_allclose(s2.transition(1, 0, y), x, atol=1e-12)


def test_metric_pulls_back_under_transition(s2, rng):
    x = np.array([0.7, -0.4])
    J = s2.transition_jacobian(0, 1, x)
    g0 = s2.metric(0, x)
    g1 = s2.metric(1, s2.transition(0, 1, x))
    np.testing.assert_allclose(J.T @ g1 @ J, g0, atol=1e-7)


def test_closed_christoffel_matches_finite_differences(s2):
    p = PointRef("south", np.array([0.3, -0.6]))
    np.testing.assert_allclose(s2.christoffel(0, p.coords), christoffel_from_metric(s2, p),
                               atol=1e-7)


def test_sphere_sectional_curvature_is_one(s2):
    x = np.array([0.4, 0.2])
    R = riemann_tensor(s2, 0, x)
    g = s2.metric(0, x)
    # R(e1, e2, e2, e1) / |e1 ^ e2|^2 with the index order R[k, j, i, h]
    sec = np.einsum("h,h->", R[0, 1, 1], g[0]) / (g[0, 0] * g[1, 1] - g[0, 1] ** 2)
    assert abs(sec - 1.0) < 1e-6


def test_torus_is_flat(t2):
    x = np.array([1.0, 2.0])
    assert np.all(riemann_tensor(t2, 0, x) == 0.0)


def test_tangent_and_form_transform_consistently(s2):
    p = PointRef("south", np.array([0.8, 0.5]))
    v = TangentVec(p, np.array([0.3, -1.1]))
    w = OneFormVal(p, np.array([2.0, 0.7]))
    assert abs(w(v) - w.to_chart(s2, "north")(v.to_chart(s2, "north"))) < 1e-8


def test_point_outside_chart_rejected():
    t = torus(2)
    with pytest.raises(ChartEscapeError):
        t.point("wrapped", [7.0, 0.0])


def test_transition_without_overlap():
    man = ChartedManifold("two", [Chart("a", 1), Chart("b", 1)],
                          lambda c, x: np.ones(x.shape[:-1] + (1, 1)))
    with pytest.raises(NoOverlapError):
        transition_point(man, PointRef("a", [0.0]), "b")


def test_degenerate_metric_reported():
    man = ChartedManifold("bad", [Chart("a", 2)], lambda c, x: np.zeros(x.shape[:-1] + (2, 2)))
    with pytest.raises(DegenerateMetricError):
        man.inverse_metric(0, np.zeros(2))


def test_great_circle_geodesic_returns_after_two_pi(s2):
    p = PointRef("south", np.array([0.0, 0.0]))
    path = geodesic_shoot(s2, p, np.array([1.0, 0.0]), 2 * np.pi, 1e-3)
    end = s2.embed(path.charts[-1], path.coords[-1])
    np.testing.assert_allclose(end, s2.embed(0, p.coords), atol=1e-8)


@pytest.mark.parametrize("theta", [0.3, 1.2, 2.5])
def test_sphere_distance_from_pole(s2, theta):
    north = PointRef("north", np.zeros(2))
    q = colatitude_point(s2, theta)
    assert abs(distance_estimate(s2, north, q) - theta) < 1e-6
    assert abs(s2.closed_distance(north, q) - theta) < 1e-12


def test_flat_distance_and_zero_distance():
    r2 = flat_space(2)
    p, q = PointRef("cartesian", [0.0, 0.0]), PointRef("cartesian", [3.0, 4.0])
    assert abs(distance_estimate(r2, p, q) - 5.0) < 1e-8
    assert distance_estimate(r2, p, p) == 0.0


def test_wrapped_difference_range(rng):
    d = wrapped_difference(rng.uniform(-20, 20, 1000))
    assert np.all(d >= -np.pi) and np.all(d < np.pi)


def test_radius_scales_metric():
    big = sphere(2, radius=2.0)
    small = sphere(2)
    x = np.array([0.2, 0.1])
    np.testing.assert_allclose(big.metric(0, x), 4 * small.metric(0, x))
