import numpy as np
import pytest

from bundlemart import models, sections
from bundlemart.geometry import PointRef
from bundlemart.paths import MARTINGALE, simulate_brownian

from conftest import south


@pytest.fixture(scope="module")
def tm_torus():
    return models.tangent_bundle("torus2", "sasaki")


@pytest.fixture(scope="module")
def tm_sphere():
    return models.tangent_bundle("sphere2", "sasaki")


def test_section_projects_to_base(tm_sphere, rng):
    s = models.height_gradient(tm_sphere, 0.7)
    x = rng.uniform(-1, 1, (10, 2))
    v = s(0, x)
    assert np.array_equal(v[:, :2], x)
    np.testing.assert_allclose(v[:, 2:], 0.7 * x)


def test_height_gradient_agrees_across_charts(tm_sphere, rng):
    s = models.height_gradient(tm_sphere, 1.0)
    base = tm_sphere.base
    for _ in range(20):
        x = rng.uniform(-1, 1, 2)
        y = base.transition(0, 1, x)
        J = base.transition_jacobian(0, 1, x)
        np.testing.assert_allclose(J @ s.field(0, x), s.field(1, y), atol=1e-12)


def test_lift_is_equivariant(tm_sphere, rng):
    s = models.height_gradient(tm_sphere, 1.0)
    P = tm_sphere.principal
    for _ in range(50):
        p = PointRef("south", np.r_[rng.uniform(-1, 1, 2), rng.uniform(-3, 3)])
        a = rng.uniform(-3, 3)
        lhs = sections.equivariant_lift_eval(s, p, P.group.exp(np.array([a])))
        rhs = np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]]) @ \
            sections.equivariant_lift_eval(s, p)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_lift_is_frame_components(tm_sphere):
    s = models.height_gradient(tm_sphere, 1.0)
    p = PointRef("south", np.array([0.3, 0.2, 0.4]))
    np.testing.assert_allclose(sections.equivariant_lift_eval(s, p),
                               sections.frame_components(s, p, s.field(0, p.coords[:2])))


def test_sin_field_tension_on_flat_torus(tm_torus, rng):
    s = models.torus_field(tm_torus, "sin")
    x = rng.uniform(0, 2 * np.pi, (30, 2))
    _, vert, err = sections.vertical_tension_batch(s, 0, x)
    np.testing.assert_allclose(vert[:, 0], -np.sin(x[:, 0]), atol=1e-6)
    np.testing.assert_allclose(vert[:, 1], 0.0, atol=1e-6)
    assert np.all(err < 1e-6)


def test_cos_sum_tension(tm_torus, rng):
    s = models.torus_field(tm_torus, "cos-sum")
    x = rng.uniform(0, 2 * np.pi, (30, 2))
    _, vert, _ = sections.vertical_tension_batch(s, 0, x)
    np.testing.assert_allclose(vert[:, 1], -2 * np.cos(x.sum(1)), atol=1e-5)


@pytest.mark.parametrize("bundle", ["tm_torus", "tm_sphere"])
def test_zero_section_is_harmonic_and_parallel(bundle, request):
    E = request.getfixturevalue(bundle)
    s = models.zero_section(E)
    pts = [PointRef(E.base.charts[0].chart_id, x) for x in np.linspace(0.1, 0.9, 5)[:, None] * [1, -1]]
    for p in pts:
        assert sections.vertical_tension(s, p).vanishes(1e-12)
        assert sections.horizontal_tension(sections.EquivariantLift(s),
                                           PointRef(p.chart_id, np.r_[p.coords, 0.3])).norm < 1e-10
    assert sections.parallelism_check(s, pts) == 0.0


def test_constant_field_on_torus_is_parallel(tm_torus):
    s = models.constant_section(tm_torus, [1.0, -2.0])
    pts = [PointRef("angle", np.array([a, 2 * a])) for a in (0.1, 1.0, 4.0)]
    assert sections.parallelism_check(s, pts) < 1e-10
    assert sections.component_gradient(s, pts) == 0.0


def test_sin_field_parallelism_oracle(tm_torus):
    s = models.torus_field(tm_torus, "sin")
    pts = [PointRef("angle", np.array([a, 0.0])) for a in np.linspace(0, 2 * np.pi, 41)]
    assert abs(sections.parallelism_check(s, pts) - 1.0) < 1e-6


def test_horizontal_tension_matches_vertical_in_frame(tm_sphere, rng):
    s = models.height_gradient(tm_sphere, 0.5)
    lift = sections.EquivariantLift(s)
    for _ in range(10):
        x = rng.uniform(-0.8, 0.8, 2)
        phi = rng.uniform(-3, 3)
        p = PointRef("south", np.r_[x, phi])
        v = sections.vertical_tension(s, PointRef("south", x))
        h = sections.horizontal_tension(lift, p)
        np.testing.assert_allclose(h.vertical, sections.frame_components(s, p, v.vertical),
                                   atol=2e-5)


def test_martingale_tests_on_zero_and_sin(tm_torus):
    ens = simulate_brownian(tm_torus.base, PointRef("angle", np.ones(2)), 1.0, 1e-3, 500, 3)
    zero = models.zero_section(tm_torus)
    assert sections.vertical_martingale_test(zero, ensemble=ens).decision == MARTINGALE
    assert sections.horizontally_harmonic_test(zero, ensemble=ens).decision == MARTINGALE
    sin = models.torus_field(tm_torus, "sin")
    assert sections.vertical_martingale_test(sin, ensemble=ens).decision == "drift-detected"
    assert sections.horizontally_harmonic_test(sin, ensemble=ens).decision == "drift-detected"


def test_tension_oracle_for_sin(tm_torus):
    ens = simulate_brownian(tm_torus.base, PointRef("angle", np.array([np.pi / 2, 0])),
                            0.1, 1e-3, 200, 0)
    s = models.torus_field(tm_torus, "sin")
    pred, se = sections.tension_drift_oracle(s, ens)
    # E sin(x + B_t) = sin(x) e^{-t/2}, averaged over [0, 0.1]
    exact = -0.5 * (1 - np.exp(-0.05)) / 0.05
    assert abs(pred[0] - exact) < 4 * se[0] + 1e-6
    assert abs(pred[1]) < 1e-12


def test_paired_vertical_and_fiber_verdicts(tm_sphere):
    P = tm_sphere.principal
    ens = simulate_brownian(P.base, south(0.3, 0.0), 0.5, 1e-3, 300, 0)
    from bundlemart.bundles import horizontal_lift_path
    Y = horizontal_lift_path(P, ens)
    xi = np.broadcast_to([0.5, 0.5], Y.coords.shape[:2] + (2,)).copy()
    vert, fib = sections.prop31i_check(tm_sphere, Y, xi)
    assert vert.decision == fib.decision == MARTINGALE
    xi_drift = xi + Y.times[None, :, None]
    vert, fib = sections.prop31i_check(tm_sphere, Y, xi_drift)
    assert vert.decision == fib.decision == "drift-detected"
