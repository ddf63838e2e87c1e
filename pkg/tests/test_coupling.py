import math

import numpy as np
import pytest

from bundlemart import coupling, models
from bundlemart.geometry import PointRef
from bundlemart.manifolds import flat_space, torus

from conftest import south


def _binom_ok(p_hat, p, n, k=3.0):
    return abs(p_hat - p) <= k * math.sqrt(p * (1 - p) / n)


def _ambient(man, charts, x):
    out = np.empty(x.shape[:-1] + (man.dim + 1,))
    for c in np.unique(charts):
        out[charts == c] = man.embed(int(c), x[charts == c])
    return out


def test_same_start_couples_immediately(s2):
    x = south(0.2, 0.1)
    pair = coupling.couple_brownian(s2, x, x, 0.1, 1e-3, 20, 0, merge_rule="radius")
    assert np.all(pair.tau == 0)
    co = coupling.coalesce(pair)
    assert np.array_equal(co.Ybar.coords, co.X.coords)


def test_flat_reflection_cdf():
    R2 = flat_space(2)
    d0, n = 1.0, 4000
    pair = coupling.couple_brownian(R2, PointRef("cartesian", np.zeros(2)),
                                    PointRef("cartesian", np.array([d0, 0.0])), 1.0, 1e-3, n, 0)
    p_hat = float(np.mean(pair.tau <= 1.0))
    assert _binom_ok(p_hat, coupling.coupling_cdf_line(d0, 1.0), n)


def test_torus_reflection_cdf():
    T2 = torus(2)
    d0, n, dt = np.pi / 2, 4000, 1e-3
    pair = coupling.couple_brownian(T2, PointRef("angle", np.ones(2)),
                                    PointRef("angle", np.array([1 + d0, 1.0])), 1.0, dt, n, 0)
    p = coupling.coupling_cdf_circle(d0, 1.0, pair.merge_radius, dt)
    assert _binom_ok(float(np.mean(pair.tau <= 1.0)), p, n)


def test_cdf_limits():
    assert coupling.coupling_cdf_line(0.0, 1.0) == 1.0
    assert coupling.coupling_cdf_line(1.0, 1e-8) < 1e-12
    assert abs(coupling.coupling_cdf_circle(np.pi, 1e-2)) < 1e-9
    assert coupling.coupling_cdf_circle(np.pi, 50.0) > 1 - 1e-9


def test_coalesced_path_follows_rules(s2):
    pair = coupling.couple_brownian(s2, south(0.5, 0.0), south(-0.5, 0.0), 1.0, 1e-3, 200, 0)
    co = coupling.coalesce(pair)
    t = co.X.times
    for p in range(200):
        before = t < pair.tau[p]
        assert np.array_equal(co.Ybar.coords[p, before], pair.Y.coords[p, before])
        assert np.array_equal(co.Ybar.coords[p, ~before], pair.X.coords[p, ~before])
    assert 0 < pair.coupled_fraction < 1


def test_sphere_pair_stays_on_sphere(s2):
    pair = coupling.couple_brownian(s2, south(0.5, 0.0), PointRef("north", np.array([-0.5, 0.0])),
                                    0.5, 1e-3, 50, 1)
    for E in (pair.X, pair.Y):
        u = _ambient(s2, E.charts, E.coords)
        np.testing.assert_allclose(np.linalg.norm(u, axis=-1), 1.0, atol=1e-10)


def test_coalesced_marginal_is_brownian(s2):
    # the coalesced path started from y0 has the law of BM from y0
    y0 = south(-0.5, 0.0)
    pair = coupling.couple_brownian(s2, south(0.5, 0.0), y0, 1.0, 1e-3, 2000, 0)
    Ybar = coupling.coalesce(pair).Ybar
    u = _ambient(s2, pair.X.charts[:, -1], pair.X.coords[:, -1])
    ub = _ambient(s2, Ybar.charts[:, -1], Ybar.coords[:, -1])
    u0 = s2.embed(0, y0.coords)
    mean = float(np.mean(ub @ u0))
    se = float(np.std(ub @ u0, ddof=1) / np.sqrt(2000))
    assert abs(mean - np.exp(-1.0)) < 3 * se
    assert u.shape == ub.shape


@pytest.mark.parametrize("kind", ["torus", "flat"])
def test_synchronous_coupling_keeps_distance(kind):
    man = torus(2) if kind == "torus" else flat_space(2)
    c = man.charts[0].chart_id
    d = coupling.nonconfluence_flat_check(man, PointRef(c, np.ones(2)),
                                          PointRef(c, np.array([2.0, 0.5])), 0.5, 1e-3, 50)
    assert d < 1e-12


def test_synchronous_never_couples_on_flat():
    R2 = flat_space(2)
    pair = coupling.couple_brownian(R2, PointRef("cartesian", np.zeros(2)),
                                    PointRef("cartesian", np.array([1.0, 0.0])), 1.0, 1e-3, 100, 0,
                                    method="synchronous")
    assert pair.coupled_fraction == 0.0


def test_bad_method(s2):
    with pytest.raises(ValueError):
        coupling.couple_brownian(s2, south(0, 0), south(0.1, 0), 0.1, 1e-2, 2, 0, method="nope")


def test_zero_section_has_constant_lift():
    tm = models.tangent_bundle("sphere2", "sasaki")
    assert coupling.lift_dispersion(models.zero_section(tm)) == 0.0
    assert coupling.lift_dispersion(models.height_gradient(tm, 1.0)) > 0.1


def test_sample_points_cover_charts(s2):
    pts = coupling.sample_base_points(s2, 50, 0)
    assert {p.chart_id for p in pts} == {"south", "north"}
    assert all(np.linalg.norm(p.coords) <= 1 for p in pts)
    assert [p.coords.tolist() for p in pts] == \
        [p.coords.tolist() for p in coupling.sample_base_points(s2, 50, 0)]


def test_scan_report_on_torus():
    tm = models.tangent_bundle("torus2", "sasaki")
    fam = [models.zero_section(tm), models.torus_field(tm, "sin")]
    rep = coupling.liouville_experiment(tm, fam, n_paths=500, seed=2)
    assert rep.passing == ["zero"]
    assert rep.decision("sin") == "drift-detected"
    assert rep.entries[0]["lift_dispersion"] == 0.0
    with pytest.raises(KeyError):
        rep.decision("missing")
    assert set(rep.to_dict()) >= {"entries", "diagnostic", "seed", "n_paths"}


def test_coupled_lift_gap_is_frozen_after_coupling():
    P = models.frame_bundle("torus2")
    c = P.base.charts[0].chart_id
    out = coupling.coupled_lift_gap(P, PointRef(c, np.ones(2)), PointRef(c, np.array([2.0, 1.0])),
                                    0.0, 0.5, 1.0, 1e-3, 100, 0)
    assert out["coupled_fraction"] > 0
    assert out["fiber_gap_drift"] < 1e-10
