import numpy as np
import pytest

from bundlemart import bundles, models, paths
from bundlemart.errors import FiberMismatchError, HorizontalityError
from bundlemart.geometry import PointRef

from conftest import south


@pytest.fixture(scope="module")
def frames():
    return models.frame_bundle("sphere2")


@pytest.fixture(scope="module")
def hopf():
    return models.hopf_bundle()


def _points(P, rng, n=100):
    out = []
    for _ in range(n):
        c = P.base.chart_id(int(rng.integers(len(P.base.charts))))
        x = rng.uniform(-1, 1, P.base.dim)
        out.append(PointRef(c, np.append(x, rng.uniform(-np.pi, np.pi))))
    return out


@pytest.mark.parametrize("name", ["frames-sphere2", "frames-torus2", "hopf"])
def test_connection_form_reproduces_generators(name, rng):
    P = models.load_model(name)
    for p in _points(P, rng):
        a = rng.normal()
        assert abs(P.connection_form(p, P.fundamental_field(p, a))[0] - a) < 1e-8
        g = P.group.exp(np.array([rng.uniform(-3, 3)]))
        # abelian group: R_g^* ω = ω, the coefficients do not depend on the fiber angle
        q = P.right_action(p, g)
        v = rng.normal(size=P.total.dim)
        assert abs(P.connection_form(q, v)[0] - P.connection_form(p, v)[0]) < 1e-8
        assert np.array_equal(P.project(q).coords, P.project(p).coords)


@pytest.mark.parametrize("name", ["frames-sphere2", "frames-torus2", "hopf"])
def test_horizontal_lift_vector(name, rng):
    P = models.load_model(name)
    for p in _points(P, rng):
        v = rng.normal(size=P.base.dim)
        h = bundles.horizontal_lift_vector(P, p, v)
        assert abs(P.connection_form(p, h)[0]) < 1e-10
        np.testing.assert_allclose(P.push_down(h).components, v, atol=1e-10)
        # isometric onto the horizontal space
        c = P.base.index(p.chart_id)
        gv = v @ P.base.metric(c, p.coords[:-1]) @ v
        assert abs(bundles.kaluza_klein_eval(P, p, h, h) - gv) < 1e-10 * max(1, gv)
    zero = bundles.horizontal_lift_vector(P, p, np.zeros(P.base.dim))
    assert np.all(zero.components == 0)


def test_kaluza_klein_orthogonality_and_fibers(hopf, rng):
    kk = bundles.KaluzaKleinMetric(hopf)
    for p in _points(hopf, rng, 20):
        h = bundles.horizontal_lift_vector(hopf, p, rng.normal(size=2))
        A = hopf.fundamental_field(p, 1.0)
        assert abs(kk(p, h, A)) < 1e-10
        assert abs(kk(p, A, A) - 1.0) < 1e-12


def test_hopf_lift_matches_ambient_horizontal_space(hopf):
    # horizontal vectors at u are orthogonal to the fiber direction i·u in ℝ⁴
    p = PointRef("south", np.array([0.4, 0.0, 0.3]))
    v = np.array([0.0, 1.0])
    h = bundles.horizontal_lift_vector(hopf, p, v)
    eps = 1e-6
    u0 = hopf.ambient_point(p)
    u1 = hopf.ambient_point(PointRef("south", p.coords + eps * h.components))
    du = (u1 - u0) / eps
    iu = np.array([-u0[1], u0[0], -u0[3], u0[2]])
    assert abs(du @ iu) < 1e-5
    assert abs(np.linalg.norm(u0) - 1) < 1e-12


def test_hopf_map_projects_ambient_points(hopf, rng):
    base = hopf.base
    for p in _points(hopf, rng, 20):
        u = hopf.ambient_point(p)
        c = base.index(p.chart_id)
        np.testing.assert_allclose(models.hopf_map(u), base.embed(c, p.coords[:-1]), atol=1e-12)


def test_hopf_is_riemannian_submersion(hopf, rng):
    for p in _points(hopf, rng, 30):
        v = rng.normal(size=2)
        h = bundles.horizontal_lift_vector(hopf, p, v)
        c = hopf.base.index(p.chart_id)
        eps = 1e-6
        du = (hopf.ambient_point(PointRef(p.chart_id, p.coords + eps * h.components))
              - hopf.ambient_point(PointRef(p.chart_id, p.coords - eps * h.components))) / (2 * eps)
        assert abs(du @ du - v @ hopf.base.metric(c, p.coords[:-1]) @ v) < 1e-8 * (1 + v @ v)


def test_constant_base_path_has_constant_lift(frames):
    x = np.repeat([[0.3, 0.1]], 6, 0)
    path = bundles.SamplePath(frames.base, np.arange(6.0), x, np.zeros(6))
    lifted = bundles.horizontal_lift_path(frames, path, 0.7)
    assert np.all(lifted.coords[:, -1] == 0.7)


def test_lift_projects_exactly_and_survives_chart_changes(frames):
    ens = paths.simulate_brownian(frames.base, south(0.9, 0.0), 2.0, 1e-2, 50, 0)
    lifted = bundles.horizontal_lift_path(frames, ens)
    assert np.array_equal(lifted.coords[..., :-1], ens.coords)
    assert np.any(ens.charts != 0)
    res = bundles.omega_integral(frames, lifted)
    assert np.max(np.abs(res.values)) < 0.05


def test_frames_stay_orthonormal_along_lift(frames):
    ens = paths.simulate_brownian(frames.base, south(0.3, 0.0), 0.5, 1e-3, 5, 0)
    lifted = bundles.horizontal_lift_path(frames, ens)
    for p in range(5):
        for k in range(0, len(ens.times), 50):
            pt = PointRef(frames.base.chart_id(lifted.charts[p, k]), lifted.coords[p, k])
            u = frames.frame_at(pt)
            c = lifted.charts[p, k]
            gram = u.T @ frames.base.metric(c, pt.coords[:-1]) @ u
            np.testing.assert_allclose(gram, np.eye(2), atol=1e-10)


@pytest.mark.parametrize("theta", [0.5])
def test_hopf_fiber_distance(hopf, theta):
    u = PointRef("south", np.array([0.3, -0.2, 0.0]))
    dp, dg = bundles.fiber_distance_check(hopf, u, hopf.group.identity(),
                                          hopf.group.exp(np.array([theta])))
    assert abs(dg - theta) < 1e-12
    assert abs(dp - dg) < 1e-3


def test_fiber_distance_equal_elements(hopf):
    u = PointRef("south", np.array([0.3, -0.2, 0.0]))
    g = hopf.group.exp(np.array([0.4]))
    assert bundles.fiber_distance_check(hopf, u, g, g) == (0.0, 0.0)


def test_trivial_bundle_fiber_distance():
    P = models.trivial_bundle("torus2").principal
    u = PointRef("angle", np.array([1.0, 1.0, 0.0]))
    dp, dg = bundles.fiber_distance_check(P, u, P.group.identity(), P.group.exp(np.array([1.3])))
    assert abs(dp - dg) < 1e-6


def test_fiber_curve_length(hopf):
    t = np.linspace(0, 1, 201)
    p = PointRef("south", np.array([0.5, 0.5, 0.0]))
    k_len, h_len = bundles.fiber_curve_lengths(hopf, p, lambda s: 2 * np.sin(s), t)
    assert abs(k_len - h_len) < 1e-6
    assert abs(h_len - 2 * np.sin(1.0)) < 1e-6


def test_lifted_curve_length_inequality(hopf, rng):
    t = np.linspace(0, 1, 401)
    for _ in range(50):
        a, b = rng.uniform(-0.5, 0.5, 2), rng.uniform(-0.5, 0.5, 2)
        curve = a + np.outer(t, b) + 0.2 * np.outer(np.sin(3 * t), rng.normal(size=2))
        w = rng.normal()
        tau, gam, mu = bundles.lifted_curve_lengths(hopf, "south", curve,
                                                    lambda s: w * s ** 2, t)
        assert tau <= gam + mu + 1e-9


@pytest.fixture(scope="module")
def tm():
    return models.tangent_bundle("sphere2", "sasaki")


def test_mu_invariance_and_decompose(tm, rng):
    P = tm.principal
    for p in _points(P, rng, 100):
        xi = rng.normal(size=2)
        g = P.group.exp(np.array([rng.uniform(-3, 3)]))
        e = tm.mu(p, xi)
        ginv_xi = bundles.block_rotation(-P.group.angle(g), 2) @ xi
        np.testing.assert_allclose(tm.mu(P.right_action(p, g), ginv_xi).coords, e.coords,
                                   atol=1e-10)
        np.testing.assert_allclose(bundles.mu_decompose(tm, e, p), xi, atol=1e-10)


def test_mu_decompose_frame_components(tm):
    p = PointRef("south", np.array([0.2, 0.4, 0.9]))
    V = np.array([1.0, -2.0])
    e = PointRef("south", np.concatenate([p.coords[:2], V]))
    u = tm.principal.frame_at(p)
    np.testing.assert_allclose(bundles.mu_decompose(tm, e, p), np.linalg.solve(u, V), atol=1e-12)


def test_mu_decompose_fiber_mismatch(tm):
    p = PointRef("south", np.array([0.2, 0.4, 0.0]))
    e = PointRef("south", np.array([0.3, 0.4, 1.0, 1.0]))
    with pytest.raises(FiberMismatchError):
        bundles.mu_decompose(tm, e, p)


def test_projectors(tm, rng):
    for _ in range(20):
        z = np.concatenate([rng.uniform(-1, 1, 2), rng.normal(size=2)])
        v = tm.vertical_projector(0, z)
        np.testing.assert_allclose(v @ v, v, atol=1e-12)
        # horizontal image of a base vector: (w, K w ν) is annihilated by v
        w = rng.normal(size=2)
        hvec = np.concatenate([w, tm.mixing(0, z) @ w])
        assert np.max(np.abs(v @ hvec)) < 1e-8


def test_fibers_totally_geodesic(tm):
    from bundlemart.geometry import integrate_geodesic
    z0 = np.array([0.3, -0.2, 0.5, 0.1])
    v0 = np.array([0.0, 0.0, 1.0, 0.5])
    _, z, _ = integrate_geodesic(tm.total, [0], z0[None], v0[None], 1.0, 200)
    np.testing.assert_allclose(z[0, :2], z0[:2], atol=1e-8)


def test_fiber_differential_trivial_cases(tm):
    P = tm.principal
    ens = paths.simulate_brownian(P.base, south(0.3, 0.0), 0.2, 1e-2, 20, 0)
    Y = bundles.horizontal_lift_path(P, ens)
    xi = np.broadcast_to([0.5, -0.3], Y.coords.shape[:2] + (2,)).copy()
    lhs, rhs = bundles.lemma32_check(tm, Y, xi, 0)
    assert np.max(np.abs(np.diff(lhs.values, axis=-1))) < 1e-2
    assert np.all(rhs.values == 0)


def test_fiber_differential_rejects_non_horizontal(tm):
    P = tm.principal
    ens = paths.simulate_brownian(P.base, south(0.3, 0.0), 0.2, 1e-2, 5, 0)
    Y = bundles.horizontal_lift_path(P, ens)
    Y.coords[..., -1] += np.linspace(0, 1, len(Y.times))
    with pytest.raises(HorizontalityError):
        bundles.lemma32_check(tm, Y, np.zeros(Y.coords.shape[:2] + (2,)), 0,
                              horizontality_tol=1e-3)


def test_triangle_holonomy_reproduces_area():
    def v(th, ph):
        return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), -np.cos(th)])
    tri = [v(1.2, 0.1), v(1.0, 1.5), v(0.2, 3.0)]
    area = models.spherical_triangle_area(*tri)
    orient = np.sign(np.dot(tri[0], np.cross(tri[1], tri[2])))
    assert abs(models.triangle_holonomy(tri, 1e-4) + orient * area) < 1e-3
    assert abs(models.triangle_holonomy(tri[::-1], 1e-4) - orient * area) < 1e-3


def test_octant_area_oracle():
    e = np.eye(3)
    assert abs(models.spherical_triangle_area(e[0], e[1], -e[2]) - np.pi / 2) < 1e-12


def test_generic_frame_connection_matches_closed_form(rng):
    closed = models.frame_bundle("sphere2")
    generic = models.frame_bundle("sphere2", generic=True)
    for c in (0, 1):
        x = rng.uniform(-1, 1, (10, 2))
        np.testing.assert_allclose(generic.omega(c, x), closed.omega(c, x), atol=1e-7)
