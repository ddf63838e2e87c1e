"""Acceptance suite: the fifteen primary criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated, in order, in the
pytest terminal summary.
"""
import math
import time

import numpy as np

from bundlemart import bundles, coupling, models, paths, runner, sections
from bundlemart.geometry import PointRef
from bundlemart.manifolds import flat_space, sphere
from bundlemart.paths import DRIFT, MARTINGALE

from conftest import report_criterion

SEED = 2024


def _check(number, passed, detail):
    report_criterion(number, bool(passed), detail)
    assert passed, detail


def _cos_colatitude(man, charts, x):
    u = np.empty(x.shape[:-1] + (3,))
    for c in np.unique(charts):
        u[charts == c] = man.embed(int(c), x[charts == c])
    return -u[..., 2]


# -- 1-4: Brownian motion and the Itô formula -----------------------------------------

def test_c01_flat_variance_and_runtime():
    t0 = time.perf_counter()
    ens = paths.simulate_brownian(flat_space(2), PointRef("cartesian", np.zeros(2)),
                                  1.0, 1e-3, 10_000, SEED)
    wall = time.perf_counter() - t0
    v = float(np.var(ens.coords[:, -1, 0], ddof=1))
    se = math.sqrt(2.0 / (10_000 - 1))
    _check(1, abs(v - 1) <= 3 * se and wall <= 60,
           f"Var(B1_1) = {v:.4f}, |Var-1| = {abs(v - 1):.4f} <= 3 SE = {3 * se:.4f}; "
           f"runtime {wall:.1f}s <= 60s")


def test_c02_sphere_trace_identity():
    S = sphere(2)
    ens = paths.simulate_brownian(S, sections.default_start(S), 1.0, 1e-3, 1000, SEED)
    q = float(np.mean(paths.quadratic_integral(S.metric, ens).terminal))
    _check(2, abs(q - 2) <= 0.05 * 2, f"mean quadratic integral {q:.4f} vs 2 (5% = 0.1)")


def test_c03_heat_eigen_decay():
    S = sphere(2)
    x0 = sections.default_start(S)
    ens = paths.simulate_brownian(S, x0, 1.0, 1e-3, 10_000, SEED)
    c0 = float(_cos_colatitude(S, np.array([0]), x0.coords[None])[0])
    ch, x = ens.terminal()
    m = float(np.mean(_cos_colatitude(S, ch, x)))
    exp = math.exp(-1) * c0
    _check(3, abs(m - exp) <= 0.05 * abs(exp),
           f"mean cos(colatitude) {m:.4f} vs e^-1 cos(theta0) = {exp:.4f} (5% = {0.05 * abs(exp):.4f})")


def test_c04_ito_residual_shrinks():
    S = sphere(2)
    coarse = runner.ito_residual_rms(S, 1e-2, 1.0, 1000, SEED)
    fine = runner.ito_residual_rms(S, 1e-3, 1.0, 1000, SEED)
    _check(4, coarse / fine >= 1.5,
           f"rms residual {coarse:.3e} (dt 1e-2) -> {fine:.3e} (dt 1e-3), ratio {coarse / fine:.2f} >= 1.5")


# -- 5-6: connection on the frame bundle of S² ----------------------------------------

def _omega_drift(dt):
    P = models.frame_bundle("sphere2")
    ens = paths.simulate_brownian(P.base, sections.default_start(P.base), 1.0, dt, 1000, SEED)
    oi = bundles.omega_integral(P, bundles.horizontal_lift_path(P, ens))
    return paths.drift_test(oi, 0.02, z=3.0)


def test_c05_horizontal_lift_omega_integral():
    a, b = _omega_drift(1e-2), _omega_drift(1e-3)
    ok = a.decision == b.decision == MARTINGALE and abs(b.drift_estimate) < abs(a.drift_estimate)
    _check(5, ok, f"decisions {a.decision}/{b.decision}; |drift| {abs(a.drift_estimate):.2e} "
                  f"(dt 1e-2) -> {abs(b.drift_estimate):.2e} (dt 1e-3)")


def _ambient(th, ph):
    return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), -np.cos(th)])


def test_c06_triangle_holonomy():
    tri = [_ambient(0.3, 0.0), _ambient(0.5, 2.0), _ambient(0.8, 4.0)]
    area = models.spherical_triangle_area(*tri)
    signed = -area * np.sign(np.dot(tri[0], np.cross(tri[1], tri[2])))
    hol = models.triangle_holonomy(tri, 1e-4)
    _check(6, abs(hol - signed) <= 1e-3,
           f"holonomy {hol:.6f} vs signed area {signed:.6f}, error {abs(hol - signed):.1e} <= 1e-3")


# -- 7-9: harmonic sections -------------------------------------------------------------

def _c07():
    tm_s = models.tangent_bundle("sphere2", "sasaki")
    zero = sections.vertical_martingale_test(models.zero_section(tm_s), n_paths=1000, seed=SEED,
                                             resolution=0.02)
    tm_t = models.tangent_bundle("torus2", "sasaki")
    sin = models.torus_field(tm_t, "sin")
    ens = paths.simulate_brownian(tm_t.base, sections.default_start(tm_t.base), 1.0, 1e-3,
                                  1000, SEED)
    rep = sections.vertical_martingale_test(sin, ensemble=ens, resolution=0.02)
    pred, pse = sections.tension_drift_oracle(sin, ens)
    return zero, rep, pred, pse


def test_c07_sasaki_zero_passes_torus_sin_fails():
    zero, rep, pred, pse = _c07()
    est = np.array([v.drift_estimate for v in rep.verdicts])
    se = np.array([v.std_error for v in rep.verdicts])
    width = 2 * 1.959963984540054 * np.sqrt(se ** 2 + pse ** 2)
    zero_ok = all(v.decision == MARTINGALE for v in zero.verdicts)
    match = bool(np.all(np.abs(est - pred) <= 2 * width))
    _check(7, zero_ok and rep.decision == DRIFT and match,
           f"zero section: {[v.decision for v in zero.verdicts]}; sin field: {rep.decision}, "
           f"drift {np.round(est, 4).tolist()} vs tension {np.round(pred, 4).tolist()}, "
           f"|diff| {np.round(np.abs(est - pred), 4).tolist()} <= 2 CI {np.round(2 * width, 4).tolist()}")


def test_c08_vertical_horizontal_equivalence():
    tm_t = models.tangent_bundle("torus2", "sasaki")
    tm_s = models.tangent_bundle("sphere2", "sasaki")
    family = [runner.make_section(tm_t, "constant"), runner.make_section(tm_t, "sin"),
              runner.make_section(tm_t, "cos-sum"), runner.make_section(tm_s, "zero"),
              runner.make_section(tm_s, "grad-height", 0.5)]
    lines, ok = [], True
    for s in family:
        ens = paths.simulate_brownian(s.bundle.base, sections.default_start(s.bundle.base), 1.0,
                                      1e-3, 1000, SEED)
        vert, hor, tens = runner.section_report(s, ens, 1e-3, 0.02, n_points=20, seed=SEED)
        agree = vert.decision == hor.decision
        ok &= agree and tens["covanish"]
        lines.append(f"{s.bundle.base.name}/{s.name}: {vert.decision}|{hor.decision}"
                     f"{'' if tens['covanish'] else ' tension mismatch'}")
    _check(8, ok, "; ".join(lines))


def _fiber_differential_gap(dt):
    tm = models.tangent_bundle("torus2", "sasaki")
    ens = paths.simulate_brownian(tm.base, sections.default_start(tm.base), 1.0, dt, 1000, SEED)
    Y = bundles.horizontal_lift_path(tm.principal, ens)
    x = ens.coords
    xi = np.stack([np.sin(x[..., 0]) + x[..., 1], np.cos(x[..., 1])], -1)
    gaps = []
    for a in range(tm.k):
        lhs, rhs = bundles.lemma32_check(tm, Y, xi, a)
        gaps.append(float(np.sqrt(np.mean((lhs.terminal - rhs.terminal) ** 2))))
    return max(gaps)


def test_c09_fiber_differential_gap_shrinks():
    a, b = _fiber_differential_gap(1e-2), _fiber_differential_gap(2.5e-3)
    _check(9, a / b >= 1.5, f"rms terminal gap {a:.3e} (dt 1e-2) -> {b:.3e} (dt 2.5e-3), "
                            f"ratio {a / b:.2f} >= 1.5")


# -- 10-11: Hopf fibers and coupling ------------------------------------------------------

def test_c10_hopf_fiber_distance():
    P = models.hopf_bundle()
    u = PointRef("south", np.array([0.3, -0.2, 0.0]))
    errs = {}
    for th in (0.1, 0.5, 1.0, 3.0):
        dp, dg = bundles.fiber_distance_check(P, u, P.group.identity(), P.group.exp(np.array([th])))
        errs[th] = abs(dp - dg)
    _check(10, max(errs.values()) <= 1e-3,
           "|d_P - d_G| " + ", ".join(f"theta={k:g}: {v:.1e}" for k, v in errs.items()) + " <= 1e-3")


def _c11():
    S = sphere(2)
    x0, y0 = runner.coupling_start(S)
    pair = coupling.couple_brownian(S, x0, y0, 1.0, 1e-3, 1000, SEED)
    items, qm, _ = runner.bm_battery(S, coupling.coalesce(pair).Ybar, 0.02)
    return pair, items, qm


def test_c11_coalesced_process_is_brownian():
    S = sphere(2)
    pair, items, qm = _c11()
    # reference: an uncoupled Brownian motion from the same start, same settings
    x0, y0 = runner.coupling_start(S)
    ref = paths.simulate_brownian(S, y0, 1.0, 1e-3, 1000, SEED + 1)
    ref_items, ref_q, _ = runner.bm_battery(S, ref, 0.02)
    # heat decay of <Ȳ_1, y0> = e^-1 within 3 standard errors
    Ybar = coupling.coalesce(pair).Ybar
    ch, x = Ybar.terminal()
    u = np.empty((len(ch), 3))
    for c in np.unique(ch):
        u[ch == c] = S.embed(int(c), x[ch == c])
    h = u @ S.embed(S.index(y0.chart_id), y0.coords)
    hm, hse = float(np.mean(h)), float(np.std(h, ddof=1) / np.sqrt(h.size))
    decisions = [v.decision for v in items]
    ok = (DRIFT not in decisions and abs(qm - 2) <= 0.1
          and abs(hm - math.exp(-1)) <= 3 * hse)
    _check(11, ok, f"coupled fraction {pair.coupled_fraction:.3f}; coordinate drift {decisions} "
                   f"(fresh BM: {[v.decision for v in ref_items]}); trace {qm:.4f} vs 2 "
                   f"(5% = 0.1, fresh BM {ref_q:.4f}); <Ybar_1, y0> {hm:.4f} vs e^-1 "
                   f"within 3 SE = {3 * hse:.4f}")


# -- 12-14: Liouville scans and TM lifts ---------------------------------------------------

def test_c12_sasaki_scan():
    t0 = time.perf_counter()
    rep = models.sasaki_experiment("sphere2", models.SASAKI_SCALES, budget=1000, seed=SEED)
    wall = time.perf_counter() - t0
    zero = rep.entries[models.SASAKI_SCALES.index(0.0)]["name"]
    _check(12, rep.passing == [zero] and wall <= 600,
           f"passing {rep.passing}; decisions "
           f"{[e['decision'] for e in rep.entries]}; runtime {wall:.0f}s <= 600s")


def test_c13_hopf_scan():
    rep = models.hopf_experiment(1, models.HOPF_NORMS, budget=1000, seed=SEED)
    zero = rep.entries[0]["name"]
    fixed = models.fixed_points(1j, 1)
    ok = rep.passing == [zero] and fixed.shape[1] == 0 and rep.meta["fixed_space_dim_g_i"] == 0
    _check(13, ok, f"passing {rep.passing} of {[e['name'] for e in rep.entries]}; "
                   f"fixed space of g=i has dimension {fixed.shape[1]}")


def test_c14_constancy_agreement():
    lines, ok = [], True
    zs = np.random.default_rng(SEED).uniform(-3, 3, (50, 4))
    tables = []
    for kind in ("complete_lift", "horizontal_lift"):
        tm = models.tangent_bundle("torus2", kind)
        tables.append(tm.total.christoffel(0, zs))
        ens = paths.simulate_brownian(tm.base, sections.default_start(tm.base), 1.0, 1e-3,
                                      1000, SEED)
        fam = [models.zero_section(tm), models.constant_section(tm, [1.0, -0.5]),
               models.torus_field(tm, "sin"), models.torus_field(tm, "cos-sum")]
        for s in fam:
            r = models.prop51_test(tm, s, ensemble=ens, seed=SEED)
            ok &= r.agree
            lines.append(f"{kind}/{s.name}: {r.martingale.decision}, constant={r.constant}")
    equal = bool(np.array_equal(tables[0], tables[1]))
    _check(14, ok and equal, "; ".join(lines) + f"; tables equal: {equal}")


# -- 15: reproducibility -------------------------------------------------------------------

def test_c15_reproducibility(tmp_path):
    def decisions():
        zero, rep, pred, _ = _c07()
        pair, items, qm = _c11()
        out = [[v.to_dict() for v in zero.verdicts], [v.to_dict() for v in rep.verdicts],
               pred.tolist(), pair.tau.tolist(), [v.to_dict() for v in items], qm,
               _omega_drift(1e-2).to_dict()]
        return out

    same = decisions() == decisions()
    configs = [dict(experiment="bm-check", model="sphere2"),
               dict(experiment="section-test", model="tm-torus2-sasaki"),
               dict(experiment="prop51", model="tm-torus2-complete"),
               dict(experiment="coupling", model="torus2")]
    for i, c in enumerate(configs):
        reps = [runner.run(runner.ExperimentConfig(**c, n_paths=300, seed=SEED,
                                                   output_dir=str(tmp_path / f"{i}-{k}")))
                for k in range(2)]
        a, b = (r.to_dict() for r in reps)
        same &= a["verdicts"] == b["verdicts"] and a["oracles"] == b["oracles"]
    _check(15, same, "criterion 7 and 11 computations and four CLI configs rerun with the "
                     f"same seed: identical verdicts = {same}")
