"""Couplings of Brownian motions and coalesced paths.

Supported bases: flat tori and the circle (reflection in the wrapped
displacement, compiled kernel), Euclidean space, and round spheres of any
dimension (ambient mirror coupling through the bisecting hyperplane).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bundles import PrincipalBundleModel, horizontal_lift_path
from .geometry import ChartedManifold, PointRef, transition_point
from .manifolds import TWO_PI, wrapped_difference
from .paths import (MARTINGALE, _n_steps, gaussian_increments, map_blocks, simulate_brownian,
                    uniform_draws)
from .sections import EquivariantLift, SectionModel, default_start, vertical_martingale_test
from .trajectory import PathEnsemble

METHODS = ("reflection", "synchronous", "independent")
BG_SHIFT = 0.5826  # discrete-monitoring barrier shift, in units of σ√dt


def default_merge_radius(dim: int, dt: float) -> float:
    return 2.0 * math.sqrt(dim * dt)


@dataclass
class CoupledPair:
    X: PathEnsemble
    Y: PathEnsemble
    tau: np.ndarray  # coupling time per path, inf if not coupled
    method: str
    merge_radius: float
    meta: dict = field(default_factory=dict)

    @property
    def coupled_fraction(self) -> float:
        return float(np.mean(np.isfinite(self.tau)))

    def distances(self) -> np.ndarray:
        """Geodesic distance between X and Y at each node."""
        return _pair_distance(self.X.manifold, self.X, self.Y)


@dataclass
class CoalescedPath:
    """``Ȳ`` follows ``Y`` before the coupling time and ``X`` afterwards."""

    X: PathEnsemble
    Ybar: PathEnsemble
    tau: np.ndarray


def _kind(man: ChartedManifold) -> str:
    if man.name.startswith("torus") or man.name == "circle":
        return "torus"
    if man.name.startswith("flat"):
        return "flat"
    if man.name.startswith("sphere"):
        return "sphere"
    raise ValueError(f"no coupling implemented for {man.name}")


def _pair_distance(man, X, Y):
    kind = _kind(man)
    if kind == "torus":
        return np.linalg.norm(wrapped_difference(Y.coords - X.coords), axis=-1)
    if kind == "flat":
        return np.linalg.norm(Y.coords - X.coords, axis=-1)
    a, b = _to_ambient(man, X.charts, X.coords), _to_ambient(man, Y.charts, Y.coords)
    R = man.params["radius"]
    return 2 * R * np.arctan2(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1))


# -- sphere helpers -------------------------------------------------------------------

def _to_ambient(man, charts, x):
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    last = np.where(charts[..., None] == 0, r2 - 1.0, 1.0 - r2)
    return np.concatenate([2.0 * x, last], axis=-1) / (1.0 + r2)


def _from_ambient(u):
    """Unit ambient points to (chart, coords), south chart on the lower hemisphere."""
    south = u[..., -1] <= 0
    denom = np.where(south, 1.0 - u[..., -1], 1.0 + u[..., -1])
    return np.where(south, 0, 1).astype(np.int64), u[..., :-1] / denom[..., None]


def _tangent(u, w):
    return w - np.sum(w * u, axis=-1, keepdims=True) * u


def _bridge_hit(s0, s1, var, dt, unif):
    """Crossing of zero between grid values ``s0 > 0`` and ``s1`` of a diffusion
    with variance rate ``var``: sign change, or a Brownian-bridge excursion."""
    with np.errstate(over="ignore", divide="ignore"):
        p = np.exp(-2.0 * s0 * np.maximum(s1, 0.0) / (var * dt))
    return (s1 <= 0.0) | (unif < p)


def _sphere_block(u0, v0, dW, dWy, method, r_merge, stride, radius, crossing=None, dt=0.0):
    P, n, D = dW.shape
    n0 = (u0 - v0) / max(np.linalg.norm(u0 - v0), 1e-300)
    m = n // stride + 1
    us, vs = np.empty((P, m, D)), np.empty((P, m, D))
    tau = np.full(P, -1, dtype=np.int64)
    u = np.repeat(u0[None], P, 0)
    v = np.repeat(v0[None], P, 0)

    def dist(a, b):
        return radius * 2 * np.arctan2(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1))

    merged = dist(u, v) <= r_merge
    tau[merged] = 0
    v[merged] = u[merged]
    us[:, 0], vs[:, 0] = u, v
    s1 = u @ n0
    for k in range(n):
        wx = _tangent(u, dW[:, k] / radius)
        if method == "independent":
            wy = _tangent(v, dWy[:, k] / radius)
        else:
            diff = u - v
            nrm = np.linalg.norm(diff, axis=-1, keepdims=True)
            nvec = diff / np.where(nrm > 0, nrm, 1.0)
            mirror = wx - 2 * np.sum(wx * nvec, axis=-1, keepdims=True) * nvec
            if method == "reflection":
                wy = mirror
            else:
                # parallel transport along the minimising great circle
                c = np.sum(u * v, axis=-1, keepdims=True)
                ok = c > -1 + 1e-12
                trans = wx - np.sum(v * wx, axis=-1, keepdims=True) / np.where(ok, 1 + c, 1.0) * (u + v)
                wy = np.where(ok, trans, mirror)  # cut locus: any isometry, fixed choice
        wy = np.where(merged[:, None], wx, wy)
        u = u + wx
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        v = v + wy
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        if crossing is not None:
            s0 = s1
            s1 = u @ n0
            var = np.maximum(1.0 - s0 ** 2, 1e-12) / radius ** 2
            new = ~merged & _bridge_hit(s0, s1, var, dt, crossing[:, k])
        else:
            new = ~merged & (dist(u, v) <= r_merge)
        tau[new] = k + 1
        merged |= new
        v[merged] = u[merged]
        if (k + 1) % stride == 0:
            us[:, (k + 1) // stride], vs[:, (k + 1) // stride] = u, v
    return us, vs, tau


def _glue_independent(xs, ys, r_merge, wrap):
    """Merge independent paths at their first meeting (used only for diagnostics)."""
    delta = ys - xs
    if wrap:
        delta = wrapped_difference(delta)
    hit = np.linalg.norm(delta, axis=-1) <= r_merge
    P, m = hit.shape
    tau = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
    for p in np.flatnonzero(tau >= 0):
        k = tau[p]
        ys[p, k:] = xs[p, k:] + (ys[p, k] - xs[p, k] - delta[p, k])
    return ys, tau


def couple_brownian(manifold: ChartedManifold, x0: PointRef, y0: PointRef, horizon: float,
                    dt: float, n_paths: int, seed: int, method: str = "reflection",
                    merge_radius: float | None = None, store_every: int = 1,
                    threads: int | None = None, merge_rule: str | None = None) -> CoupledPair:
    """Coupled Brownian motions from ``x0`` and ``y0``.

    ``reflection`` mirrors the driving noise of X in the hyperplane orthogonal
    to the displacement; ``synchronous`` transports it; ``independent`` uses an
    independent stream.  After coupling Y is glued to X.

    ``merge_rule='radius'`` couples at the first grid time with distance at
    most ``merge_radius`` (default ``2√(dim·dt)``).  ``merge_rule='crossing'``
    (default for reflection on spheres and Euclidean space) couples in the
    first step during which X crossed the mirror hyperplane, where Y is the
    mirror image of X.  Crossings are detected from the sign of the distance
    to the mirror and, between grid points, by a Brownian-bridge draw, so
    gluing does not bias the law of Ȳ.
    """
    if method not in METHODS:
        raise ValueError(f"unknown coupling method {method!r}; choose from {METHODS}")
    kind = _kind(manifold)
    if merge_rule is None:
        merge_rule = "crossing" if method == "reflection" and kind != "torus" else "radius"
    if merge_rule not in ("radius", "crossing"):
        raise ValueError(f"unknown merge rule {merge_rule!r}")
    if merge_rule == "crossing" and (method != "reflection" or kind == "torus"):
        raise ValueError("the crossing rule needs reflection coupling on a sphere or Euclidean space")
    crossing = merge_rule == "crossing"
    n = _n_steps(horizon, dt)
    if n % store_every:
        raise ValueError("store_every must divide the number of steps")
    d = manifold.dim
    r = default_merge_radius(d, dt) if merge_radius is None else float(merge_radius)
    times = np.arange(0, n + 1, store_every) * dt

    if kind in ("torus", "flat"):
        c_run = 0
        xa = transition_point(manifold, x0, manifold.chart_id(0)).coords
        ya = transition_point(manifold, y0, manifold.chart_id(0)).coords
        if kind == "torus":
            ya = xa + wrapped_difference(ya - xa)  # nearest lift in the covering chart

        def run(a, b):
            dW = gaussian_increments(seed, a, b, n, d, dt)
            X0, Y0 = np.repeat(xa[None], b - a, 0), np.repeat(ya[None], b - a, 0)
            if method == "independent":
                dWy = gaussian_increments(seed, a, b, n, d, dt, stream=1)
                xs = kernels.flat_walk(X0, dW, store_every)
                ys = kernels.flat_walk(Y0, dWy, store_every)
                ys, tau = _glue_independent(xs, ys, r, kind == "torus")
                return xs, ys, np.where(tau >= 0, tau * store_every, -1)
            if kind == "flat":
                unif = uniform_draws(seed, a, b, n, stream=2) if crossing else None
                return _flat_couple(X0, Y0, dW, method == "reflection", r, store_every, unif, dt)
            return kernels.torus_couple(X0, Y0, dW, int(method == "reflection"), r, store_every)

        parts = map_blocks(run, n_paths, threads)
        xs = np.concatenate([p[0] for p in parts])
        ys = np.concatenate([p[1] for p in parts])
        tau_i = np.concatenate([p[2] for p in parts])
        charts = np.full(xs.shape[:2], c_run, dtype=np.int64)
        X = PathEnsemble(manifold, times, xs, charts, seed, dt, f"coupled-x/{method}")
        Y = PathEnsemble(manifold, times, ys, charts.copy(), seed, dt, f"coupled-y/{method}")
    else:
        R = manifold.params["radius"]
        u0 = manifold.embed(x0.chart_id, x0.coords) / R
        v0 = manifold.embed(y0.chart_id, y0.coords) / R
        D = d + 1

        def run(a, b):
            dW = gaussian_increments(seed, a, b, n, D, dt)
            dWy = gaussian_increments(seed, a, b, n, D, dt, stream=1) if method == "independent" else None
            unif = uniform_draws(seed, a, b, n, stream=2) if crossing else None
            return _sphere_block(u0, v0, dW, dWy, method, r, store_every, R, unif, dt)

        parts = map_blocks(run, n_paths, threads)
        us = np.concatenate([p[0] for p in parts])
        vs = np.concatenate([p[1] for p in parts])
        tau_i = np.concatenate([p[2] for p in parts])
        cx, xs = _from_ambient(us)
        cy, ys = _from_ambient(vs)
        X = PathEnsemble(manifold, times, xs, cx, seed, dt, f"coupled-x/{method}")
        Y = PathEnsemble(manifold, times, ys, cy, seed, dt, f"coupled-y/{method}")
    tau = np.where(tau_i >= 0, tau_i * dt, np.inf)
    return CoupledPair(X, Y, tau, method, r, {"n_steps": n, "store_every": store_every,
                                              "merge_rule": merge_rule})


def _flat_couple(x, y, dW, reflect, r, stride, crossing=None, dt=0.0):
    P, n, d = dW.shape
    mid = 0.5 * (x[0] + y[0])
    n0 = (x[0] - y[0]) / max(np.linalg.norm(x[0] - y[0]), 1e-300)
    m = n // stride + 1
    xs, ys = np.empty((P, m, d)), np.empty((P, m, d))
    tau = np.full(P, -1, dtype=np.int64)
    x, y = x.copy(), y.copy()
    merged = np.linalg.norm(y - x, axis=-1) <= r
    tau[merged] = 0
    y[merged] = x[merged]
    xs[:, 0], ys[:, 0] = x, y
    s1 = (x - mid) @ n0
    for k in range(n):
        w = dW[:, k]
        if reflect:
            e = y - x
            e /= np.maximum(np.linalg.norm(e, axis=-1, keepdims=True), 1e-300)
            wy = np.where(merged[:, None], w, w - 2 * np.sum(w * e, -1, keepdims=True) * e)
        else:
            wy = w
        x, y = x + w, y + wy
        if crossing is not None:
            s0 = s1
            s1 = (x - mid) @ n0
            new = ~merged & _bridge_hit(s0, s1, 1.0, dt, crossing[:, k])
        else:
            new = ~merged & (np.linalg.norm(y - x, axis=-1) <= r)
        tau[new] = k + 1
        merged |= new
        y[merged] = x[merged]
        if (k + 1) % stride == 0:
            xs[:, (k + 1) // stride], ys[:, (k + 1) // stride] = x, y
    return xs, ys, tau


def coalesce(pair: CoupledPair) -> CoalescedPath:
    """``Ȳ_t = Y_t`` for ``t < τ`` and ``X_t`` afterwards.

    On tori Y is already glued to X in the covering chart (same point,
    continuous coordinates) and is returned unchanged.
    """
    X, Y = pair.X, pair.Y
    if _kind(X.manifold) == "torus":
        return CoalescedPath(X, Y, pair.tau)
    after = X.times[None, :] >= pair.tau[:, None]
    coords = np.where(after[..., None], X.coords, Y.coords)
    charts = np.where(after, X.charts, Y.charts)
    Ybar = PathEnsemble(Y.manifold, Y.times, coords, charts, Y.seed, Y.dt, "coalesced")
    return CoalescedPath(X, Ybar, pair.tau)


# -- oracles -----------------------------------------------------------------------------

def _phi(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _shift(merge_radius, dt):
    return merge_radius - BG_SHIFT * 2.0 * math.sqrt(dt)


def coupling_cdf_line(d0: float, t: float, merge_radius: float = 0.0, dt: float = 0.0) -> float:
    """``P(τ ≤ t)`` for reflection coupling in Euclidean space.

    The distance is ``d0 − 2β_t``; with merging at ``merge_radius`` and
    monitoring on a grid of step ``dt`` the barrier moves to
    ``merge_radius − 0.5826·2√dt``.
    """
    d_eff = d0 - _shift(merge_radius, dt)
    if d_eff <= 0:
        return 1.0
    return 2.0 * _phi(-d_eff / (2.0 * math.sqrt(t)))


def coupling_cdf_circle(d0: float, t: float, merge_radius: float = 0.0, dt: float = 0.0,
                        terms: int = 400) -> float:
    """``P(τ ≤ t)`` for reflection coupling along one axis of a flat torus.

    The unwrapped displacement is ``d0 − 2β_t`` and coupling happens when it
    leaves ``(s, 2π − s)`` with ``s`` the shifted barrier; eigenfunction series.
    """
    s = _shift(merge_radius, dt)
    lo, hi = s, TWO_PI - s
    ell = hi - lo
    a = d0 - lo
    if a <= 0 or a >= ell:
        return 1.0
    surv = 0.0
    for k in range(1, 2 * terms, 2):
        surv += 4.0 / (k * math.pi) * math.sin(k * math.pi * a / ell) * math.exp(
            -2.0 * (k * math.pi / ell) ** 2 * t)
    return 1.0 - surv


def nonconfluence_flat_check(manifold: ChartedManifold, x0: PointRef, y0: PointRef,
                             horizon: float = 1.0, dt: float = 1e-3, n_paths: int = 100,
                             seed: int = 0) -> float:
    """Largest change of the distance under synchronous coupling on a flat base.

    Brownian motions driven by the same noise on a flat manifold keep their
    distance; the returned value should be at rounding level.
    """
    pair = couple_brownian(manifold, x0, y0, horizon, dt, n_paths, seed, "synchronous",
                           merge_radius=0.0)
    dist = pair.distances()
    return float(np.max(np.abs(dist - dist[:, :1])))


def sample_base_points(base: ChartedManifold, n: int, seed: int = 0) -> list[PointRef]:
    """Random points covering the base: unit disks of both stereographic charts
    on spheres, the fundamental square on tori, the unit cube elsewhere."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0, 7)))
    kind = _kind(base)
    d = base.dim
    out = []
    for _ in range(n):
        if kind == "torus":
            out.append(PointRef(base.charts[0].chart_id, rng.uniform(0.0, TWO_PI, d)))
        elif kind == "sphere":
            v = rng.standard_normal(d)
            v *= rng.random() ** (1.0 / d) / np.linalg.norm(v)
            out.append(PointRef(base.charts[int(rng.integers(2))].chart_id, v))
        else:
            out.append(PointRef(base.charts[0].chart_id, rng.uniform(-1.0, 1.0, d)))
    return out


def lift_dispersion(section: SectionModel, n_points: int = 100, seed: int = 0) -> float:
    """Largest distance of ``F_σ`` from its sample mean over random P-points."""
    P = section.bundle.principal
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0, 8)))
    lift = EquivariantLift(section)
    vals = []
    for p in sample_base_points(P.base, n_points, seed):
        c = P.base.index(p.chart_id)
        z = np.concatenate([p.coords, [rng.uniform(-np.pi, np.pi)]])
        vals.append(lift(c, z))
    vals = np.asarray(vals)
    return float(np.max(np.linalg.norm(vals - vals.mean(0), axis=-1)))


def coupled_lift_gap(bundle: PrincipalBundleModel, x0: PointRef, y0: PointRef,
                     phi_x: float = 0.0, phi_y: float = 0.0, horizon: float = 1.0,
                     dt: float = 1e-3, n_paths: int = 200, seed: int = 0,
                     method: str = "reflection") -> dict:
    """Horizontal lifts of a coupled pair ``X`` and ``Ȳ``, compared in the fiber.

    Once the base paths meet, both lifts sit over the same base point and
    their separation is the fiber angle gap (a circle distance under the
    Kaluza-Klein metric).  Reports the coupled fraction, the mean gap over
    time among coupled pairs, and the largest change of the gap after the
    coupling time.  The gap is generally nonzero when the connection has
    holonomy; this is a diagnostic, not a pass/fail check.
    """
    pair = couple_brownian(bundle.base, x0, y0, horizon, dt, n_paths, seed, method)
    co = coalesce(pair)
    hx = horizontal_lift_path(bundle, co.X, phi_x)
    hy = horizontal_lift_path(bundle, co.Ybar, phi_y)
    # fiber angles in a common chart: move the lift of Ȳ into the chart of X where they differ
    zy = hy.coords.copy()
    moved = hy.charts != hx.charts
    if np.any(moved):
        zy[moved] = bundle.total.transition_batch(hy.charts[moved], hx.charts[moved], zy[moved])
    gap = wrapped_difference(zy[..., -1] - hx.coords[..., -1])
    times = co.X.times
    met = np.isfinite(co.tau)
    after = met[:, None] & (times[None, :] >= co.tau[:, None])
    drift = 0.0
    for p in np.flatnonzero(met):
        k = int(np.searchsorted(times, co.tau[p]))
        if k < len(times):
            drift = max(drift, float(np.max(np.abs(wrapped_difference(gap[p, k:] - gap[p, k])))))
    count = after.sum(0)
    mean_gap = np.where(count > 0, np.sum(np.abs(gap) * after, 0) / np.maximum(count, 1), np.nan)
    return {"coupled_fraction": pair.coupled_fraction, "fiber_gap_drift": drift,
            "times": times.tolist(), "mean_fiber_distance": mean_gap.tolist(),
            "method": method, "merge_radius": pair.merge_radius}


@dataclass
class ScanReport:
    """Per-member verdicts of a section family plus the coupling diagnostic."""

    entries: list[dict]
    diagnostic: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def passing(self) -> list[str]:
        return [e["name"] for e in self.entries if e["decision"] == MARTINGALE]

    def decision(self, name: str) -> str:
        for e in self.entries:
            if e["name"] == name:
                return e["decision"]
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"entries": self.entries, "diagnostic": self.diagnostic, **self.meta}


def liouville_experiment(bundle, family, horizon: float = 1.0, dt: float = 1e-3,
                         n_paths: int = 1000, seed: int = 0, x0: PointRef | None = None,
                         y0: PointRef | None = None, resolution: float = 0.02, z: float = 3.0,
                         n_points: int = 100, coupled_pairs: int = 0,
                         method: str = "reflection") -> ScanReport:
    """Scan a family of sections of ``bundle`` for harmonic-consistent members.

    Every member is tested with ``vertical_martingale_test`` on one shared
    base ensemble started at ``x0`` (paired seeds).  The dispersion of its
    equivariant lift over ``n_points`` random P-points is reported next to
    the verdicts.  With ``coupled_pairs > 0`` the coupled-lift fiber gap
    from ``x0`` and ``y0`` is attached as a diagnostic.
    """
    base = bundle.base
    if x0 is None:
        x0 = default_start(base)
    ens = simulate_brownian(base, x0, horizon, dt, n_paths, seed)
    entries = []
    for section in family:
        if section.bundle is not bundle:
            raise ValueError(f"section {section.name!r} belongs to another bundle")
        rep = vertical_martingale_test(section, ensemble=ens, resolution=resolution, z=z)
        entries.append({"name": section.name, "decision": rep.decision,
                        "verdicts": [v.to_dict() for v in rep.verdicts],
                        "lift_dispersion": lift_dispersion(section, n_points, seed)})
    diag = {}
    if coupled_pairs > 0:
        if y0 is None:
            y0 = PointRef(x0.chart_id, -np.asarray(x0.coords))
        diag = coupled_lift_gap(bundle.principal, x0, y0, horizon=horizon, dt=dt,
                                n_paths=coupled_pairs, seed=seed, method=method)
    return ScanReport(entries, diag, {"bundle": bundle.name, "horizon": horizon, "dt": dt,
                                      "n_paths": n_paths, "seed": seed, "z": z,
                                      "resolution": resolution, "x0": x0.coords.tolist(),
                                      "x0_chart": x0.chart_id})

