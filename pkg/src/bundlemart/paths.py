"""Brownian motion on charted manifolds, path integrals and martingale tests."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from multiprocessing.pool import ThreadPool
from typing import Callable

import numpy as np

from . import kernels
from .errors import ChartEscapeError
from .geometry import ChartedManifold, PointRef, integrate_geodesic
from .trajectory import PathEnsemble, RealPath, as_batch, step_increments

BLOCK = 256

MARTINGALE = "martingale-consistent"
DRIFT = "drift-detected"
INCONCLUSIVE = "inconclusive"


# -- random streams ---------------------------------------------------------

def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for path ``index``: a counter-based split of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def gaussian_increments(seed: int, start: int, stop: int, n_steps: int, dim: int, dt: float,
                        stream: int = 0) -> np.ndarray:
    """Increments ``ΔW`` of shape ``(stop-start, n_steps, dim)`` for paths ``start..stop``.

    ``stream`` selects an independent family for the same path index (used
    for auxiliary noise such as fiber motions).
    """
    out = np.empty((stop - start, n_steps, dim))
    scale = np.sqrt(dt)
    for k, i in enumerate(range(start, stop)):
        rng = path_rng(seed, i) if stream == 0 else np.random.default_rng(
            np.random.SeedSequence(int(seed), spawn_key=(int(i), int(stream))))
        out[k] = rng.standard_normal((n_steps, dim)) * scale
    return out


def uniform_draws(seed: int, start: int, stop: int, n_steps: int, stream: int) -> np.ndarray:
    """Uniforms of shape ``(stop-start, n_steps)`` from an auxiliary stream."""
    out = np.empty((stop - start, n_steps))
    for k, i in enumerate(range(start, stop)):
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(i), int(stream))))
        out[k] = rng.random(n_steps)
    return out


def worker_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    try:
        return max(1, int(os.environ.get("BUNDLEMART_THREADS", "1")))
    except ValueError:
        return 1


def map_blocks(fn, n_items: int, threads: int | None = None, block: int = BLOCK):
    """Apply ``fn(start, stop)`` over fixed blocks; results are in block order."""
    bounds = [(s, min(s + block, n_items)) for s in range(0, n_items, block)]
    n = worker_count(threads)
    if n == 1 or len(bounds) == 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPool(n) as pool:
        return pool.starmap(fn, bounds)


# -- Brownian motion ----------------------------------------------------------

def _n_steps(horizon: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if horizon < dt * (1 - 1e-12):
        raise ValueError("horizon must be at least dt")
    return max(1, int(round(horizon / dt)))


def euler_steps(manifold: ChartedManifold, charts, x, dW, dt, stride=1, scheme="euler"):
    """Generic chart-wise stepping of a block of paths.

    ``scheme='euler'`` uses ``Δx = σ ΔW − ½ g^{jk}Γ^i_{jk} dt`` with
    ``σ = sqrt(g^{-1})``; ``scheme='geodesic'`` moves along the geodesic with
    initial velocity ``σ ΔW`` (two RK4 substeps), which needs no drift term.
    """
    charts = np.array(charts, dtype=np.int64, copy=True)
    x = np.array(x, dtype=float, copy=True)
    P, n, d = dW.shape
    m = n // stride + 1
    xs = np.empty((P, m, d))
    cs = np.empty((P, m), dtype=np.int64)
    xs[:, 0], cs[:, 0] = x, charts
    for k in range(n):
        if scheme == "euler":
            for c in np.unique(charts):
                sel = charts == c
                sig, drift = manifold.brownian_coefficients(int(c), x[sel])
                x[sel] = x[sel] + np.einsum("pij,pj->pi", sig, dW[sel, k]) + drift * dt
            if not np.all(np.isfinite(x)):
                raise ChartEscapeError("Euler step produced non-finite coordinates")
            groups = [(c, charts == c) for c in np.unique(charts)]
            if not all(np.all(manifold.is_safe(c, x[m_])) for c, m_ in groups):
                charts, x = manifold.settle(charts, x)
        elif scheme == "geodesic":
            vel = np.empty_like(x)
            for c in np.unique(charts):
                sel = charts == c
                sig, _ = manifold.brownian_coefficients(int(c), x[sel])
                vel[sel] = np.einsum("pij,pj->pi", sig, dW[sel, k])
            charts, x, _ = integrate_geodesic(manifold, charts, x, vel, 1.0, 2)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        if (k + 1) % stride == 0:
            j = (k + 1) // stride
            xs[:, j], cs[:, j] = x, charts
    return xs, cs


def simulate_brownian(manifold: ChartedManifold, x0: PointRef, horizon: float, dt: float,
                      n_paths: int, seed: int, store_every: int | None = 1,
                      scheme: str = "euler", threads: int | None = None,
                      use_kernel: bool = True) -> PathEnsemble:
    """Ensemble of g-Brownian motions started at ``x0``.

    ``store_every`` keeps every k-th grid node (``None`` keeps only the start
    and the terminal node).  Path ``i`` is driven by ``path_rng(seed, i)`` so
    results do not depend on blocking or thread count.
    """
    n = _n_steps(horizon, dt)
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    stride = n if store_every is None else int(store_every)
    if stride < 1 or n % stride:
        raise ValueError("store_every must divide the number of steps")
    c0 = manifold.index(x0.chart_id)
    if not manifold.charts[c0].domain_predicate(x0.coords):
        raise ChartEscapeError("start point outside its chart")
    d = manifold.dim
    tag = manifold.kernel if (use_kernel and scheme == "euler") else None
    if tag == "flat" and not manifold.charts[c0].safety_predicate(np.full(d, 1e300)):
        tag = None  # bounded start chart: use the generic chart-switching path

    def run(a, b):
        dW = gaussian_increments(seed, a, b, n, d, dt)
        x = np.repeat(x0.coords[None], b - a, axis=0)
        c = np.full(b - a, c0, dtype=np.int64)
        if tag == "sphere2":
            return kernels.sphere_euler(x, c, dW, manifold.params["radius"],
                                        manifold.params["safe_radius"], stride)
        if tag == "flat":
            return kernels.flat_walk(x, dW, stride), np.full((b - a, n // stride + 1), c0)
        return euler_steps(manifold, c, x, dW, dt, stride, scheme)

    parts = map_blocks(run, n_paths, threads)
    coords = np.concatenate([p[0] for p in parts])
    charts = np.concatenate([p[1] for p in parts])
    times = np.arange(0, n + 1, stride) * dt
    return PathEnsemble(manifold, times, coords, charts, seed=seed, dt=dt,
                        generator_tag=f"brownian/{scheme}" + (f"/{tag}" if tag else ""),
                        meta={"n_steps": n, "store_every": stride})


# -- path integrals -----------------------------------------------------------

def _connection(manifold, connection):
    if connection is None:
        return manifold.christoffel
    if isinstance(connection, ChartedManifold):
        return connection.christoffel
    return connection


def _grouped(fn, charts, x):
    """Evaluate ``fn(chart, x)`` on a flat batch grouped by chart index."""
    out = None
    for c in np.unique(charts):
        sel = charts == c
        val = np.asarray(fn(int(c), x[sel]), dtype=float)
        if out is None:
            out = np.empty(charts.shape + val.shape[1:])
        out[sel] = val
    return out


def _finish(times, incs, single):
    vals = np.zeros(incs.shape[:-1] + (incs.shape[-1] + 1,))
    np.cumsum(incs, axis=-1, out=vals[..., 1:])
    return RealPath(times, vals[0] if single else vals)


def _increments(path):
    man, times, coords, charts, single = as_batch(path)
    left, right, cl = step_increments(man, coords, charts)
    return man, times, left, right - left, cl, single


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} is undefined at a visited point")


CHUNK_NODES = 65536


def _chunked(step_fn, path) -> RealPath:
    """Sum per-step increments computed by ``step_fn(left, dx, charts)`` on flat
    batches, a block of paths at a time to bound memory."""
    man, times, left, dx, cl, single = _increments(path)
    P, n, d = left.shape
    inc = np.empty((P, n))
    rows = max(1, CHUNK_NODES // max(n, 1))
    for a in range(0, P, rows):
        b = min(P, a + rows)
        inc[a:b] = step_fn(man, left[a:b].reshape(-1, d), dx[a:b].reshape(-1, d),
                           cl[a:b].reshape(-1)).reshape(b - a, n)
    return _finish(times, inc, single)


def ito_integral(theta: Callable, path, connection=None) -> RealPath:
    """Itô integral of a 1-form along a path.

    Each step contributes ``θ_i ΔX^i + ½ Γ^k_{ij} θ_k ΔX^i ΔX^j`` evaluated
    at the left node, in the chart of the left node.  ``theta(chart, x)``
    returns components of shape ``(..., d)``.
    """

    def step(man, x, dx, c):
        th = _grouped(theta, c, x)
        _check_finite(th, "form")
        gam = _grouped(_connection(man, connection), c, x)
        quad = np.einsum("pkij,pi,pj->pk", gam, dx, dx, optimize=True)
        return np.einsum("pi,pi->p", th, dx) + 0.5 * np.einsum("pk,pk->p", th, quad)

    return _chunked(step, path)


def ito_integrals(theta: Callable, path, connection=None) -> RealPath:
    """Itô integrals of several 1-forms at once.

    ``theta(chart, x)`` returns ``(..., m, d)``; the result has values of
    shape ``(m, n_paths, n_nodes)`` (``(m, n_nodes)`` for a single path).
    """
    man, times, left, dx, cl, single = _increments(path)
    P, n, d = left.shape
    inc = None
    rows = max(1, CHUNK_NODES // max(n, 1))
    for a in range(0, P, rows):
        b = min(P, a + rows)
        x, c, h = left[a:b].reshape(-1, d), cl[a:b].reshape(-1), dx[a:b].reshape(-1, d)
        th = _grouped(theta, c, x)
        _check_finite(th, "form")
        gam = _grouped(_connection(man, connection), c, x)
        quad = np.einsum("pkij,pi,pj->pk", gam, h, h, optimize=True)
        step = np.einsum("pmi,pi->mp", th, h) + 0.5 * np.einsum("pmk,pk->mp", th, quad)
        if inc is None:
            inc = np.empty((th.shape[1], P, n))
        inc[:, a:b] = step.reshape(-1, b - a, n)
    vals = np.zeros(inc.shape[:-1] + (n + 1,))
    np.cumsum(inc, axis=-1, out=vals[..., 1:])
    return RealPath(times, vals[:, 0] if single else vals)


def quadratic_integral(b: Callable, path) -> RealPath:
    """Quadratic integral ``∫ b_ij d[X^i, X^j]`` with left-point evaluation."""

    def step(man, x, dx, c):
        bb = _grouped(b, c, x)
        _check_finite(bb, "bilinear form")
        return np.einsum("pij,pi,pj->p", bb, dx, dx)

    return _chunked(step, path)


def stratonovich_integral(theta: Callable, path) -> RealPath:
    """Stratonovich integral with θ at the coordinate midpoint of each step."""

    def step(man, x, dx, c):
        th = _grouped(theta, c, x + 0.5 * dx)
        _check_finite(th, "form")
        return np.einsum("pi,pi->p", th, dx)

    return _chunked(step, path)


def function_along(f: Callable, path) -> RealPath:
    """Values ``f(X_t)`` of a scalar function given per chart."""
    man, times, coords, charts, single = as_batch(path)
    P, m, d = coords.shape
    vals = _grouped(f, charts.reshape(-1), coords.reshape(-1, d)).reshape(P, m)
    return RealPath(times, vals[0] if single else vals)


# -- maps between manifolds and the geometric Itô formula ---------------------

@dataclass(frozen=True)
class SmoothMap:
    """Smooth map ``F: M -> N`` given chart-wise.

    ``func(chart_M, x)`` returns ``(chart_N, y)`` with ``chart_N`` an integer
    array (or scalar) of target chart indices and ``y`` of shape ``(..., dim N)``.
    ``func`` must use a fixed target chart near each source point so that it
    can be differentiated.
    """

    source: ChartedManifold
    target: ChartedManifold
    func: Callable

    def __call__(self, chart, x):
        cn, y = self.func(chart, np.asarray(x, dtype=float))
        return np.broadcast_to(np.asarray(cn, dtype=np.int64), np.shape(y)[:-1]), np.asarray(y)

    def push_path(self, path):
        man, times, coords, charts, single = as_batch(path)
        P, m, d = coords.shape
        flat_c, flat_x = charts.reshape(-1), coords.reshape(-1, d)
        cn = np.empty(flat_c.shape, dtype=np.int64)
        y = np.empty((len(flat_c), self.target.dim))
        for c in np.unique(flat_c):
            sel = flat_c == c
            cn[sel], y[sel] = self(int(c), flat_x[sel])
        ens = PathEnsemble(self.target, times, y.reshape(P, m, -1), cn.reshape(P, m))
        return ens[0] if single else ens

    def derivatives(self, chart, x, h: float = 1e-3):
        """First and second derivatives ``∂_iF^a`` (..., a, i) and ``∂_i∂_jF^a``.

        Second-order central differences, all in the target chart of ``x``.
        """
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        cn, y0 = self(chart, x)
        e = np.eye(d) * h

        def val(z):
            c2, y = self(chart, z)
            if np.any(c2 != cn):
                y = np.where((c2 == cn)[..., None], y, self.target.transition_batch(c2, cn, y))
            return y

        plus = [val(x + e[i]) for i in range(d)]
        minus = [val(x - e[i]) for i in range(d)]
        d1 = np.stack([(plus[i] - minus[i]) / (2 * h) for i in range(d)], axis=-1)
        d2 = np.empty(y0.shape + (d, d))
        for i in range(d):
            d2[..., i, i] = (plus[i] - 2 * y0 + minus[i]) / h ** 2
            for j in range(i + 1, d):
                fpp = val(x + e[i] + e[j])
                fmm = val(x - e[i] - e[j])
                fpm = val(x + e[i] - e[j])
                fmp = val(x - e[i] + e[j])
                d2[..., i, j] = d2[..., j, i] = (fpp - fpm - fmp + fmm) / (4 * h * h)
        return cn, y0, d1, d2

    def second_fundamental_form(self, chart, x, conn_M=None, conn_N=None, h: float = 1e-3):
        """``β_F^a_{ij} = ∂_i∂_jF^a − Γ^k_{ij} ∂_kF^a + Γ_N^a_{bc} ∂_iF^b ∂_jF^c``."""
        gm = _connection(self.source, conn_M)
        gn = _connection(self.target, conn_N)
        cn, y, d1, d2 = self.derivatives(chart, x, h)
        gam_m = gm(self.source.index(chart), np.asarray(x, dtype=float))
        gam_n = _grouped(gn, cn.reshape(-1), y.reshape(-1, y.shape[-1])).reshape(
            y.shape + (y.shape[-1],) * 2)
        return (d2 - np.einsum("...kij,...ak->...aij", gam_m, d1)
                + np.einsum("...abc,...bi,...cj->...aij", gam_n, d1, d1))


def geometric_ito_residual(F: SmoothMap, theta: Callable, path, conn_M=None, conn_N=None,
                           h: float = 1e-3) -> RealPath:
    """LHS − RHS of the geometric Itô formula along ``path``.

    LHS is the ``∇^N``-Itô integral of θ along ``F(X)``; RHS is the
    ``∇^M``-Itô integral of ``F*θ`` along X plus half the quadratic integral
    of ``θ(β_F)``, with ``β_F`` from second-order finite differences.
    """
    lhs = ito_integral(theta, F.push_path(path), conn_N)
    man, times, coords, charts, single = as_batch(path)
    P, m, d = coords.shape
    flat_c, flat_x = charts.reshape(-1), coords.reshape(-1, d)
    nd = F.target.dim
    pull = np.empty((len(flat_c), d))
    bq = np.empty((len(flat_c), d, d))
    for c in np.unique(flat_c):
        sel = flat_c == c
        cn, y, d1, _ = F.derivatives(int(c), flat_x[sel], h)
        beta = F.second_fundamental_form(int(c), flat_x[sel], conn_M, conn_N, h)
        th = _grouped(theta, cn.reshape(-1), y.reshape(-1, nd))
        pull[sel] = np.einsum("pa,pai->pi", th, d1)
        bq[sel] = np.einsum("pa,paij->pij", th, beta)
    left, right, cl = step_increments(man, coords, charts)
    dx = (right - left).reshape(-1, d)
    node = lambda arr: arr.reshape((P, m) + arr.shape[1:])[:, :-1].reshape((-1,) + arr.shape[1:])
    gam = _grouped(_connection(man, conn_M), cl.reshape(-1), left.reshape(-1, d))
    pl, bl = node(pull), node(bq)
    inc = (np.einsum("pi,pi->p", pl, dx)
           + 0.5 * np.einsum("pk,pkij,pi,pj->p", pl, gam, dx, dx)
           + 0.5 * np.einsum("pij,pi,pj->p", bl, dx, dx))
    rhs = _finish(times, inc.reshape(P, m - 1), single)
    return RealPath(lhs.times, lhs.values - rhs.values)


# -- statistical martingale test -------------------------------------------------

@dataclass(frozen=True)
class DriftVerdict:
    drift_estimate: float
    ci_low: float
    ci_high: float
    n_paths: int
    decision: str
    std_error: float = 0.0
    resolution: float = 0.02

    def to_dict(self) -> dict:
        return asdict(self)


def drift_test(ensemble, resolution: float = 0.02, horizon: float | None = None,
               z: float = 1.959963984540054, min_paths: int = 30) -> DriftVerdict:
    """Drift per unit time of a real process from its terminal values.

    Decision rule, with ``CI = estimate ± z·SE``:

    * fewer than ``min_paths`` paths: inconclusive;
    * CI inside ``[-resolution/2, resolution/2]``: martingale-consistent
      (any drift is below practical resolution, e.g. O(dt) discretisation bias);
    * 0 in the CI and CI width below ``resolution``: martingale-consistent;
    * 0 in the CI otherwise: inconclusive;
    * 0 outside the CI: drift-detected.
    """
    if isinstance(ensemble, RealPath):
        vals = ensemble.values
        start = vals[..., 0] if vals.ndim > 1 else vals[:1]
        term = np.atleast_1d(ensemble.terminal - start)
        horizon = ensemble.horizon if horizon is None else horizon
    else:
        term = np.asarray(ensemble, dtype=float).ravel()
        if horizon is None:
            raise ValueError("horizon is required for raw terminal values")
    n = term.size
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    est = float(np.mean(term) / horizon) if n else 0.0
    if n < max(2, min_paths):
        return DriftVerdict(est, -np.inf, np.inf, n, INCONCLUSIVE, np.inf, resolution)
    se = float(np.std(term, ddof=1) / np.sqrt(n) / horizon)
    lo, hi = est - z * se, est + z * se
    half = 0.5 * resolution
    if -half <= lo and hi <= half:
        decision = MARTINGALE
    elif lo <= 0.0 <= hi:
        decision = MARTINGALE if hi - lo < resolution else INCONCLUSIVE
    else:
        decision = DRIFT
    return DriftVerdict(est, lo, hi, n, decision, se, resolution)


def combine_decisions(verdicts) -> str:
    """Overall decision: any drift-detected rejects, else any inconclusive."""
    decisions = [v.decision for v in verdicts]
    if DRIFT in decisions:
        return DRIFT
    if INCONCLUSIVE in decisions:
        return INCONCLUSIVE
    return MARTINGALE


def verdicts_to_json(verdicts, path=None, **extra) -> str:
    doc = dict(extra, verdicts=[v.to_dict() for v in verdicts])
    text = json.dumps(doc, indent=2, sort_keys=True, default=float)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
