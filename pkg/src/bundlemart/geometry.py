"""Charted Riemannian manifolds, connections, geodesics and distances.

All geometric callables are batched: ``metric(chart_index, x)`` takes ``x`` of
shape ``(..., d)`` and returns ``(..., d, d)``.  Christoffel arrays are indexed
``gamma[..., i, j, k] = Γ^i_{jk}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import (ChartEscapeError, DegenerateMetricError, NoOverlapError,
                     NonConvergenceError)
from .trajectory import SamplePath

# 4th-order central difference weights for the first derivative
_FD4 = ((2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0))


def _always(x):
    return np.ones(np.shape(x)[:-1], dtype=bool)


@dataclass(frozen=True)
class Chart:
    """A coordinate chart.

    ``domain`` and ``safety`` are batched predicates returning boolean arrays.
    ``transitions[target_id]`` maps coordinates into the target chart and
    ``jacobians[target_id]`` (optional) returns the derivative of that map.
    """

    chart_id: str
    dim: int
    domain: Callable = _always
    safety: Callable = _always
    transitions: Mapping[str, Callable] = field(default_factory=dict)
    jacobians: Mapping[str, Callable] = field(default_factory=dict)

    def domain_predicate(self, x) -> bool:
        return bool(np.all(self.domain(np.asarray(x, dtype=float))))

    def safety_predicate(self, x) -> bool:
        return bool(np.all(self.safety(np.asarray(x, dtype=float))))


@dataclass(frozen=True)
class PointRef:
    chart_id: str
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float).copy())

    def __eq__(self, other):
        return (isinstance(other, PointRef) and self.chart_id == other.chart_id
                and np.array_equal(self.coords, other.coords))

    __hash__ = None


@dataclass(frozen=True)
class TangentVec:
    base: PointRef
    components: np.ndarray

    def to_chart(self, manifold: "ChartedManifold", chart) -> "TangentVec":
        a, b = manifold.index(self.base.chart_id), manifold.index(chart)
        jac = manifold.transition_jacobian(a, b, self.base.coords)
        return TangentVec(transition_point(manifold, self.base, chart),
                          jac @ np.asarray(self.components, dtype=float))


@dataclass(frozen=True)
class OneFormVal:
    base: PointRef
    components: np.ndarray

    def to_chart(self, manifold: "ChartedManifold", chart) -> "OneFormVal":
        a, b = manifold.index(self.base.chart_id), manifold.index(chart)
        jac = manifold.transition_jacobian(a, b, self.base.coords)
        return OneFormVal(transition_point(manifold, self.base, chart),
                          np.linalg.solve(jac.T, np.asarray(self.components, dtype=float)))

    def __call__(self, v: TangentVec) -> float:
        return float(np.dot(self.components, v.components))


@dataclass(frozen=True)
class BilinearVal:
    base: PointRef
    components: np.ndarray

    def to_chart(self, manifold: "ChartedManifold", chart) -> "BilinearVal":
        a, b = manifold.index(self.base.chart_id), manifold.index(chart)
        jinv = np.linalg.inv(manifold.transition_jacobian(a, b, self.base.coords))
        return BilinearVal(transition_point(manifold, self.base, chart),
                           jinv.T @ np.asarray(self.components, dtype=float) @ jinv)

    def __call__(self, u: TangentVec, v: TangentVec) -> float:
        return float(u.components @ self.components @ v.components)


def conformal_christoffel(grad_f: np.ndarray) -> np.ndarray:
    """Levi-Civita symbols of ``e^{2f} δ`` given ``∂f`` of shape (..., d)."""
    d = grad_f.shape[-1]
    eye = np.eye(d)
    return (np.einsum("ij,...k->...ijk", eye, grad_f)
            + np.einsum("ik,...j->...ijk", eye, grad_f)
            - np.einsum("jk,...i->...ijk", eye, grad_f))


def sqrt_spd(a: np.ndarray) -> np.ndarray:
    """Symmetric positive square root of a batch of SPD matrices."""
    w, v = np.linalg.eigh(a)
    if np.any(w <= 0):
        raise DegenerateMetricError("matrix is not positive definite")
    return np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(w), v)


class ChartedManifold:
    """Manifold given by an explicit atlas with a metric and a connection.

    Parameters
    ----------
    name : str
    charts : sequence of Chart
    metric : callable ``(chart_index, x) -> g``
    christoffel : callable ``(chart_index, x) -> Γ``, optional
        Closed-form or non-metric connection.  Defaults to the Levi-Civita
        connection of ``metric`` by finite differences.
    fd_step : float
        Step of the 4th-order central differences used for ``∂g``.
    embedding : callable ``(chart_index, x) -> ambient coords``, optional
    distance : callable ``(PointRef, PointRef) -> float``, optional
        Closed-form distance, used as a fast path and as a test oracle.
    kernel : str, optional
        Tag of a compiled stepping kernel that reproduces the Euler scheme.
    """

    def __init__(self, name, charts, metric, christoffel=None, fd_step=1e-4,
                 embedding=None, distance=None, kernel=None, params=None):
        self.name = name
        self.charts = tuple(charts)
        if not self.charts:
            raise ValueError("atlas must contain at least one chart")
        self.dim = self.charts[0].dim
        if any(c.dim != self.dim for c in self.charts):
            raise ValueError("all charts must share the manifold dimension")
        self._index = {c.chart_id: i for i, c in enumerate(self.charts)}
        self._metric = metric
        self._christoffel = christoffel
        self.fd_step = float(fd_step)
        self.embedding = embedding
        self.closed_distance = distance
        self.kernel = kernel
        self.params = dict(params or {})

    def __repr__(self):
        return f"ChartedManifold({self.name!r}, dim={self.dim}, charts={list(self._index)})"

    # -- chart bookkeeping -------------------------------------------------
    def index(self, chart) -> int:
        if isinstance(chart, (int, np.integer)):
            if not 0 <= chart < len(self.charts):
                raise KeyError(f"chart index {chart} out of range")
            return int(chart)
        try:
            return self._index[chart]
        except KeyError:
            raise KeyError(f"unknown chart {chart!r} on {self.name}") from None

    def chart_id(self, idx: int) -> str:
        return self.charts[idx].chart_id

    def point(self, chart, coords) -> PointRef:
        c = self.index(chart)
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} coordinates, got shape {coords.shape}")
        if not self.charts[c].domain_predicate(coords):
            raise ChartEscapeError(f"{coords} outside chart {self.chart_id(c)}")
        return PointRef(self.chart_id(c), coords)

    def in_domain(self, chart, x) -> np.ndarray:
        return np.asarray(self.charts[self.index(chart)].domain(np.asarray(x, dtype=float)))

    def is_safe(self, chart, x) -> np.ndarray:
        return np.asarray(self.charts[self.index(chart)].safety(np.asarray(x, dtype=float)))

    def transition(self, a, b, x) -> np.ndarray:
        a, b = self.index(a), self.index(b)
        x = np.asarray(x, dtype=float)
        if a == b:
            return x.copy()
        fn = self.charts[a].transitions.get(self.chart_id(b))
        if fn is None:
            raise NoOverlapError(f"no transition {self.chart_id(a)} -> {self.chart_id(b)}")
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.asarray(fn(x), dtype=float)

    def transition_batch(self, ca, cb, x) -> np.ndarray:
        """Transition each row of ``x`` from chart ``ca[k]`` to chart ``cb[k]``."""
        ca = np.broadcast_to(np.asarray(ca, dtype=np.int64), np.shape(x)[:-1])
        cb = np.broadcast_to(np.asarray(cb, dtype=np.int64), np.shape(x)[:-1])
        out = np.array(x, dtype=float, copy=True)
        for a in np.unique(ca):
            for b in np.unique(cb):
                sel = (ca == a) & (cb == b)
                if a != b and np.any(sel):
                    out[sel] = self.transition(int(a), int(b), out[sel])
        return out

    def transition_jacobian(self, a, b, x, h: float = 1e-6) -> np.ndarray:
        a, b = self.index(a), self.index(b)
        x = np.asarray(x, dtype=float)
        if a == b:
            return np.broadcast_to(np.eye(self.dim), x.shape + (self.dim,)).copy()
        jac = self.charts[a].jacobians.get(self.chart_id(b))
        if jac is not None:
            return np.asarray(jac(x), dtype=float)
        cols = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            cols.append((self.transition(a, b, x + e) - self.transition(a, b, x - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def settle(self, charts: np.ndarray, x: np.ndarray):
        """Move points that left their chart's safe region to a safe chart.

        Returns updated ``(charts, x)``; raises ChartEscapeError if a point is
        neither safe anywhere nor inside its current domain.
        """
        charts = np.asarray(charts, dtype=np.int64).copy()
        x = np.array(x, dtype=float, copy=True)
        for c in np.unique(charts):
            sel = charts == c
            unsafe = sel.copy()
            unsafe[sel] = ~self.is_safe(c, x[sel])
            if not np.any(unsafe):
                continue
            for target in self.charts[c].transitions:
                b = self._index[target]
                if not np.any(unsafe):
                    break
                y = self.transition(c, b, x[unsafe])
                ok = np.all(np.isfinite(y), axis=-1) & self.is_safe(b, y)
                idx = np.flatnonzero(unsafe)[ok]
                x[idx] = y[ok]
                charts[idx] = b
                unsafe[idx] = False
            if np.any(unsafe) and not np.all(self.in_domain(c, x[unsafe])):
                raise ChartEscapeError(f"point left chart {self.chart_id(c)} with no safe transition")
        return charts, x

    # -- metric and connection --------------------------------------------
    def metric(self, chart, x) -> np.ndarray:
        return np.asarray(self._metric(self.index(chart), np.asarray(x, dtype=float)), dtype=float)

    def inverse_metric(self, chart, x) -> np.ndarray:
        g = self.metric(chart, x)
        try:
            ginv = np.linalg.inv(g)
        except np.linalg.LinAlgError:
            raise DegenerateMetricError("singular metric") from None
        if not np.all(np.isfinite(ginv)):
            raise DegenerateMetricError("singular metric")
        return ginv

    def metric_derivative(self, chart, x, h: float | None = None) -> np.ndarray:
        """``dg[..., l, i, j] = ∂_l g_ij`` by 4th-order central differences."""
        c = self.index(chart)
        x = np.asarray(x, dtype=float)
        h = self.fd_step if h is None else h
        out = []
        for l in range(self.dim):
            e = np.zeros(self.dim)
            e[l] = h
            acc = 0.0
            for s, w in _FD4:
                xs = x + s * e
                if not np.all(self.charts[c].domain(xs)):
                    raise ChartEscapeError("finite-difference stencil leaves the chart domain")
                acc = acc + w * self._metric(c, xs)
            out.append(acc / h)
        return np.stack(out, axis=-3)

    def levi_civita(self, chart, x, h: float | None = None) -> np.ndarray:
        ginv = self.inverse_metric(chart, x)
        dg = self.metric_derivative(chart, x, h)
        # lower[l, j, k] = ∂_j g_lk + ∂_k g_lj - ∂_l g_jk
        lower = (np.swapaxes(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg)
        gam = 0.5 * np.einsum("...il,...ljk->...ijk", ginv, lower)
        return 0.5 * (gam + np.swapaxes(gam, -1, -2))

    def christoffel(self, chart, x) -> np.ndarray:
        if self._christoffel is not None:
            return np.asarray(self._christoffel(self.index(chart), np.asarray(x, dtype=float)))
        return self.levi_civita(chart, x)

    @property
    def has_closed_connection(self) -> bool:
        return self._christoffel is not None

    def brownian_coefficients(self, chart, x):
        """Diffusion matrix ``σ = sqrt(g^{-1})`` and drift ``-½ g^{jk} Γ^i_{jk}``."""
        ginv = self.inverse_metric(chart, x)
        sig = sqrt_spd(ginv)
        drift = -0.5 * np.einsum("...jk,...ijk->...i", ginv, self.christoffel(chart, x))
        return sig, drift

    def norm(self, chart, x, v) -> np.ndarray:
        g = self.metric(chart, x)
        return np.sqrt(np.einsum("...i,...ij,...j->...", v, g, v))

    def embed(self, chart, x) -> np.ndarray:
        if self.embedding is None:
            raise NotImplementedError(f"{self.name} has no ambient embedding")
        return np.asarray(self.embedding(self.index(chart), np.asarray(x, dtype=float)))


# -- module-level operations ----------------------------------------------

def christoffel_from_metric(manifold: ChartedManifold, p: PointRef) -> np.ndarray:
    """Levi-Civita symbols at ``p`` from finite differences of the metric."""
    c = manifold.index(p.chart_id)
    g = manifold.metric(c, p.coords)
    if np.linalg.eigvalsh(g).min() <= 0:
        raise DegenerateMetricError(f"metric not positive definite at {p.coords}")
    return manifold.levi_civita(c, p.coords)


def transition_point(manifold: ChartedManifold, p: PointRef, target) -> PointRef:
    a, b = manifold.index(p.chart_id), manifold.index(target)
    if a == b:
        return PointRef(p.chart_id, p.coords)
    y = manifold.transition(a, b, p.coords)
    if not np.all(np.isfinite(y)) or not manifold.charts[b].domain_predicate(y):
        raise NoOverlapError(f"{p.coords} in {p.chart_id} is not in chart {manifold.chart_id(b)}")
    return PointRef(manifold.chart_id(b), y)


def _geodesic_accel(manifold, charts, x, v):
    acc = np.empty_like(v)
    for c in np.unique(charts):
        m = charts == c
        gam = manifold.christoffel(int(c), x[m])
        acc[m] = -np.einsum("...ijk,...j,...k->...i", gam, v[m], v[m])
    return acc


def _rk4_step(manifold, charts, x, v, h):
    a1 = _geodesic_accel(manifold, charts, x, v)
    x2, v2 = x + 0.5 * h * v, v + 0.5 * h * a1
    a2 = _geodesic_accel(manifold, charts, x2, v2)
    x3, v3 = x + 0.5 * h * v2, v + 0.5 * h * a2
    a3 = _geodesic_accel(manifold, charts, x3, v3)
    x4, v4 = x + h * v3, v + h * a3
    a4 = _geodesic_accel(manifold, charts, x4, v4)
    return (x + h / 6 * (v + 2 * v2 + 2 * v3 + v4),
            v + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4))


def _switch(manifold, charts, x, v):
    new_charts, new_x = manifold.settle(charts, x)
    moved = np.flatnonzero(new_charts != charts)
    for k in moved:
        v[k] = manifold.transition_jacobian(charts[k], new_charts[k], x[k]) @ v[k]
    return new_charts, new_x, v


def integrate_geodesic(manifold, charts, x, v, duration: float, n_steps: int, keep=False):
    """Batched RK4 for ``ẍ + Γ(ẋ, ẋ) = 0`` with chart switching.

    ``charts`` (B,), ``x`` and ``v`` (B, d).  Returns the final
    ``(charts, x, v)`` and, if ``keep``, node arrays of shape (n+1, B, ...).
    """
    charts = np.array(charts, dtype=np.int64, ndmin=1)
    x = np.array(x, dtype=float, ndmin=2)
    v = np.array(v, dtype=float, ndmin=2)
    h = duration / n_steps
    if keep:
        xs, vs, cs = [x.copy()], [v.copy()], [charts.copy()]
    for _ in range(n_steps):
        x, v = _rk4_step(manifold, charts, x, v, h)
        if not np.all(np.isfinite(x)):
            raise ChartEscapeError("geodesic left the chart domain")
        groups = [(c, charts == c) for c in np.unique(charts)]
        if not all(np.all(manifold.is_safe(c, x[m])) for c, m in groups):
            for c, m in groups:
                if not np.all(manifold.in_domain(c, x[m])):
                    raise ChartEscapeError("geodesic left the chart domain")
            charts, x, v = _switch(manifold, charts, x, v)
        if keep:
            xs.append(x.copy())
            vs.append(v.copy())
            cs.append(charts.copy())
    if keep:
        return charts, x, v, (np.array(xs), np.array(vs), np.array(cs))
    return charts, x, v


def geodesic_shoot(manifold: ChartedManifold, p: PointRef, v: TangentVec | np.ndarray,
                   length: float, step: float) -> SamplePath:
    """Arc-length geodesic from ``p`` in the direction of ``v``.

    The direction is normalised to unit speed so ``length`` is the arc length
    travelled; the returned path carries velocities at each node.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    comps = v.components if isinstance(v, TangentVec) else np.asarray(v, dtype=float)
    c = manifold.index(p.chart_id)
    speed = float(manifold.norm(c, p.coords, comps))
    if length <= 0 or speed == 0:
        return SamplePath(manifold, [0.0], p.coords[None], [c], velocities=np.zeros((1, manifold.dim)))
    n = max(1, int(np.ceil(length / step - 1e-9)))
    _, _, _, (xs, vs, cs) = integrate_geodesic(manifold, [c], p.coords, comps / speed, length, n,
                                               keep=True)
    return SamplePath(manifold, np.linspace(0.0, length, n + 1), xs[:, 0], cs[:, 0],
                      velocities=vs[:, 0])


def _same_point(manifold, p: PointRef, q: PointRef) -> bool:
    if p.chart_id == q.chart_id:
        return bool(np.array_equal(p.coords, q.coords))
    try:
        return bool(np.array_equal(transition_point(manifold, q, p.chart_id).coords, p.coords))
    except NoOverlapError:
        return False


def _unit_directions(d: int, n: int) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors in ℝ^d."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        a = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    if d == 3:
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        a = np.pi * (1 + 5 ** 0.5) * k
        r = np.sqrt(1 - z * z)
        return np.stack([r * np.cos(a), r * np.sin(a), z], axis=1)
    u = np.random.default_rng(0).standard_normal((n, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _segment_length(manifold, c, a, b, n=64) -> float:
    """g-length of the straight coordinate segment from ``a`` to ``b`` (Simpson)."""
    s = np.linspace(0.0, 1.0, n + 1)
    pts = a + s[:, None] * (b - a)
    if not np.all(manifold.in_domain(c, pts)):
        return np.inf
    speed = manifold.norm(c, pts, np.broadcast_to(b - a, pts.shape))
    w = np.ones(n + 1)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    return float(np.sum(w * speed) / (3.0 * n))


def distance_estimate(manifold: ChartedManifold, p: PointRef, q: PointRef,
                      tol: float = 1e-9, n_steps: int = 400, max_iter: int = 40,
                      n_directions: int | None = None, n_candidates: int = 3,
                      max_length: float = 10.0) -> float:
    """Riemannian distance by geodesic shooting on ``exp_p(v) = q``.

    A fan of unit-speed geodesics from ``p`` is integrated up to an upper
    bound on the distance (the length of a straight coordinate segment); the
    directions passing closest to ``q`` seed Newton iterations on the shooting
    vector.  The shortest converged geodesic length is returned.  If none
    converges a NonConvergenceError carries the shortest length found.
    """
    if _same_point(manifold, p, q):
        return 0.0
    d = manifold.dim
    c0 = manifold.index(p.chart_id)
    # q in every chart where it is representable
    q_in = {}
    for b in range(len(manifold.charts)):
        try:
            q_in[b] = transition_point(manifold, q, b).coords
        except NoOverlapError:
            pass
    bound = np.inf
    if c0 in q_in:
        bound = _segment_length(manifold, c0, p.coords, q_in[c0])
    cq = manifold.index(q.chart_id)
    try:
        p_in_q = transition_point(manifold, p, cq).coords
        bound = min(bound, _segment_length(manifold, cq, p_in_q, q.coords))
    except NoOverlapError:
        pass
    if not np.isfinite(bound):
        bound = max_length
    # fan of geodesics
    if n_directions is None:
        n_directions = {1: 2, 2: 72, 3: 400}.get(d, 800)
    dirs = _unit_directions(d, n_directions)
    sig = sqrt_spd(manifold.inverse_metric(c0, p.coords))
    vel = dirs @ sig.T
    n_scan = 160
    _, _, _, (xs, _, cs) = integrate_geodesic(manifold, np.full(len(vel), c0),
                                              np.repeat(p.coords[None], len(vel), 0), vel,
                                              1.02 * bound, n_scan, keep=True)
    miss = np.full(xs.shape[:2], np.inf)
    for b, yq in q_in.items():
        m = cs == b
        gq = manifold.metric(b, yq)
        diff = xs[m] - yq
        miss[m] = np.sqrt(np.einsum("...i,ij,...j->...", diff, gq, diff))
    node = np.argmin(miss, axis=0)
    closest = miss[node, np.arange(len(vel))]
    order = np.argsort(closest)
    lengths, best = [], None
    tried = []
    for j in order:
        if len(tried) >= n_candidates:
            break
        if any(np.dot(dirs[j], dirs[i]) > 0.98 for i in tried):
            continue
        tried.append(j)
        t_hit = 1.02 * bound * node[j] / n_scan
        try:
            lengths.append(_newton_shoot(manifold, c0, p.coords, q_in, vel[j] * t_hit,
                                         tol, n_steps, max_iter))
        except (NonConvergenceError, ChartEscapeError) as exc:
            got = getattr(exc, "best", None)
            if got is not None and (best is None or got < best):
                best = got
    if lengths:
        return float(min(lengths))
    raise NonConvergenceError("geodesic shooting did not converge", best=best)


def _newton_shoot(manifold, c0, x0, q_in, v, tol, n_steps, max_iter):
    d = manifold.dim
    eye = np.eye(d)

    def residuals(vs):
        cs, xs, _ = integrate_geodesic(manifold, np.full(len(vs), c0),
                                       np.repeat(x0[None], len(vs), 0), vs, 1.0, n_steps)
        out = np.empty_like(xs)
        for k in range(len(vs)):
            if int(cs[k]) not in q_in:
                raise ChartEscapeError("geodesic ended in a chart not containing the target")
            out[k] = xs[k] - q_in[int(cs[k])]
        return out

    def length(w):
        return float(manifold.norm(c0, x0, w))

    r = residuals(v[None])[0]
    err = np.linalg.norm(r)
    for _ in range(max_iter):
        if err < tol:
            return length(v)
        eps = 1e-6 * max(1.0, np.linalg.norm(v))
        rp = residuals(np.concatenate([v + eps * eye, v - eps * eye]))
        jac = ((rp[:d] - rp[d:]) / (2 * eps)).T
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        # trust region on the geodesic length keeps Newton on one branch
        t = min(1.0, 0.25 * max(length(v), 0.1) / max(length(step), 1e-300))
        for _ in range(30):
            try:
                r_new = residuals((v + t * step)[None])[0]
                err_new = np.linalg.norm(r_new)
            except ChartEscapeError:
                err_new = np.inf
            if err_new < err:
                break
            t *= 0.5
        else:
            break
        v, r, err = v + t * step, r_new, err_new
    if err < tol:
        return length(v)
    raise NonConvergenceError(f"geodesic shooting did not converge (residual {err:.2e})",
                              best=length(v))
