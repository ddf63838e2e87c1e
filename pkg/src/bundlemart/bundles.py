"""Principal bundles with one-dimensional abelian structure group and their
associated vector bundles.

Over each base chart ``c`` a local section is fixed and a bundle point is
written ``p = (x, φ)``: the section at ``x`` acted on by the group element of
angle ``φ``.  The connection form is ``ω = dφ + ω_i(x) dx^i``.  Changing
chart ``a -> b`` shifts the angle by ``δ_ab(x)``.  The angle is a covering
coordinate on ℝ, so distances along a fiber are only resolved up to ``π``.

An associated bundle ``E = P ×_G ℝ^k`` uses coordinates ``(x, ν)`` with
``μ((x, φ), ξ) = (x, L(x) ρ(φ) ξ)``, where ``ρ`` rotates each 2-block of
``ℝ^k`` and ``L`` is a chart-dependent fiber frame (the identity unless the
bundle is a frame bundle).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ChartEscapeError, FiberMismatchError, HorizontalityError
from .geometry import (Chart, ChartedManifold, PointRef, TangentVec, distance_estimate,
                       transition_point)
from .groups import MatrixGroup
from .manifolds import flat_space
from .paths import _finish, _grouped, ito_integral, stratonovich_integral
from .trajectory import PathEnsemble, RealPath, SamplePath, as_batch, step_increments

J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


def block_rotation(phi, k: int) -> np.ndarray:
    """``ρ(φ)``: rotation by ``φ`` in each 2-block of ℝ^k."""
    phi = np.asarray(phi, dtype=float)
    c, s = np.cos(phi), np.sin(phi)
    out = np.zeros(phi.shape + (k, k))
    for b in range(0, k, 2):
        out[..., b, b] = c
        out[..., b + 1, b + 1] = c
        out[..., b, b + 1] = -s
        out[..., b + 1, b] = s
    return out


def block_generator(k: int) -> np.ndarray:
    out = np.zeros((k, k))
    for b in range(0, k, 2):
        out[b:b + 2, b:b + 2] = J2
    return out


def _fd_derivative(fn, c, x, h=1e-4):
    """4th-order central derivative of a matrix field: ``(..., i, rows, cols)``."""
    d = x.shape[-1]
    out = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out.append((-fn(c, x + 2 * e) + 8 * fn(c, x + e) - 8 * fn(c, x - e) + fn(c, x - 2 * e))
                   / (12 * h))
    return np.stack(out, axis=-3)


def frame_connection(base: ChartedManifold, frame: Callable) -> Callable:
    """Connection coefficients of the Levi-Civita connection on oriented
    orthonormal frames ``u = L(x) R(φ)`` of a surface.

    Parallel frames satisfy ``u̇ + Γ(ẋ) u = 0``; writing
    ``L^{-1}(∂_i L + Γ_i L) = ω_i J`` gives ``φ̇ = -ω_i ẋ^i``.
    """

    def omega(c, x):
        L = frame(c, x)
        Linv = np.linalg.inv(L)
        dL = _fd_derivative(frame, c, x)
        gi = np.swapaxes(base.christoffel(c, x), -3, -2)  # (Γ_i)^a_b
        a = Linv[..., None, :, :] @ (dL + gi @ L[..., None, :, :])
        return 0.5 * (a[..., 1, 0] - a[..., 0, 1])

    return omega


def frame_shift(base: ChartedManifold, frame: Callable) -> Callable:
    """Angle change ``δ_ab`` of the frame coordinate under a chart transition."""

    def shift(a, b, x):
        y = base.transition(a, b, x)
        m = np.linalg.inv(frame(b, y)) @ base.transition_jacobian(a, b, x) @ frame(a, x)
        return np.arctan2(m[..., 1, 0], m[..., 0, 0])

    return shift


class PrincipalBundleModel:
    """Principal ``G``-bundle with ``G ∈ {U1, SO2}`` and its Kaluza-Klein metric.

    Parameters
    ----------
    base : ChartedManifold
    group : MatrixGroup
    omega : callable ``(chart, x) -> (..., n)``
        Connection coefficients ``ω_i`` in each base chart.
    shift : callable ``(a, b, x) -> (...)``
        Angle change ``δ_ab(x)`` of the fiber coordinate.
    frame : callable, optional
        Reference frame ``L(x)`` when the bundle is an orthonormal frame bundle.
    ambient : callable ``(chart, x, φ) -> ambient point``, optional
    """

    def __init__(self, name, base: ChartedManifold, group: MatrixGroup, omega, shift,
                 frame=None, ambient=None, closed_omega=None):
        if group.dim != 1 or not group.abelian or group.name == "O2":
            raise ValueError("bundles are modelled for U1 or SO2 structure groups")
        self.name = name
        self.base = base
        self.group = group
        self.omega = omega
        self.shift = shift
        self.frame = frame
        self.ambient = ambient
        self.total = self._build_total()

    def _build_total(self) -> ChartedManifold:
        n = self.base.dim
        charts = []
        for a, ch in enumerate(self.base.charts):
            trans = {}
            for target in ch.transitions:
                b = self.base.index(target)
                trans[target] = self._transition(a, b)
            charts.append(Chart(ch.chart_id, n + 1,
                                domain=lambda z, ch=ch: ch.domain(z[..., :n]),
                                safety=lambda z, ch=ch: ch.safety(z[..., :n]),
                                transitions=trans))
        return ChartedManifold(self.name, charts, self.kk_metric,
                               params={"base": self.base.name, "group": self.group.name})

    def _transition(self, a, b):
        def fn(z):
            x = z[..., :-1]
            y = self.base.transition(a, b, x)
            phi = z[..., -1] + self.shift(a, b, x)
            return np.concatenate([y, phi[..., None]], axis=-1)
        return fn

    def kk_metric(self, c, z) -> np.ndarray:
        """Kaluza-Klein metric ``k = π*g + ω*h`` in coordinates ``(x, φ)``."""
        n = self.base.dim
        x = z[..., :n]
        g = self.base.metric(c, x)
        w = self.omega(c, x)
        out = np.empty(z.shape[:-1] + (n + 1, n + 1))
        out[..., :n, :n] = g + w[..., :, None] * w[..., None, :]
        out[..., :n, n] = w
        out[..., n, :n] = w
        out[..., n, n] = 1.0
        return out

    # -- points and vectors --------------------------------------------------
    def point(self, chart, x, phi) -> PointRef:
        return self.total.point(chart, np.append(np.asarray(x, dtype=float), phi))

    def project(self, p: PointRef) -> PointRef:
        return PointRef(p.chart_id, p.coords[:-1])

    def right_action(self, p: PointRef, g) -> PointRef:
        return PointRef(p.chart_id, np.append(p.coords[:-1], p.coords[-1] + self.group.angle(g)))

    def connection_form(self, p: PointRef, v: TangentVec | np.ndarray) -> np.ndarray:
        comps = v.components if isinstance(v, TangentVec) else np.asarray(v, dtype=float)
        c = self.total.index(p.chart_id)
        w = self.omega(c, p.coords[:-1])
        return np.atleast_1d(comps[..., -1] + np.sum(w * comps[..., :-1], axis=-1))

    def fundamental_field(self, p: PointRef, a) -> TangentVec:
        comps = np.zeros(self.total.dim)
        comps[-1] = float(np.asarray(a).ravel()[0])
        return TangentVec(p, comps)

    def push_down(self, v: TangentVec) -> TangentVec:
        return TangentVec(self.project(v.base), np.asarray(v.components)[:-1])

    def frame_at(self, p: PointRef) -> np.ndarray:
        """Orthonormal frame ``L(x) R(φ)`` represented by ``p`` (frame bundles only)."""
        if self.frame is None:
            raise ValueError(f"{self.name} is not a frame bundle")
        c = self.total.index(p.chart_id)
        return self.frame(c, p.coords[:-1]) @ block_rotation(p.coords[-1], 2)

    def ambient_point(self, p: PointRef) -> np.ndarray:
        if self.ambient is None:
            raise NotImplementedError(f"{self.name} has no ambient model")
        c = self.total.index(p.chart_id)
        return self.ambient(c, p.coords[:-1], p.coords[-1])


@dataclass(frozen=True)
class KaluzaKleinMetric:
    bundle: PrincipalBundleModel

    def __call__(self, p: PointRef, v1, v2) -> float:
        return kaluza_klein_eval(self, p, v1, v2)


def kaluza_klein_eval(kk: KaluzaKleinMetric | PrincipalBundleModel, p: PointRef, v1, v2) -> float:
    """``g(π_* v1, π_* v2) + h(ω(v1), ω(v2))``."""
    bundle = kk.bundle if isinstance(kk, KaluzaKleinMetric) else kk
    a = v1.components if isinstance(v1, TangentVec) else np.asarray(v1, dtype=float)
    b = v2.components if isinstance(v2, TangentVec) else np.asarray(v2, dtype=float)
    c = bundle.total.index(p.chart_id)
    g = bundle.base.metric(c, p.coords[:-1])
    wa = bundle.connection_form(p, a)
    wb = bundle.connection_form(p, b)
    return float(a[:-1] @ g @ b[:-1] + bundle.group.inner(wa, wb))


def horizontal_lift_vector(bundle: PrincipalBundleModel, p: PointRef, v) -> TangentVec:
    """``v^i (D_i − ω_i D̄)`` at ``p``."""
    comps = v.components if isinstance(v, TangentVec) else np.asarray(v, dtype=float)
    if isinstance(v, TangentVec) and v.base.chart_id != p.chart_id:
        raise ValueError("vector and bundle point are in different charts")
    c = bundle.total.index(p.chart_id)
    w = bundle.omega(c, p.coords[:-1])
    return TangentVec(p, np.append(comps, -np.dot(w, comps)))


def horizontal_lift_path(bundle: PrincipalBundleModel, base_path, phi0=0.0):
    """Horizontal lift of base paths starting at fiber angle ``phi0``.

    The fiber angle follows ``Δφ = −½(ω(x_k) + ω(x_{k+1}))·Δx`` (trapezoid
    form of the Stratonovich equation ``δφ = −ω_i δx^i``) in the chart of
    ``x_k``; at chart changes the angle shift of the transition is applied.
    """
    man, times, coords, charts, single = as_batch(base_path)
    if man is not bundle.base:
        raise ValueError("base path is not on the bundle's base manifold")
    left, right, cl = step_increments(man, coords, charts)
    P, n, d = left.shape
    w_left = _grouped(bundle.omega, cl.reshape(-1), left.reshape(-1, d)).reshape(P, n, d)
    w_right = _grouped(bundle.omega, cl.reshape(-1), right.reshape(-1, d)).reshape(P, n, d)
    dphi = -0.5 * np.einsum("pki,pki->pk", w_left + w_right, right - left)
    shift = np.zeros((P, n))
    moved = charts[:, 1:] != cl
    if np.any(moved):
        for a in np.unique(cl[moved]):
            for b in np.unique(charts[:, 1:][moved]):
                sel = moved & (cl == a) & (charts[:, 1:] == b)
                if np.any(sel):
                    shift[sel] = bundle.shift(int(a), int(b), right[sel])
    phi = np.empty((P, n + 1))
    phi[:, 0] = phi0
    np.cumsum(dphi + shift, axis=1, out=phi[:, 1:])
    phi[:, 1:] += np.asarray(phi0, dtype=float).reshape(-1, 1) if np.ndim(phi0) else phi0
    lifted = np.concatenate([coords, phi[..., None]], axis=-1)
    ens = PathEnsemble(bundle.total, times, lifted, charts,
                       seed=getattr(base_path, "seed", 0), dt=getattr(base_path, "dt", 0.0),
                       generator_tag="horizontal-lift")
    return ens[0] if single else ens


def connection_form_field(bundle: PrincipalBundleModel):
    """The connection form as a 1-form field on the total space."""

    def theta(c, z):
        w = bundle.omega(c, z[..., :-1])
        return np.concatenate([w, np.ones(z.shape[:-1] + (1,))], axis=-1)

    return theta


def omega_integral(bundle: PrincipalBundleModel, lifted) -> RealPath:
    """``∫ ω δY`` along a P-valued path, by the midpoint (Stratonovich) rule."""
    return stratonovich_integral(connection_form_field(bundle), lifted)


def fiber_distance_check(bundle: PrincipalBundleModel, u: PointRef, a, b, **solver):
    """``(d_P(u·a, u·b), d_G(a, b))`` with ``d_P`` from the Kaluza-Klein metric."""
    pa = bundle.right_action(u, a)
    pb = bundle.right_action(u, b)
    dp = distance_estimate(bundle.total, pa, pb, **solver)
    dg = float(bundle.group.distance(a, b))
    return dp, dg


def curve_length(manifold: ChartedManifold, chart, curve: np.ndarray, t: np.ndarray) -> float:
    """Length of a sampled coordinate curve by Simpson's rule on the speed.

    Velocities come from 4th-order differences on the (uniform) grid.
    """
    h = t[1] - t[0]
    v = np.gradient(curve, h, axis=0, edge_order=2)
    v[2:-2] = (-curve[4:] + 8 * curve[3:-1] - 8 * curve[1:-3] + curve[:-4]) / (12 * h)
    speed = manifold.norm(chart, curve, v)
    n = len(t) - 1
    if n % 2:
        raise ValueError("Simpson's rule needs an even number of intervals")
    w = np.ones(n + 1)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    return float(np.sum(w * speed) * h / 3.0)


def fiber_curve_lengths(bundle: PrincipalBundleModel, p: PointRef, angle_fn, t):
    """Lengths of ``t -> p·μ(t)`` under ``k`` and of ``μ`` under ``h``.

    ``angle_fn(t)`` gives the angle of ``μ(t)``.
    """
    ang = angle_fn(t)
    c = bundle.total.index(p.chart_id)
    curve = np.repeat(p.coords[None], len(t), 0)
    curve[:, -1] = p.coords[-1] + ang
    circle = flat_space(1)
    return (curve_length(bundle.total, c, curve, t),
            curve_length(circle, 0, ang[:, None], t))


def lifted_curve_lengths(bundle: PrincipalBundleModel, chart, base_curve, angle_fn, t, phi0=0.0):
    """Lengths of ``τ = γ^h·μ``, of ``γ`` and of ``μ`` for a base curve sampled on ``t``."""
    c = bundle.base.index(chart)
    ens = SamplePath(bundle.base, t, base_curve, np.full(len(t), c))
    lifted = horizontal_lift_path(bundle, ens, phi0)
    if np.any(lifted.charts != c):
        raise ChartEscapeError("curve must stay in one chart")
    tau = lifted.coords.copy()
    ang = angle_fn(t)
    tau[:, -1] += ang
    circle = flat_space(1)
    return (curve_length(bundle.total, c, tau, t), curve_length(bundle.base, c, base_curve, t),
            curve_length(circle, 0, ang[:, None], t))


# -- associated bundles ------------------------------------------------------------

class AssociatedBundleModel:
    """``E = P ×_G ℝ^k`` with the metric and connection induced by ``ω``.

    The vertical 1-forms ``Dν^α = dν^α − (K_i ν)^α dx^i`` with
    ``K_i = ∂_i L L^{-1} − ω_i L J L^{-1}`` annihilate the horizontal
    distribution of ``ω``.  The metric is ``ĝ = π*g + Dνᵀ Q Dν`` with fiber
    metric ``Q = L^{-T} L^{-1}``.  ``connection`` supplies Christoffel symbols
    of ``∇^E``; by default the Levi-Civita connection of ``ĝ`` is used.
    """

    def __init__(self, name, principal: PrincipalBundleModel, fiber_dim: int,
                 fiber_frame: Callable | None = None, connection: Callable | None = None,
                 connection_name: str = "levi-civita"):
        if fiber_dim % 2:
            raise ValueError("fiber dimension must be even (sum of U(1)/SO(2) planes)")
        self.name = name
        self.principal = principal
        self.base = principal.base
        self.k = int(fiber_dim)
        self.n = self.base.dim
        self.fiber = flat_space(self.k)
        self.generator = block_generator(self.k)
        self._frame = fiber_frame
        self.connection_name = connection_name
        self.total = self._build_total(connection)

    # -- fiber frame and induced data -----------------------------------------
    def frame(self, c, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._frame is None:
            return np.broadcast_to(np.eye(self.k), x.shape[:-1] + (self.k, self.k)).copy()
        return self._frame(c, x)

    def K(self, c, x) -> np.ndarray:
        """``K[..., i] = ∂_i L L^{-1} − ω_i L J L^{-1}``, shape (..., n, k, k)."""
        x = np.asarray(x, dtype=float)
        L = self.frame(c, x)
        Linv = np.linalg.inv(L)
        w = self.principal.omega(c, x)
        out = -w[..., :, None, None] * (L @ self.generator @ Linv)[..., None, :, :]
        if self._frame is not None:
            out = out + _fd_derivative(self._frame, c, x) @ Linv[..., None, :, :]
        return out

    def fiber_metric(self, c, x) -> np.ndarray:
        Linv = np.linalg.inv(self.frame(c, x))
        return np.swapaxes(Linv, -1, -2) @ Linv

    def mixing(self, c, z) -> np.ndarray:
        """``M[..., α, i] = (K_i ν)^α``."""
        z = np.asarray(z, dtype=float)
        K = self.K(c, z[..., :self.n])
        return np.einsum("...iab,...b->...ai", K, z[..., self.n:])

    def metric(self, c, z) -> np.ndarray:
        n = self.n
        z = np.asarray(z, dtype=float)
        x = z[..., :n]
        g = self.base.metric(c, x)
        Q = self.fiber_metric(c, x)
        M = self.mixing(c, z)
        QM = Q @ M
        out = np.empty(z.shape[:-1] + (n + self.k,) * 2)
        out[..., :n, :n] = g + np.swapaxes(M, -1, -2) @ QM
        out[..., :n, n:] = -np.swapaxes(QM, -1, -2)
        out[..., n:, :n] = -QM
        out[..., n:, n:] = Q
        return out

    def _build_total(self, connection) -> ChartedManifold:
        n = self.n
        charts = []
        for a, ch in enumerate(self.base.charts):
            trans = {}
            for target in ch.transitions:
                trans[target] = self._transition(a, self.base.index(target))
            charts.append(Chart(ch.chart_id, n + self.k,
                                domain=lambda z, ch=ch: ch.domain(z[..., :n]),
                                safety=lambda z, ch=ch: ch.safety(z[..., :n]),
                                transitions=trans))
        return ChartedManifold(self.name, charts, self.metric, connection,
                               params={"base": self.base.name, "fiber_dim": self.k,
                                       "connection": self.connection_name})

    def fiber_transition(self, a, b, x) -> np.ndarray:
        """Linear map taking fiber coordinates over ``x`` from chart ``a`` to ``b``."""
        y = self.base.transition(a, b, x)
        rot = block_rotation(self.principal.shift(a, b, x), self.k)
        return self.frame(b, y) @ rot @ np.linalg.inv(self.frame(a, x))

    def _transition(self, a, b):
        n = self.n

        def fn(z):
            x = z[..., :n]
            y = self.base.transition(a, b, x)
            nu = np.einsum("...ab,...b->...a", self.fiber_transition(a, b, x), z[..., n:])
            return np.concatenate([y, nu], axis=-1)
        return fn

    # -- μ and projections ---------------------------------------------------------
    def mu(self, p: PointRef, xi) -> PointRef:
        c = self.total.index(p.chart_id)
        x, phi = p.coords[:-1], p.coords[-1]
        nu = self.frame(c, x) @ block_rotation(phi, self.k) @ np.asarray(xi, dtype=float)
        return PointRef(p.chart_id, np.concatenate([x, nu]))

    def project(self, e: PointRef) -> PointRef:
        return PointRef(e.chart_id, e.coords[:self.n])

    def vertical_forms(self, c, z) -> np.ndarray:
        """Components of ``Dν^α`` as rows: shape (..., k, n + k)."""
        M = self.mixing(c, z)
        eye = np.broadcast_to(np.eye(self.k), M.shape[:-2] + (self.k, self.k))
        return np.concatenate([-M, eye], axis=-1)

    def vertical_form(self, alpha: int) -> Callable:
        return lambda c, z: self.vertical_forms(c, z)[..., alpha, :]

    def vertical_projector(self, c, z) -> np.ndarray:
        n, k = self.n, self.k
        out = np.zeros(np.shape(z)[:-1] + (n + k, n + k))
        out[..., n:, :] = self.vertical_forms(c, z)
        return out

    def horizontal_projector(self, c, z) -> np.ndarray:
        return np.eye(self.n + self.k) - self.vertical_projector(c, z)

    def vertical_christoffel(self, c, z) -> np.ndarray:
        """Fiber block ``Γ^α_{βγ}`` of ``∇^E``."""
        n = self.n
        return self.total.christoffel(c, z)[..., n:, n:, n:]

    def mu_push(self, p_charts, p_coords, xi) -> np.ndarray:
        """Batched ``μ`` on coordinate arrays; returns E coordinates."""
        out = np.empty(p_coords.shape[:-1] + (self.n + self.k,))
        out[..., :self.n] = p_coords[..., :-1]
        for c in np.unique(p_charts):
            sel = p_charts == c
            x, phi = p_coords[sel][..., :-1], p_coords[sel][..., -1]
            u = self.frame(int(c), x) @ block_rotation(phi, self.k)
            out[sel, self.n:] = np.einsum("...ab,...b->...a", u, xi[sel])
        return out

    def frames_along(self, p_charts, p_coords) -> np.ndarray:
        """``L(x) ρ(φ)`` at each P point."""
        out = np.empty(p_coords.shape[:-1] + (self.k, self.k))
        for c in np.unique(p_charts):
            sel = p_charts == c
            x, phi = p_coords[sel][..., :-1], p_coords[sel][..., -1]
            out[sel] = self.frame(int(c), x) @ block_rotation(phi, self.k)
        return out


def mu_decompose(assoc: AssociatedBundleModel, e: PointRef, p: PointRef, tol: float = 1e-10):
    """``ξ = μ_p^{-1}(e)``; the base points of ``e`` and ``p`` must agree."""
    try:
        p_here = transition_point(assoc.principal.total, p, e.chart_id)
    except Exception as exc:  # no overlap means different fibers
        raise FiberMismatchError(str(exc)) from None
    x_e = e.coords[:assoc.n]
    if np.max(np.abs(p_here.coords[:-1] - x_e)) > tol * max(1.0, np.max(np.abs(x_e))):
        raise FiberMismatchError("bundle point does not lie over the base point of e")
    c = assoc.total.index(e.chart_id)
    u = assoc.frame(c, x_e) @ block_rotation(p_here.coords[-1], assoc.k)
    return np.linalg.solve(u, e.coords[assoc.n:])


def lemma32_check(assoc: AssociatedBundleModel, Y, xi: np.ndarray, alpha: int,
                  horizontality_tol: float | None = None):
    """Both sides of the fiber-differential identity for ``X = μ(Y, ξ)``.

    ``Y`` is a horizontal P-valued ensemble and ``xi`` has shape
    ``(n_paths, n_nodes, k)``.  The left side is the ``∇^E``-Itô integral of
    ``Dν^α`` along ``X``.  The right side integrates ``Dν^α`` against the
    fiber differential of ``μ_{Y_k}`` only: ``∂_ξμ Δξ + ½ ∂²_ξμ(Δξ, Δξ)``
    (the second term vanishes since ``μ_p`` is linear) with ``Y`` frozen at the
    left node, plus the fiber-block Christoffel correction.
    Returns ``(lhs, rhs)`` RealPaths.
    """
    man, times, coords, charts, single = as_batch(Y)
    xi = np.asarray(xi, dtype=float).reshape(coords.shape[:2] + (assoc.k,))
    if horizontality_tol is not None:
        res = omega_integral(assoc.principal, Y)
        if np.max(np.abs(res.values)) > horizontality_tol:
            raise HorizontalityError("Y is not horizontal within tolerance")
    X = PathEnsemble(assoc.total, times, assoc.mu_push(charts, coords, xi), charts)
    lhs = ito_integral(assoc.vertical_form(alpha), X, assoc.total.christoffel)
    n, k = assoc.n, assoc.k
    P, m = charts.shape
    left_c = charts[:, :-1].reshape(-1)
    left_p = coords[:, :-1].reshape(-1, n + 1)
    u = assoc.frames_along(left_c, left_p)
    dxi = (xi[:, 1:] - xi[:, :-1]).reshape(-1, k)
    dv = np.zeros((len(left_c), n + k))
    dv[:, n:] = np.einsum("pab,pb->pa", u, dxi)
    zl = X.coords[:, :-1].reshape(-1, n + k)
    th = _grouped(assoc.vertical_form(alpha), left_c, zl)
    gam = _grouped(assoc.vertical_christoffel, left_c, zl)
    inc = (np.einsum("pa,pa->p", th, dv)
           + 0.5 * np.einsum("pa,pabc,pb,pc->p", th[:, n:], gam, dv[:, n:], dv[:, n:]))
    rhs = _finish(times, inc.reshape(P, m - 1), single)
    return (lhs[0] if single and lhs.values.ndim > 1 else lhs), rhs
