"""Sections of associated bundles, their equivariant lifts and harmonicity tests."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bundles import (AssociatedBundleModel, block_rotation, horizontal_lift_path,
                      lemma32_check)
from .geometry import PointRef, sqrt_spd
from .paths import (DriftVerdict, _grouped, combine_decisions, drift_test, ito_integrals,
                    simulate_brownian)
from .trajectory import PathEnsemble, RealPath, as_batch

_trapezoid = getattr(np, "trapezoid", None) or np.trapz
_GL3 = (np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)]), np.array([5.0, 8.0, 5.0]) / 9.0)


@dataclass(frozen=True)
class SectionModel:
    """Section ``σ`` of an associated bundle, given chart-wise by its fiber
    components ``ν = field(chart, x)`` of shape ``(..., k)``."""

    name: str
    bundle: AssociatedBundleModel
    field: Callable

    def __call__(self, c, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.concatenate([x, np.asarray(self.field(c, x), dtype=float)], axis=-1)

    def point(self, p: PointRef) -> PointRef:
        c = self.bundle.base.index(p.chart_id)
        return PointRef(p.chart_id, self(c, p.coords))

    def along(self, path):
        """E-valued path ``σ(X)`` for a base path or ensemble."""
        man, times, coords, charts, single = as_batch(path)
        P, m, d = coords.shape
        vals = _grouped(self, charts.reshape(-1), coords.reshape(-1, d)).reshape(P, m, -1)
        ens = PathEnsemble(self.bundle.total, times, vals, charts,
                           seed=getattr(path, "seed", 0), dt=getattr(path, "dt", 0.0))
        return ens[0] if single else ens


@dataclass(frozen=True)
class EquivariantLift:
    """``F_σ(p) = μ_p^{-1}(σ(π p)) = ρ(-φ) L(x)^{-1} ν(x)``."""

    section: SectionModel

    def __call__(self, c, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        b = self.section.bundle
        x, phi = z[..., :-1], z[..., -1]
        nu = np.asarray(self.section.field(c, x), dtype=float)
        u = b.frame(c, x) @ block_rotation(phi, b.k)
        return np.linalg.solve(u, nu[..., None])[..., 0]

    def along(self, lifted) -> np.ndarray:
        man, times, coords, charts, single = as_batch(lifted)
        P, m, d = coords.shape
        vals = _grouped(self, charts.reshape(-1), coords.reshape(-1, d)).reshape(P, m, -1)
        return vals[0] if single else vals


@dataclass
class TensionReport:
    point: PointRef
    tension: np.ndarray
    vertical: np.ndarray
    error_estimate: float
    fd_step: float
    kind: str = "vertical"

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vertical))

    def vanishes(self, threshold: float) -> bool:
        return self.norm <= threshold


@dataclass
class MartingaleReport:
    """Per-component drift verdicts and the combined decision."""

    verdicts: list[DriftVerdict]
    decision: str
    integrals: RealPath | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"decision": self.decision, "verdicts": [v.to_dict() for v in self.verdicts],
                **self.meta}


# -- lifts ---------------------------------------------------------------------------

def equivariant_lift_eval(section: SectionModel, p: PointRef, g=None) -> np.ndarray:
    """``F_σ(p)``, or ``F_σ(p·g)`` when ``g`` is given."""
    P = section.bundle.principal
    if g is not None:
        p = P.right_action(p, g)
    c = P.total.index(p.chart_id)
    return EquivariantLift(section)(c, p.coords)


# -- finite-difference tensions -----------------------------------------------------

def _trace_basis(base, c, x):
    ginv = base.inverse_metric(c, x)
    e = sqrt_spd(ginv)  # columns are g-orthonormal
    t = np.einsum("...jk,...ijk->...i", ginv, base.christoffel(c, x))
    return e, t


def _vertical_tension_once(section, c, x, h):
    b = section.bundle
    e, t = _trace_basis(b.base, c, x)
    s0 = section(c, x)
    gam = b.total.christoffel(c, s0)
    tau = np.zeros_like(s0)
    for a in range(b.n):
        ea = e[..., :, a]
        sp, sm = section(c, x + h * ea), section(c, x - h * ea)
        d1 = (sp - sm) / (2 * h)
        tau += (sp - 2 * s0 + sm) / h ** 2 + np.einsum("...ABC,...B,...C->...A", gam, d1, d1)
    tau -= (section(c, x + h * t) - section(c, x - h * t)) / (2 * h)
    vert = np.einsum("...ab,...b->...a", b.vertical_forms(c, s0), tau)
    return tau, vert


def vertical_tension_batch(section: SectionModel, c, x, fd_step: float = 1e-3):
    """Tension of ``σ`` (as a map into E) and its vertical components at many points.

    ``τ = Σ_a [D²σ(e_a, e_a) + Γ^E(dσ e_a, dσ e_a)] − dσ(Σ_a ∇_{e_a} e_a)`` over a
    g-orthonormal basis, with central differences.  Returns
    ``(tau, vertical, error)`` where ``error`` is the Richardson estimate from
    steps ``h`` and ``h/2``.
    """
    x = np.asarray(x, dtype=float)
    tau, vert = _vertical_tension_once(section, c, x, fd_step)
    _, vert2 = _vertical_tension_once(section, c, x, fd_step / 2)
    err = np.linalg.norm(vert - vert2, axis=-1) * 4.0 / 3.0
    return tau, vert, err


def vertical_tension(section: SectionModel, p: PointRef, fd_step: float = 1e-3) -> TensionReport:
    c = section.bundle.base.index(p.chart_id)
    tau, vert, err = vertical_tension_batch(section, c, p.coords, fd_step)
    return TensionReport(p, tau, vert, float(err), fd_step, "vertical")


def _horizontal_flow(bundle, c, z, v, t):
    """Point at time ``t`` on the integral curve of the horizontal lift of the
    constant-coefficient field ``v`` through ``z``."""
    x, phi = z[..., :-1], z[..., -1]
    nodes, weights = _GL3
    acc = 0.0
    for s, w in zip(nodes, weights):
        xs = x + (0.5 * t * (1 + s)) * v
        acc = acc + w * np.sum(bundle.omega(c, xs) * v, axis=-1)
    phi_t = phi - 0.5 * t * acc
    return np.concatenate([x + t * v, phi_t[..., None]], axis=-1)


def _horizontal_laplacian_once(lift, c, z, h):
    P = lift.section.bundle.principal
    x = z[..., :-1]
    e, t = _trace_basis(P.base, c, x)
    f0 = lift(c, z)
    out = np.zeros_like(f0)
    for a in range(P.base.dim):
        ea = e[..., :, a]
        out += (lift(c, _horizontal_flow(P, c, z, ea, h)) - 2 * f0
                + lift(c, _horizontal_flow(P, c, z, ea, -h))) / h ** 2
    out -= (lift(c, _horizontal_flow(P, c, z, t, h))
            - lift(c, _horizontal_flow(P, c, z, t, -h))) / (2 * h)
    return out


def horizontal_tension_batch(lift: EquivariantLift, c, z, fd_step: float = 1e-3):
    """Horizontal Laplacian ``Δ_H F`` of the lift at P points ``z``.

    Second derivatives are taken along integral curves of horizontal lifts of
    constant-coefficient base fields (the fiber angle is integrated with
    3-point Gauss-Legendre).  Returns ``(value, error)``.
    """
    z = np.asarray(z, dtype=float)
    v1 = _horizontal_laplacian_once(lift, c, z, fd_step)
    v2 = _horizontal_laplacian_once(lift, c, z, fd_step / 2)
    return v1, np.linalg.norm(v1 - v2, axis=-1) * 4.0 / 3.0


def horizontal_tension(lift: EquivariantLift, p: PointRef, fd_step: float = 1e-3) -> TensionReport:
    c = lift.section.bundle.principal.total.index(p.chart_id)
    val, err = horizontal_tension_batch(lift, c, p.coords, fd_step)
    return TensionReport(p, val, val, float(err), fd_step, "horizontal")


def frame_components(section: SectionModel, p: PointRef, v) -> np.ndarray:
    """Express a fiber vector over ``π(p)`` in the frame of ``p``: ``ρ(-φ) L^{-1} v``."""
    b = section.bundle
    c = b.principal.total.index(p.chart_id)
    u = b.frame(c, p.coords[:-1]) @ block_rotation(p.coords[-1], b.k)
    return np.linalg.solve(u, np.asarray(v, dtype=float))


# -- stochastic tests -----------------------------------------------------------------

def default_start(base) -> PointRef:
    """Start point used by the experiments when none is given: ``(1, …, 1)``
    on tori, ``(0.5, 0, …)`` in the first chart of spheres, the origin otherwise."""
    if base.name.startswith("torus") or base.name == "circle":
        coords = np.ones(base.dim)
    elif base.name.startswith("sphere"):
        coords = np.r_[0.5, np.zeros(base.dim - 1)]
    else:
        coords = np.zeros(base.dim)
    return PointRef(base.charts[0].chart_id, coords)


def _base_ensemble(section, x0, n_paths, dt, horizon, seed, ensemble):
    if ensemble is not None:
        return ensemble
    if x0 is None:
        x0 = default_start(section.bundle.base)
    return simulate_brownian(section.bundle.base, x0, horizon, dt, n_paths, seed)


def vertical_martingale_test(section: SectionModel, x0: PointRef | None = None, n_paths: int = 1000,
                             dt: float = 1e-3, horizon: float = 1.0, seed: int = 0,
                             resolution: float = 0.02, z: float = 3.0,
                             ensemble: PathEnsemble | None = None) -> MartingaleReport:
    """Is ``σ(B)`` a vertical martingale?

    For each vertical form ``Dν^α`` the ``∇^E``-Itô integral along ``σ(B)``
    is tested for drift.  ``ensemble`` (base Brownian paths) overrides the
    simulation parameters so that different tests can share paths.
    """
    ens = _base_ensemble(section, x0, n_paths, dt, horizon, seed, ensemble)
    X = section.along(ens)
    b = section.bundle
    integ = ito_integrals(b.vertical_forms, X, b.total.christoffel)
    verdicts = [drift_test(integ[a], resolution, z=z) for a in range(b.k)]
    return MartingaleReport(verdicts, combine_decisions(verdicts), integ, {"test": "vertical"})


def horizontal_lift_values(section: SectionModel, ens: PathEnsemble, phi0: float = 0.0):
    lifted = horizontal_lift_path(section.bundle.principal, ens, phi0)
    return lifted, EquivariantLift(section).along(lifted)


def horizontally_harmonic_test(section: SectionModel, x0: PointRef | None = None,
                               n_paths: int = 1000, dt: float = 1e-3, horizon: float = 1.0,
                               seed: int = 0, resolution: float = 0.02, z: float = 3.0,
                               phi0: float = 0.0, ensemble: PathEnsemble | None = None
                               ) -> MartingaleReport:
    """Is ``F_σ(B^h)`` a martingale in the flat fiber, ``B^h`` the horizontal lift?"""
    ens = _base_ensemble(section, x0, n_paths, dt, horizon, seed, ensemble)
    _, F = horizontal_lift_values(section, ens, phi0)
    vals = np.moveaxis(F, -1, 0)
    verdicts = [drift_test(RealPath(ens.times, v), resolution, z=z) for v in vals]
    return MartingaleReport(verdicts, combine_decisions(verdicts), RealPath(ens.times, vals),
                            {"test": "horizontal"})


def prop31i_check(bundle: AssociatedBundleModel, Y: PathEnsemble, xi: np.ndarray,
                  resolution: float = 0.02, z: float = 3.0):
    """Compare two verdicts for ``X = μ(Y, ξ)`` with ``Y`` horizontal:
    vertical martingale property of ``X`` and martingale property of ``ξ``.

    Returns ``(vertical_report, fiber_report)``.
    """
    xi = np.asarray(xi, dtype=float)
    vert = []
    for alpha in range(bundle.k):
        lhs, _ = lemma32_check(bundle, Y, xi, alpha)
        vert.append(drift_test(lhs, resolution, z=z))
    fib = [drift_test(RealPath(Y.times, xi[..., a]), resolution, z=z) for a in range(bundle.k)]
    return (MartingaleReport(vert, combine_decisions(vert), meta={"test": "vertical"}),
            MartingaleReport(fib, combine_decisions(fib), meta={"test": "fiber"}))


# -- deterministic diagnostics --------------------------------------------------------

def parallelism_check(section: SectionModel, points: list[PointRef], fd_step: float = 1e-3) -> float:
    """Largest ``|∇_{e_a} σ|`` over g-orthonormal bases at the sample points."""
    b = section.bundle
    best = 0.0
    for p in points:
        c = b.base.index(p.chart_id)
        x = p.coords
        e, _ = _trace_basis(b.base, c, x)
        s0 = section(c, x)
        Q = b.fiber_metric(c, x)
        forms = b.vertical_forms(c, s0)
        for a in range(b.n):
            ea = e[:, a]
            ds = (section(c, x + fd_step * ea) - section(c, x - fd_step * ea)) / (2 * fd_step)
            v = forms @ ds
            best = max(best, float(np.sqrt(v @ Q @ v)))
    return best


def component_gradient(section: SectionModel, points: list[PointRef], fd_step: float = 1e-3) -> float:
    """Largest coordinate derivative ``|∂_i ν^α|`` of the fiber components."""
    b = section.bundle
    best = 0.0
    for p in points:
        c = b.base.index(p.chart_id)
        for i in range(b.n):
            e = np.zeros(b.n)
            e[i] = fd_step
            d = (section.field(c, p.coords + e) - section.field(c, p.coords - e)) / (2 * fd_step)
            best = max(best, float(np.max(np.abs(d))))
    return best


def tension_drift_oracle(section: SectionModel, ensemble: PathEnsemble, fd_step: float = 1e-3,
                         every: int = 10):
    """Drift per unit time of each vertical-form integral predicted by the tension.

    Averages ``½ Dν^α(τ_σ)`` along the base paths (every ``every``-th node,
    trapezoid rule in time).  Returns ``(drift, std_error)`` arrays of length
    ``k``; the error is the Monte Carlo standard error over paths.
    """
    b = section.bundle
    coords = ensemble.coords[:, ::every]
    charts = ensemble.charts[:, ::every]
    times = ensemble.times[::every]
    P, m, d = coords.shape
    vert = np.empty((P, m, b.k))
    for c in np.unique(charts):
        sel = charts == c
        vert[sel] = vertical_tension_batch(section, int(c), coords[sel], fd_step)[1]
    span = times[-1] - times[0]
    per_path = 0.5 * _trapezoid(vert, times, axis=1) / span
    se = np.std(per_path, axis=0, ddof=1) / np.sqrt(P)
    return per_path.mean(0), se
