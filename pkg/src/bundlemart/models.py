"""Concrete bundles, connections on TM and test sections."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bundles import (AssociatedBundleModel, PrincipalBundleModel, _fd_derivative,
                      frame_connection, frame_shift, horizontal_lift_path)
from .groups import MatrixGroup
from .manifolds import flat_space, sphere, torus, wrapped_difference
from .coupling import ScanReport, default_start, liouville_experiment, sample_base_points
from .geometry import PointRef
from .paths import MARTINGALE, simulate_brownian
from .sections import (MartingaleReport, SectionModel, component_gradient, tension_drift_oracle,
                       vertical_martingale_test)
from .trajectory import PathEnsemble, SamplePath

TM_CONNECTIONS = ("complete_lift", "horizontal_lift", "sasaki")


# -- frame bundles -----------------------------------------------------------------

def _sphere_frame(radius):
    def frame(c, x):
        lam = 2.0 * radius / (1.0 + np.sum(x * x, axis=-1))
        ref = np.eye(2) if c == 0 else np.diag([1.0, -1.0])
        return ref / lam[..., None, None]
    return frame


def _sphere_frame_omega(c, x):
    r2 = 1.0 + np.sum(x * x, axis=-1, keepdims=True)
    w = np.stack([2.0 * x[..., 1], -2.0 * x[..., 0]], axis=-1) / r2
    return w if c == 0 else -w


def _sphere_frame_shift(a, b, x):
    alpha = np.arctan2(x[..., 1], x[..., 0])
    d = np.pi - 2.0 * alpha if a == 0 else np.pi + 2.0 * alpha
    return np.arctan2(np.sin(d), np.cos(d))


def frame_bundle(base_name: str = "sphere2", gauge: float = 0.5, generic: bool = False):
    """Oriented orthonormal frame bundle of ``sphere2`` or ``torus2``.

    On the sphere the reference frames are ``I/λ`` (chart south) and
    ``diag(1, -1)/λ`` (chart north) with ``λ`` the conformal factor.  On the
    torus the reference frame is the rotation by ``ψ = gauge·sin x¹ cos x²``,
    so horizontal lifts are not trivial in coordinates.  ``generic=True``
    derives ``ω`` and the angle shifts from the frames numerically instead of
    the closed forms.
    """
    so2 = MatrixGroup("SO2")
    if base_name == "sphere2":
        base = sphere(2)
        frame = _sphere_frame(1.0)
        omega, shift = _sphere_frame_omega, _sphere_frame_shift
    elif base_name == "torus2":
        base = torus(2)
        a = float(gauge)

        def frame(c, x):
            psi = a * np.sin(x[..., 0]) * np.cos(x[..., 1])
            co, si = np.cos(psi), np.sin(psi)
            return np.stack([np.stack([co, -si], -1), np.stack([si, co], -1)], -2)

        def omega(c, x):
            return a * np.stack([np.cos(x[..., 0]) * np.cos(x[..., 1]),
                                 -np.sin(x[..., 0]) * np.sin(x[..., 1])], axis=-1)

        def shift(a_, b_, x):
            return np.zeros(x.shape[:-1])
    else:
        raise ValueError(f"no frame bundle model for {base_name!r}")
    if generic:
        omega, shift = frame_connection(base, frame), frame_shift(base, frame)
    return PrincipalBundleModel(f"frames({base.name})", base, so2, omega, shift, frame=frame)


# -- connections on TM in natural coordinates ----------------------------------------

def _christoffel_derivative(base, c, x, h=1e-4):
    """``dG[..., l, i, j, k] = ∂_l Γ^i_{jk}``."""
    return _fd_derivative(lambda cc, xx: base.christoffel(cc, xx).reshape(xx.shape[:-1] + (-1, 1)),
                          c, x, h).reshape(x.shape[:-1] + (base.dim,) * 4)


def riemann_tensor(base, c, x) -> np.ndarray:
    """``R[..., k, j, i, h] = R_{kji}^h`` with ``R(∂_k, ∂_j)∂_i = R_{kji}^h ∂_h``."""
    G = base.christoffel(c, x)
    dG = _christoffel_derivative(base, c, x)
    # ∂_k Γ^h_{ji} − ∂_j Γ^h_{ki} + Γ^h_{km} Γ^m_{ji} − Γ^h_{jm} Γ^m_{ki}
    t1 = np.einsum("...khji->...kjih", dG)
    t2 = np.einsum("...jhki->...kjih", dG)
    t3 = np.einsum("...hkm,...mji->...kjih", G, G)
    t4 = np.einsum("...hjm,...mki->...kjih", G, G)
    return t1 - t2 + t3 - t4


def build_tm_connection(base, kind: str) -> Callable:
    """Christoffel symbols on TM in natural coordinates ``(x, y)``.

    The connection is given on the adapted frame ``E_i = ∂_i^H``,
    ``E_ī = ∂_i^V`` by

    * ``horizontal_lift``: ``∇_{X^H}Y^H = (∇_X Y)^H``, ``∇_{X^H}Y^V = (∇_X Y)^V``,
      vertical derivatives vanish;
    * ``complete_lift``: as above plus ``(R(y, X)Y)^V`` in ``∇_{X^H}Y^H``;
    * ``sasaki``: the Levi-Civita connection of the Sasaki metric,
      ``∇_{X^H}Y^H = (∇_X Y)^H − ½(R(X, Y)y)^V``,
      ``∇_{X^H}Y^V = (∇_X Y)^V + ½(R(y, Y)X)^H``,
      ``∇_{X^V}Y^H = ½(R(y, X)Y)^H``, ``∇_{X^V}Y^V = 0``,

    and converted to the natural frame.
    """
    if kind not in TM_CONNECTIONS:
        raise ValueError(f"unknown TM connection {kind!r}; choose from {TM_CONNECTIONS}")
    n = base.dim

    def christoffel(c, z):
        z = np.asarray(z, dtype=float)
        x, y = z[..., :n], z[..., n:]
        G = base.christoffel(c, x)
        dG = _christoffel_derivative(base, c, x)
        R = riemann_tensor(base, c, x)
        shape = z.shape[:-1]
        # adapted-frame table T[..., C, D, F] = component F of ∇_{E_C} E_D
        T = np.zeros(shape + (2 * n,) * 3)
        T[..., :n, :n, :n] = np.swapaxes(np.swapaxes(G, -3, -2), -2, -1)  # Γ^f_{cd} at [c, d, f]
        T[..., :n, n:, n:] = T[..., :n, :n, :n]
        Ryc = np.einsum("...a,...acdf->...cdf", y, R)  # R(y, ∂_c)∂_d
        if kind == "complete_lift":
            T[..., :n, :n, n:] = Ryc
        elif kind == "sasaki":
            T[..., :n, :n, n:] = -0.5 * np.einsum("...cdaf,...a->...cdf", R, y)
            T[..., :n, n:, :n] = 0.5 * np.swapaxes(Ryc, -3, -2)  # ½ R(y, ∂_d)∂_c
            T[..., n:, :n, :n] = 0.5 * Ryc
        # natural basis ∂_A = Φ[A, D] E_D, with Φ[i, k̄] = y^a Γ^k_{ai}
        C = np.einsum("...a,...kai->...ik", y, G)
        Phi = np.broadcast_to(np.eye(2 * n), shape + (2 * n, 2 * n)).copy()
        Phi[..., :n, n:] = C
        Phinv = Phi.copy()
        Phinv[..., :n, n:] = -C
        dPhi = np.zeros(shape + (2 * n,) * 3)  # dPhi[..., A, B, D] = ∂_A Φ[B, D]
        dPhi[..., :n, :n, n:] = np.einsum("...a,...jkai->...jik", y, dG)
        dPhi[..., n:, :n, n:] = np.einsum("...kji->...jik", G)
        U = np.matmul(Phi[..., None, :, :], T)  # U[C, B, F] = Φ[B, E] T[C, E, F]
        m = 2 * n
        inner = dPhi + (Phi @ U.reshape(shape + (m, m * m))).reshape(shape + (m, m, m))
        gam = (inner.reshape(shape + (m * m, m)) @ Phinv).reshape(shape + (m, m, m))
        return np.moveaxis(gam, -1, -3)

    return christoffel


def tangent_bundle(base_name: str = "sphere2", connection: str = "sasaki", gauge: float = 0.5):
    """TM as the bundle associated with the frame bundle, in natural coordinates."""
    P = frame_bundle(base_name, gauge)
    conn = build_tm_connection(P.base, connection)
    return AssociatedBundleModel(f"T({P.base.name})/{connection}", P, 2, fiber_frame=P.frame,
                                 connection=conn, connection_name=connection)


def sasaki_metric(base, c, z) -> np.ndarray:
    """Sasaki metric of TM in natural coordinates."""
    n = base.dim
    x, y = z[..., :n], z[..., n:]
    g = base.metric(c, x)
    C = np.einsum("...a,...kai->...ki", y, base.christoffel(c, x))  # (K_i y)^k = -Γ^k_{ia}y^a
    gC = g @ C
    out = np.empty(z.shape[:-1] + (2 * n, 2 * n))
    out[..., :n, :n] = g + np.swapaxes(C, -1, -2) @ gC
    out[..., :n, n:] = np.swapaxes(gC, -1, -2)
    out[..., n:, :n] = gC
    out[..., n:, n:] = g
    return out


# -- Hopf bundle -----------------------------------------------------------------------

def _hopf_omega(c, x):
    r2 = 1.0 + np.sum(x * x, axis=-1, keepdims=True)
    w = np.stack([-x[..., 1], x[..., 0]], axis=-1) / r2
    return w if c == 0 else -w


def _hopf_shift(a, b, x):
    ang = np.arctan2(x[..., 1], x[..., 0])
    return ang if a == 0 else -ang


def _hopf_ambient(c, x, phi):
    x = np.asarray(x, dtype=float)
    w = x[..., 0] + 1j * x[..., 1]
    rho = np.sqrt(1.0 + np.abs(w) ** 2)
    e = np.exp(1j * np.asarray(phi))
    if c == 0:
        z1, z2 = e / rho, w * e / rho
    else:
        z1, z2 = np.conj(w) * e / rho, e / rho
    return np.stack([z1.real, z1.imag, z2.real, z2.imag], axis=-1)


def hopf_map(u) -> np.ndarray:
    """``S³ -> S²(½)``, ``(z1, z2) -> (z2 conj(z1), (|z2|² − |z1|²)/2)``.

    Uses the same orientation as the stereographic charts of the base, so
    ``(1, 0)`` maps to the south pole.
    """
    u = np.asarray(u, dtype=float)
    z1 = u[..., 0] + 1j * u[..., 1]
    z2 = u[..., 2] + 1j * u[..., 3]
    p = z2 * np.conj(z1)
    return np.stack([p.real, p.imag, 0.5 * (np.abs(z2) ** 2 - np.abs(z1) ** 2)], axis=-1)


def hopf_bundle():
    """``S³ -> S²(½)`` as a U(1)-bundle with the Kaluza-Klein (round) metric."""
    base = sphere(2, radius=0.5)
    return PrincipalBundleModel("hopf", base, MatrixGroup("U1"), _hopf_omega, _hopf_shift,
                                ambient=_hopf_ambient)


def hopf_associated(m: int = 1):
    """``S³ ×_{U(1)} ℂ^m`` with ``g·ξ = gξ``; fiber ℂ^m ≅ ℝ^{2m}."""
    if m not in (1, 2):
        raise ValueError("hopf_associated supports m = 1 or 2")
    return AssociatedBundleModel(f"hopf-c{m}", hopf_bundle(), 2 * m)


def fixed_points(group_element: complex, m: int = 1, tol: float = 1e-12) -> np.ndarray:
    """Basis (columns) of the fixed space of ``ξ -> gξ`` on ℂ^m ≅ ℝ^{2m}."""
    g = complex(group_element)
    if abs(abs(g) - 1.0) > 1e-12:
        raise ValueError("group element must have unit modulus")
    rot = np.array([[g.real, -g.imag], [g.imag, g.real]])
    A = np.kron(np.eye(m), rot) - np.eye(2 * m)
    _, s, vt = np.linalg.svd(A)
    return vt[s <= tol].T


def trivial_bundle(base_name: str = "torus2", fiber_dim: int = 2):
    """Product bundle ``M × ℝ^k`` with the flat connection."""
    base = torus(2) if base_name == "torus2" else sphere(2) if base_name == "sphere2" else flat_space(2)
    P = PrincipalBundleModel(f"trivial({base.name})", base, MatrixGroup("SO2"),
                             lambda c, x: np.zeros(x.shape), lambda a, b, x: np.zeros(x.shape[:-1]))
    return AssociatedBundleModel(f"trivial({base.name})x{fiber_dim}", P, fiber_dim)


# -- sections --------------------------------------------------------------------------

def zero_section(bundle) -> SectionModel:
    return SectionModel("zero", bundle, lambda c, x: np.zeros(np.shape(x)[:-1] + (bundle.k,)))


def constant_section(bundle, value) -> SectionModel:
    """Section with constant natural components (meaningful on the torus)."""
    v = np.asarray(value, dtype=float)
    return SectionModel(f"constant{tuple(v.tolist())}", bundle,
                        lambda c, x: np.broadcast_to(v, np.shape(x)[:-1] + v.shape).copy())


def torus_field(bundle, which: str) -> SectionModel:
    """Test fields on the torus: ``sin`` = sin x¹ ∂₁, ``cos-sum`` = cos(x¹+x²) ∂₂,
    ``sin-cos`` = sin x¹ cos x² ∂₁."""

    def fn(c, x):
        out = np.zeros(np.shape(x)[:-1] + (2,))
        if which == "sin":
            out[..., 0] = np.sin(x[..., 0])
        elif which == "cos-sum":
            out[..., 1] = np.cos(x[..., 0] + x[..., 1])
        elif which == "sin-cos":
            out[..., 0] = np.sin(x[..., 0]) * np.cos(x[..., 1])
        else:
            raise ValueError(f"unknown torus field {which!r}")
        return out

    return SectionModel(which, bundle, fn)


def height_gradient(bundle, scale: float = 1.0) -> SectionModel:
    """``scale · grad z`` on the unit sphere, ``z`` the last ambient coordinate.

    In the south chart ``grad z = x``; in the north chart it is ``-y``.
    """
    s = float(scale)
    return SectionModel(f"grad-height*{s:g}", bundle,
                        lambda c, x: s * np.asarray(x, dtype=float) * (1.0 if c == 0 else -1.0))


def hopf_section(bundle, xi) -> SectionModel:
    """Section whose equivariant lift is ``F(z1, z2) = conj(z1) ξ``.

    Over the chart south the local representative is ``ξ/√(1+|w|²)``; over
    the chart north it is ``y ξ/√(1+|y|²)`` (complex product in each ℂ factor).
    For ``ξ = 0`` this is the zero section, the only section with constant lift.
    """
    xi = np.asarray(xi, dtype=float)
    k = bundle.k
    if xi.shape != (k,):
        raise ValueError(f"ξ must have {k} real components")
    xc = xi[0::2] + 1j * xi[1::2]

    def fn(c, x):
        x = np.asarray(x, dtype=float)
        w = x[..., 0] + 1j * x[..., 1]
        rho = np.sqrt(1.0 + np.abs(w) ** 2)
        fac = (1.0 / rho) if c == 0 else (w / rho)
        vals = fac[..., None] * xc
        out = np.empty(x.shape[:-1] + (k,))
        out[..., 0::2], out[..., 1::2] = vals.real, vals.imag
        return out

    return SectionModel(f"hopf|xi|={np.linalg.norm(xi):g}", bundle, fn)


# -- registry ---------------------------------------------------------------------------

def _registry():
    return {
        "flat-r2": ("Euclidean plane", lambda: flat_space(2)),
        "sphere2": ("unit 2-sphere, two stereographic charts", lambda: sphere(2)),
        "sphere3": ("unit 3-sphere, two stereographic charts", lambda: sphere(3)),
        "torus2": ("flat torus (R/2πZ)^2", lambda: torus(2)),
        "circle": ("unit circle U(1)", lambda: torus(1)),
        "frames-sphere2": ("SO(2) frame bundle of the 2-sphere", lambda: frame_bundle("sphere2")),
        "frames-torus2": ("SO(2) frame bundle of the torus, rotated gauge",
                          lambda: frame_bundle("torus2")),
        "tm-sphere2-sasaki": ("TM of the 2-sphere, Sasaki connection",
                              lambda: tangent_bundle("sphere2", "sasaki")),
        "tm-sphere2-complete": ("TM of the 2-sphere, complete lift",
                                lambda: tangent_bundle("sphere2", "complete_lift")),
        "tm-sphere2-horizontal": ("TM of the 2-sphere, horizontal lift",
                                  lambda: tangent_bundle("sphere2", "horizontal_lift")),
        "tm-torus2-complete": ("TM of the torus, complete lift",
                               lambda: tangent_bundle("torus2", "complete_lift")),
        "tm-torus2-horizontal": ("TM of the torus, horizontal lift",
                                 lambda: tangent_bundle("torus2", "horizontal_lift")),
        "tm-torus2-sasaki": ("TM of the torus, Sasaki connection",
                             lambda: tangent_bundle("torus2", "sasaki")),
        "hopf": ("Hopf bundle S^3 -> S^2(1/2), Kaluza-Klein metric", hopf_bundle),
        "hopf-c1": ("Hopf bundle associated with C", lambda: hopf_associated(1)),
        "hopf-c2": ("Hopf bundle associated with C^2", lambda: hopf_associated(2)),
        "trivial-torus2": ("product bundle torus x R^2", lambda: trivial_bundle("torus2")),
    }


MODELS = _registry()


def model_names() -> list[str]:
    return sorted(MODELS)


def load_model(name: str):
    try:
        return MODELS[name][1]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known models: {', '.join(model_names())}") from None


def manifest() -> str:
    """JSON listing of the registered models."""
    return json.dumps({"models": [{"name": k, "description": MODELS[k][0]} for k in model_names()]},
                      indent=2, sort_keys=True)


# -- holonomy ---------------------------------------------------------------------------

def spherical_triangle_area(a, b, c) -> float:
    """Area of the geodesic triangle with unit vertices ``a, b, c`` on the unit
    sphere (solid angle, Van Oosterom-Strackee)."""
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    num = abs(float(np.dot(a, np.cross(b, c))))
    den = 1.0 + float(np.dot(a, b) + np.dot(b, c) + np.dot(c, a))
    return 2.0 * float(np.arctan2(num, den))


def geodesic_polygon(vertices, step: float = 1e-4, manifold=None) -> SamplePath:
    """Closed piecewise great-circle curve through unit vectors ``vertices`` on
    the unit sphere, sampled at arc-length ``step`` in the south chart."""
    man = manifold if manifold is not None else sphere(2)
    vs = [np.asarray(v, dtype=float) / np.linalg.norm(v) for v in vertices]
    pts = []
    for a, b in zip(vs, vs[1:] + vs[:1]):
        ang = float(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0)))
        n = max(2, int(np.ceil(ang / step)))
        s = np.linspace(0.0, 1.0, n + 1)[:-1, None]
        pts.append((np.sin((1 - s) * ang) * a + np.sin(s * ang) * b) / np.sin(ang))
    pts.append(vs[0][None])
    u = np.concatenate(pts)
    if np.any(u[:, 2] > 0.5):
        raise ValueError("polygon must stay in the southern chart (z ≤ 0.5)")
    x = u[:, :2] / (1.0 - u[:, 2:3])
    return SamplePath(man, np.arange(len(x)) * step, x, np.zeros(len(x), dtype=np.int64))


def triangle_holonomy(vertices, step: float = 1e-4, bundle=None) -> float:
    """Fiber angle change of the horizontal lift of a closed geodesic triangle
    on the frame bundle of the unit sphere, wrapped to ``(-π, π]``.

    The south chart reverses the outward orientation, so a loop that is
    counterclockwise seen from outside gives ``-area``.
    """
    P = bundle if bundle is not None else frame_bundle("sphere2")
    curve = geodesic_polygon(vertices, step, P.base)
    lifted = horizontal_lift_path(P, curve, 0.0)
    return float(wrapped_difference(lifted.coords[-1, -1] - lifted.coords[0, -1]))


# -- experiments ---------------------------------------------------------------------

@dataclass
class ConstancyReport:
    """Martingale verdict next to the component-constancy verdict on TM."""

    section: str
    martingale: MartingaleReport
    gradient_max: float
    constant: bool
    agree: bool

    def to_dict(self) -> dict:
        return {"section": self.section, "martingale": self.martingale.to_dict(),
                "gradient_max": self.gradient_max, "constant": self.constant,
                "agree": self.agree}


def prop51_test(tm_model: AssociatedBundleModel, section: SectionModel,
                ensemble: PathEnsemble | None = None, points=None, fd_step: float = 1e-3,
                constancy_tol: float = 1e-6, seed: int = 0, **test_kw) -> ConstancyReport:
    """On TM with the complete or horizontal lift, compare ``vertical_martingale_test``
    with the check that the natural fiber components of ``σ`` are constant
    (largest finite-difference gradient over ``points`` below ``constancy_tol``)."""
    if tm_model.connection_name not in ("complete_lift", "horizontal_lift"):
        raise ValueError("prop51_test needs the complete or the horizontal lift")
    rep = vertical_martingale_test(section, ensemble=ensemble, seed=seed, **test_kw)
    if points is None:
        points = sample_base_points(tm_model.base, 20, seed)
    grad = component_gradient(section, points, fd_step)
    constant = grad <= constancy_tol
    return ConstancyReport(section.name, rep, grad, constant,
                        (rep.decision == MARTINGALE) == constant)


def _attach_oracles(report: ScanReport, family, ensemble, fd_step, z95=1.959963984540054):
    """Add the tension drift prediction to every scan entry.

    ``matches`` holds when the estimate lies within two 95% CI widths of the
    prediction, the width taken from the combined standard error.
    """
    for entry, section in zip(report.entries, family):
        pred, pse = tension_drift_oracle(section, ensemble, fd_step)
        est = np.array([v["drift_estimate"] for v in entry["verdicts"]])
        se = np.array([v["std_error"] for v in entry["verdicts"]])
        width = 2 * z95 * np.sqrt(se ** 2 + pse ** 2)
        entry["oracle"] = {"predicted_drift": pred.tolist(), "predicted_se": pse.tolist(),
                           "ci_width": width.tolist(),
                           "matches": bool(np.all(np.abs(est - pred) <= 2 * width))}


SASAKI_SCALES = (-1.0, -0.5, 0.0, 0.5, 1.0)


def sasaki_experiment(base: str = "sphere2", family=SASAKI_SCALES, budget: int = 1000,
                      dt: float = 1e-3, horizon: float = 1.0, seed: int = 0,
                      resolution: float = 0.02, fd_step: float = 1e-3,
                      x0: PointRef | None = None, coupled_pairs: int = 0) -> ScanReport:
    """Liouville scan on TM with the Sasaki connection.

    ``family`` holds scales ``c`` of the height gradient (or ready sections);
    ``budget`` is the number of base paths shared by all members.  Each entry
    carries the finite-difference tension prediction of its drift.
    """
    tm = tangent_bundle(base, "sasaki")
    sections = [s if isinstance(s, SectionModel) else height_gradient(tm, s) for s in family]
    sections = [s if s.bundle is tm else SectionModel(s.name, tm, s.field) for s in sections]
    if x0 is None:
        x0 = default_start(tm.base)
    ens = simulate_brownian(tm.base, x0, horizon, dt, budget, seed)
    rep = liouville_experiment(tm, sections, horizon, dt, budget, seed, x0=x0,
                               resolution=resolution, coupled_pairs=coupled_pairs)
    _attach_oracles(rep, sections, ens, fd_step)
    rep.meta["experiment"] = "sasaki"
    return rep


HOPF_NORMS = (0.0, 0.5)


def hopf_experiment(m: int = 1, family=HOPF_NORMS, budget: int = 1000, dt: float = 1e-3,
                    horizon: float = 1.0, seed: int = 0, resolution: float = 0.02,
                    fd_step: float = 1e-3, x0: PointRef | None = None,
                    group_sample: int = 16) -> ScanReport:
    """Liouville scan on the Hopf bundle associated with ℂ^m.

    ``family`` holds norms ``|ξ|`` (ξ along the first real axis) or ready
    sections.  The report also records the fixed space of ``ξ -> gξ`` for
    ``g = i`` and for ``group_sample`` further nontrivial elements.
    """
    E = hopf_associated(m)
    sections = []
    for s in family:
        if isinstance(s, SectionModel):
            sections.append(SectionModel(s.name, E, s.field))
        else:
            xi = np.zeros(2 * m)
            xi[0] = s
            sections.append(hopf_section(E, xi))
    if x0 is None:
        x0 = default_start(E.base)
    ens = simulate_brownian(E.base, x0, horizon, dt, budget, seed)
    rep = liouville_experiment(E, sections, horizon, dt, budget, seed, x0=x0,
                               resolution=resolution)
    _attach_oracles(rep, sections, ens, fd_step)
    angles = np.linspace(0.0, 2 * np.pi, group_sample + 2)[1:-1]
    dims = [fixed_points(np.exp(1j * a), m).shape[1] for a in angles]
    quarter = fixed_points(1j, m)
    rep.meta.update({"experiment": "hopf", "m": m,
                     "fixed_space_dim_g_i": int(quarter.shape[1]),
                     "fixed_space_dims_sample": dims,
                     "origin_unique_fixed_point": bool(quarter.shape[1] == 0 and max(dims) == 0)})
    return rep
