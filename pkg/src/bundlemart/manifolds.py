"""Concrete base manifolds: Euclidean space, round spheres, flat tori, the circle."""
from __future__ import annotations

import numpy as np

from .geometry import Chart, ChartedManifold, PointRef, conformal_christoffel

TWO_PI = 2.0 * np.pi


def flat_space(dim: int = 2) -> ChartedManifold:
    chart = Chart("cartesian", dim)

    def metric(c, x):
        return np.broadcast_to(np.eye(dim), x.shape[:-1] + (dim, dim)).copy()

    def christoffel(c, x):
        return np.zeros(x.shape[:-1] + (dim, dim, dim))

    def distance(p, q):
        return float(np.linalg.norm(q.coords - p.coords))

    return ChartedManifold(f"flat-r{dim}", [chart], metric, christoffel,
                           embedding=lambda c, x: np.array(x, dtype=float),
                           distance=distance, kernel="flat", params={"dim": dim})


def _inversion(x):
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    return x / r2


def _inversion_jac(x):
    d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)[..., None, None]
    return (r2 * np.eye(d) - 2.0 * x[..., :, None] * x[..., None, :]) / r2 ** 2


def sphere(dim: int = 2, radius: float = 1.0, safe_radius: float = 1.5,
           domain_radius: float = 1e3) -> ChartedManifold:
    """Round sphere of the given radius with two stereographic charts.

    Chart ``south`` is centred at the south pole (projection from the north
    pole) and ``north`` at the north pole; they are related by ``x -> x/|x|²``.
    The metric is ``(2R / (1 + |x|²))² δ`` in both.
    """
    R = float(radius)

    def dom(x):
        return np.sum(x * x, axis=-1) < domain_radius ** 2

    def safe(x):
        return np.sum(x * x, axis=-1) < safe_radius ** 2

    south = Chart("south", dim, dom, safe, {"north": _inversion}, {"north": _inversion_jac})
    north = Chart("north", dim, dom, safe, {"south": _inversion}, {"south": _inversion_jac})

    def metric(c, x):
        lam = 2.0 * R / (1.0 + np.sum(x * x, axis=-1))
        return lam[..., None, None] ** 2 * np.eye(dim)

    def christoffel(c, x):
        return conformal_christoffel(-2.0 * x / (1.0 + np.sum(x * x, axis=-1, keepdims=True)))

    def embedding(c, x):
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        last = (r2 - 1.0) if c == 0 else (1.0 - r2)
        return R * np.concatenate([2.0 * x, last], axis=-1) / (1.0 + r2)

    man = None

    def distance(p, q):
        a = man.embed(p.chart_id, p.coords)
        b = man.embed(q.chart_id, q.coords)
        return float(2.0 * R * np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))

    man = ChartedManifold(f"sphere{dim}" + ("" if R == 1.0 else f"-r{R:g}"), [south, north],
                          metric, christoffel, embedding=embedding, distance=distance,
                          kernel="sphere2" if dim == 2 else None,
                          params={"dim": dim, "radius": R, "safe_radius": safe_radius})
    return man


def sphere_chart_point(man: ChartedManifold, ambient) -> PointRef:
    """Stereographic coordinates of an ambient point on the sphere ``man``."""
    R = man.params["radius"]
    u = np.asarray(ambient, dtype=float) / R
    u = u / np.linalg.norm(u)
    if u[-1] <= 0:
        return PointRef("south", u[:-1] / (1.0 - u[-1]))
    return PointRef("north", u[:-1] / (1.0 + u[-1]))


def colatitude_point(man: ChartedManifold, theta: float) -> PointRef:
    """Point at colatitude ``theta`` from the north pole, on the first axis."""
    d = man.dim
    amb = np.zeros(d + 1)
    amb[0] = np.sin(theta)
    amb[-1] = np.cos(theta)
    return sphere_chart_point(man, man.params["radius"] * amb)


def _wrap(x):
    return np.mod(x, TWO_PI)


def torus(dim: int = 2) -> ChartedManifold:
    """Flat torus ``(ℝ/2πℤ)^dim``.

    Chart ``angle`` uses covering coordinates on all of ℝ^dim; chart
    ``wrapped`` is the periodic fundamental domain ``[0, 2π)^dim``.
    """

    def in_box(x):
        return np.all((x >= 0.0) & (x < TWO_PI), axis=-1)

    angle = Chart("angle", dim, transitions={"wrapped": _wrap})
    wrapped = Chart("wrapped", dim, in_box, in_box, {"angle": lambda x: np.array(x, dtype=float)})

    def metric(c, x):
        return np.broadcast_to(np.eye(dim), x.shape[:-1] + (dim, dim)).copy()

    def christoffel(c, x):
        return np.zeros(x.shape[:-1] + (dim, dim, dim))

    def distance(p, q):
        return float(np.linalg.norm(wrapped_difference(q.coords - p.coords)))

    def embedding(c, x):
        return np.concatenate([np.cos(x), np.sin(x)], axis=-1)

    name = "circle" if dim == 1 else f"torus{dim}"
    return ChartedManifold(name, [angle, wrapped], metric, christoffel, embedding=embedding,
                           distance=distance, kernel="flat", params={"dim": dim})


def circle() -> ChartedManifold:
    """The unit circle, viewed as U(1) with its bi-invariant metric."""
    return torus(1)


def wrapped_difference(delta):
    """Representative of a coordinate difference in ``[-π, π)``."""
    return np.mod(np.asarray(delta, dtype=float) + np.pi, TWO_PI) - np.pi
