"""Matrix Lie groups with closed-form exponential and logarithm.

Elements are stored as matrices: U(1) as 1×1 complex, SO(2)/O(2) as 2×2 and
SO(3) as 3×3 real.  The Lie-algebra inner product is normalised so that the
standard generator of each one-parameter subgroup has unit length.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_J = np.array([[0.0, -1.0], [1.0, 0.0]])


def _hat3(w):
    w = np.asarray(w, dtype=float)
    z = np.zeros(w.shape[:-1])
    return np.stack([np.stack([z, -w[..., 2], w[..., 1]], -1),
                     np.stack([w[..., 2], z, -w[..., 0]], -1),
                     np.stack([-w[..., 1], w[..., 0], z], -1)], -2)


def _vee3(a):
    return np.stack([a[..., 2, 1], a[..., 0, 2], a[..., 1, 0]], -1)


@dataclass(frozen=True)
class MatrixGroup:
    name: str

    def __post_init__(self):
        if self.name not in ("U1", "SO2", "O2", "SO3"):
            raise ValueError(f"unsupported group {self.name!r}")

    @property
    def dim(self) -> int:
        return 3 if self.name == "SO3" else 1

    @property
    def abelian(self) -> bool:
        return self.name != "SO3"

    def identity(self):
        return {"U1": np.ones((1, 1), complex), "SO3": np.eye(3)}.get(self.name, np.eye(2))

    # Lie algebra elements are given by coordinates in ℝ^dim
    def hat(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.name == "U1":
            return 1j * xi[..., None]
        if self.name in ("SO2", "O2"):
            return xi[..., 0, None, None] * _J
        return _hat3(xi)

    def vee(self, a):
        a = np.asarray(a)
        if self.name == "U1":
            return np.imag(a[..., 0, :])
        if self.name in ("SO2", "O2"):
            return np.real(a[..., 1, 0])[..., None]
        return _vee3(a)

    def inner(self, xi, eta) -> np.ndarray:
        """Bi-invariant inner product ``h`` in algebra coordinates."""
        return np.sum(np.asarray(xi, dtype=float) * np.asarray(eta, dtype=float), axis=-1)

    def inner_matrix(self, a, b) -> np.ndarray:
        """``h`` on matrix representatives: ``Re tr(a^H b)`` scaled to match ``inner``."""
        scale = 1.0 if self.name == "U1" else 0.5
        return scale * np.real(np.einsum("...ij,...ij->...", np.conj(a), b))

    def exp(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.name == "U1":
            return np.exp(1j * xi[..., 0])[..., None, None]
        if self.name in ("SO2", "O2"):
            t = xi[..., 0]
            c, s = np.cos(t), np.sin(t)
            return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        th = np.linalg.norm(xi, axis=-1)[..., None, None]
        k = _hat3(xi)
        small = th < 1e-8
        safe = np.where(small, 1.0, th)
        a = np.where(small, 1.0 - th ** 2 / 6, np.sin(safe) / safe)
        b = np.where(small, 0.5 - th ** 2 / 24, (1 - np.cos(safe)) / safe ** 2)
        return np.eye(3) + a * k + b * (k @ k)

    def log(self, g):
        g = np.asarray(g)
        if self.name == "U1":
            return np.angle(g[..., 0, 0])[..., None]
        if self.name in ("SO2", "O2"):
            if np.any(np.linalg.det(np.real(g)) < 0):
                raise ValueError("reflections are not in the image of exp")
            return np.arctan2(g[..., 1, 0], g[..., 0, 0])[..., None]
        cos = np.clip((np.trace(g, axis1=-2, axis2=-1) - 1) / 2, -1.0, 1.0)
        th = np.arccos(cos)[..., None]
        small = th < 1e-8
        safe = np.where(small, 1.0, np.sin(th))
        fac = np.where(small, 0.5 + th ** 2 / 12, th / (2 * safe))
        w = fac * _vee3(g - np.swapaxes(g, -1, -2))
        near_pi = (th[..., 0] > np.pi - 1e-6).reshape(-1)
        if np.any(near_pi):
            # sin θ vanishes: read the axis off the symmetric part (g + I)/2 = a aᵀ
            flat_g = np.real(g).reshape(-1, 3, 3)
            w = np.array(w, dtype=float).reshape(-1, 3)
            for k in np.flatnonzero(near_pi):
                bmat = (flat_g[k] + np.eye(3)) / 2
                col = int(np.argmax(np.diag(bmat)))
                w[k] = np.arccos(cos.reshape(-1)[k]) * bmat[:, col] / np.sqrt(bmat[col, col])
            w = w.reshape(th.shape[:-1] + (3,))
        return w

    def inverse(self, g):
        g = np.asarray(g)
        return np.conj(np.swapaxes(g, -1, -2))

    def Ad(self, g, xi):
        """Adjoint action on algebra coordinates."""
        if self.abelian:
            if self.name == "O2":
                det = np.sign(np.linalg.det(np.real(g)))
                return np.asarray(xi, dtype=float) * det[..., None]
            return np.asarray(xi, dtype=float)
        return np.einsum("...ij,...j->...i", g, xi)

    def distance(self, a, b) -> np.ndarray:
        """Bi-invariant geodesic distance ``|log(a^{-1} b)|``."""
        rel = self.inverse(a) @ np.asarray(b)
        if self.name == "O2" and np.any(np.linalg.det(np.real(rel)) < 0):
            return np.full(np.shape(rel)[:-2], np.inf)
        xi = self.log(rel)
        return np.sqrt(self.inner(xi, xi))

    def angle(self, g) -> np.ndarray:
        """Rotation angle of an element of a one-dimensional group."""
        if self.dim != 1:
            raise ValueError("angle is defined for one-dimensional groups")
        return self.log(g)[..., 0]

    def random(self, rng, size=()):
        if self.name == "U1" or self.name == "SO2":
            return self.exp(rng.uniform(-np.pi, np.pi, size + (1,)))
        if self.name == "O2":
            g = self.exp(rng.uniform(-np.pi, np.pi, size + (1,)))
            flip = rng.random(size) < 0.5
            return np.where(flip[..., None, None], g @ np.diag([1.0, -1.0]), g)
        q = rng.standard_normal(size + (4,))
        q /= np.linalg.norm(q, axis=-1, keepdims=True)
        w, x, y, z = np.moveaxis(q, -1, 0)
        return np.stack([
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1)], -2)
