"""Pure numpy implementations of the hot stepping loops.

These define the reference semantics; the compiled module ``_ckernels``
must reproduce them to rounding.
"""
from __future__ import annotations

import numpy as np


def sphere_euler(x0, c0, dW, radius, safe_radius, stride):
    """Euler steps of Brownian motion on a round 2-sphere in stereographic charts.

    In a 2-d conformal chart the Itô drift vanishes, so each step is
    ``x += dW / λ(x)`` with ``λ = 2R / (1 + |x|²)``; points leaving the safe
    disc are inverted into the opposite chart (charts are 0 and 1).
    """
    x = np.array(x0, dtype=float, copy=True)
    c = np.array(c0, dtype=np.int64, copy=True)
    P, n, _ = dW.shape
    m = n // stride + 1
    xs = np.empty((P, m, 2))
    cs = np.empty((P, m), dtype=np.int64)
    xs[:, 0], cs[:, 0] = x, c
    safe2 = safe_radius * safe_radius
    for k in range(n):
        r2 = np.sum(x * x, axis=1)
        x = x + dW[:, k] * ((1.0 + r2) / (2.0 * radius))[:, None]
        r2 = np.sum(x * x, axis=1)
        out = r2 >= safe2
        if np.any(out):
            x[out] = x[out] / r2[out, None]
            c[out] = 1 - c[out]
        if (k + 1) % stride == 0:
            j = (k + 1) // stride
            xs[:, j], cs[:, j] = x, c
    return xs, cs


def flat_walk(x0, dW, stride):
    """Brownian motion in Euclidean coordinates: partial sums of increments."""
    P, n, d = dW.shape
    idx = np.arange(stride - 1, n, stride)
    sums = np.cumsum(dW, axis=1)[:, idx]
    out = np.empty((P, len(idx) + 1, d))
    out[:, 0] = x0
    out[:, 1:] = np.asarray(x0)[:, None, :] + sums
    return out


def torus_couple(x0, y0, dWx, reflect, merge_radius, stride):
    """Reflection or synchronous coupling on the flat torus in covering coordinates.

    ``reflect`` is 1 for reflection coupling and 0 for synchronous.  Returns
    ``(xs, ys, tau_index)`` where ``tau_index`` is the first step at which the
    wrapped distance is at most ``merge_radius`` (``-1`` if never).  After
    coalescence Y is glued to X's wrapped image.
    """
    two_pi = 2.0 * np.pi
    x = np.array(x0, dtype=float, copy=True)
    y = np.array(y0, dtype=float, copy=True)
    P, n, d = dWx.shape
    m = n // stride + 1
    xs = np.empty((P, m, d))
    ys = np.empty((P, m, d))
    xs[:, 0], ys[:, 0] = x, y
    tau = np.full(P, -1, dtype=np.int64)
    delta = np.mod(y - x + np.pi, two_pi) - np.pi
    dist = np.sqrt(np.sum(delta * delta, axis=1))
    merged = dist <= merge_radius
    tau[merged] = 0
    y[merged] = x[merged] + (y[merged] - x[merged] - delta[merged])
    for k in range(n):
        dw = dWx[:, k]
        if reflect:
            nrm = np.where(dist > 0, dist, 1.0)[:, None]
            e = delta / nrm
            dwy = dw - 2.0 * np.sum(dw * e, axis=1, keepdims=True) * e
            dwy = np.where(merged[:, None], dw, dwy)
        else:
            dwy = dw
        x = x + dw
        y = y + dwy
        delta = np.mod(y - x + np.pi, two_pi) - np.pi
        dist = np.sqrt(np.sum(delta * delta, axis=1))
        hit = (~merged) & (dist <= merge_radius)
        if np.any(hit):
            tau[hit] = k + 1
            merged |= hit
        # glued paths: Y follows X shifted by the lattice vector it sits at
        y[merged] = x[merged] + (y[merged] - x[merged] - delta[merged])
        if (k + 1) % stride == 0:
            j = (k + 1) // stride
            xs[:, j], ys[:, j] = x, y
    return xs, ys, tau
