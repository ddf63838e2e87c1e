"""Containers for discretised manifold-valued and real-valued paths.

Coordinates are always stored in the chart recorded for the same node; a step
``k -> k+1`` is interpreted in the chart of node ``k`` (see
:func:`step_increments`).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator

import numpy as np

if TYPE_CHECKING:
    from .geometry import ChartedManifold, PointRef


@dataclass
class SamplePath:
    manifold: "ChartedManifold"
    times: np.ndarray
    coords: np.ndarray
    charts: np.ndarray
    velocities: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.coords = np.asarray(self.coords, dtype=float)
        self.charts = np.asarray(self.charts, dtype=np.int64)
        n = len(self.times)
        if self.times.ndim != 1 or len(self.coords) != n or len(self.charts) != n:
            raise ValueError("times, coords and charts must have matching length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("time grid must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def states(self) -> list["PointRef"]:
        return [self.point(k) for k in range(len(self))]

    @property
    def chart_log(self) -> list[str]:
        return [self.manifold.charts[c].chart_id for c in self.charts]

    def point(self, k: int) -> "PointRef":
        from .geometry import PointRef

        return PointRef(self.manifold.charts[self.charts[k]].chart_id, self.coords[k].copy())

    @property
    def endpoint(self) -> "PointRef":
        return self.point(len(self) - 1)

    def as_ensemble(self, seed: int = 0, generator_tag: str = "single") -> "PathEnsemble":
        dt = float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0
        return PathEnsemble(self.manifold, self.times, self.coords[None], self.charts[None],
                            seed=seed, dt=dt, generator_tag=generator_tag)


@dataclass
class PathEnsemble:
    """Batch of paths on a common time grid.

    ``coords`` has shape ``(n_paths, n_nodes, dim)`` and ``charts`` has shape
    ``(n_paths, n_nodes)`` holding chart indices of ``manifold``.
    """

    manifold: "ChartedManifold"
    times: np.ndarray
    coords: np.ndarray
    charts: np.ndarray
    seed: int = 0
    dt: float = 0.0
    generator_tag: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.coords = np.asarray(self.coords, dtype=float)
        self.charts = np.asarray(self.charts, dtype=np.int64)
        if self.coords.ndim != 3 or self.coords.shape[:2] != self.charts.shape:
            raise ValueError("coords must be (n_paths, n_nodes, dim) matching charts")
        if self.coords.shape[1] != len(self.times):
            raise ValueError("time grid length does not match coords")

    @property
    def n_paths(self) -> int:
        return self.coords.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __len__(self) -> int:
        return self.n_paths

    def __getitem__(self, i: int) -> SamplePath:
        return SamplePath(self.manifold, self.times, self.coords[i], self.charts[i])

    def __iter__(self) -> Iterator[SamplePath]:
        for i in range(self.n_paths):
            yield self[i]

    @property
    def paths(self) -> list[SamplePath]:
        return list(self)

    def terminal(self) -> tuple[np.ndarray, np.ndarray]:
        return self.charts[:, -1], self.coords[:, -1]

    def to_csv(self, path) -> None:
        """One row per (path_id, t) with the chart id and coordinates."""
        dim = self.coords.shape[2]
        ids = [c.chart_id for c in self.manifold.charts]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "t", "chart"] + [f"x{i}" for i in range(dim)])
            for p in range(self.n_paths):
                for k, t in enumerate(self.times):
                    w.writerow([p, repr(float(t)), ids[self.charts[p, k]]]
                               + [repr(float(v)) for v in self.coords[p, k]])


@dataclass
class RealPath:
    """Real-valued process on a grid; ``values`` has shape ``(..., n_nodes)``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-1] != len(self.times):
            raise ValueError("values must end with the time axis")

    @property
    def terminal(self) -> np.ndarray:
        return self.values[..., -1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __getitem__(self, idx) -> "RealPath":
        return RealPath(self.times, self.values[idx])

    def to_csv(self, path) -> None:
        vals = self.values.reshape(-1, len(self.times))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "t", "value"])
            for p, row in enumerate(vals):
                for t, v in zip(self.times, row):
                    w.writerow([p, repr(float(t)), repr(float(v))])


def as_batch(path) -> tuple["ChartedManifold", np.ndarray, np.ndarray, np.ndarray, bool]:
    """Normalise a SamplePath or PathEnsemble to batched arrays."""
    if isinstance(path, SamplePath):
        return path.manifold, path.times, path.coords[None], path.charts[None], True
    if isinstance(path, PathEnsemble):
        return path.manifold, path.times, path.coords, path.charts, False
    raise TypeError(f"expected SamplePath or PathEnsemble, got {type(path).__name__}")


def step_increments(manifold, coords: np.ndarray, charts: np.ndarray):
    """Left points, right points re-expressed in the left chart, and left charts.

    Shapes: coords ``(P, n+1, d)`` -> ``(P, n, d)``, ``(P, n, d)``, ``(P, n)``.
    """
    left = coords[:, :-1]
    right = coords[:, 1:].copy()
    cl = charts[:, :-1]
    cr = charts[:, 1:]
    moved = cl != cr
    if np.any(moved):
        for a, b in set(zip(cr[moved].tolist(), cl[moved].tolist())):
            m = moved & (cr == a) & (cl == b)
            right[m] = manifold.transition(a, b, right[m])
    return left, right, cl
