"""Worst-case convergence bound for equally-weighted FedAvg with one local epoch.

The bound on the gap between expected training loss at round t and the
minimum loss is

    (8L/mu) / (t - 1 + 8L/mu) * (16 G^2 / mu + 4 L * dist)

where dist is the expected distance between the initial parameters and the
optimum. The distance enters unsquared by default; ``squared_distance``
switches to the squared variant used by some analyses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .csvio import write_csv


@dataclass(frozen=True)
class BoundParams:
    """Constants feeding the bound: curvature bracket, gradient bound, init distance."""

    mu: float
    L: float
    G: float
    init_distance: float
    squared_distance: bool = False

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError("mu must be > 0")
        if self.L < self.mu:
            raise ValueError("L must be >= mu")
        if self.G < 0.0:
            raise ValueError("G must be >= 0")
        if not (np.isfinite(self.init_distance) and self.init_distance >= 0.0):
            raise ValueError("init_distance must be finite and >= 0")


@dataclass(frozen=True)
class BoundCurve:
    """Bound values per round; strictly decreasing and positive by construction."""

    values: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("curve must be nonempty")
        previous = math.inf
        for t, value in self.values:
            if t < 1:
                raise ValueError("iteration indices start at 1")
            if value <= 0.0:
                raise ValueError("bound values must be positive")
            if value >= previous:
                raise ValueError("bound values must be strictly decreasing")
            previous = value


def convergence_bound(t: int, p: BoundParams) -> float:
    """Bound on the expected-training-loss gap at iteration t (t >= 1)."""
    if t < 1:
        raise ValueError("t must be >= 1")
    ratio = 8.0 * p.L / p.mu
    dist = p.init_distance ** 2 if p.squared_distance else p.init_distance
    return ratio / (t - 1 + ratio) * (16.0 * p.G ** 2 / p.mu + 4.0 * p.L * dist)


def bound_curve(T: int, p: BoundParams) -> BoundCurve:
    """Bound values for t = 1..T."""
    if T < 1:
        raise ValueError("T must be >= 1")
    magnitude = 16.0 * p.G ** 2 / p.mu + 4.0 * p.L * (
        p.init_distance ** 2 if p.squared_distance else p.init_distance
    )
    if magnitude <= 0.0:
        raise ValueError("degenerate bound: G and init_distance are both zero")
    return BoundCurve(tuple((t, convergence_bound(t, p)) for t in range(1, T + 1)))


def estimate_initial_distance(w1: np.ndarray, wstar_proxy: np.ndarray) -> float:
    """Euclidean distance between the initial parameters and an optimum proxy."""
    w1 = np.asarray(w1, dtype=np.float64)
    proxy = np.asarray(wstar_proxy, dtype=np.float64)
    if w1.shape != proxy.shape:
        raise ValueError(f"shape mismatch: {w1.shape} vs {proxy.shape}")
    return float(np.linalg.norm(w1 - proxy))


def write_curve_csv(path: Path | str, curve: BoundCurve) -> None:
    write_csv(path, ("t", "bound_value"), curve.values)
