"""Monte-Carlo probing of loss-landscape constants.

Each probe draws a random parameter pair (u, v), evaluates

    m = 2 * (F(u) - F(v) + (v - u)^T grad F(v)) / ||u - v||^2

and a gradient magnitude g at v. Over many probes, the smallest m is the
strong-convexity estimate ``mu``, the largest m the smoothness estimate
``L``, and the largest g the gradient bound ``G``. A federation-wide
estimate takes the worst case of per-node estimates in every coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .csvio import write_csv
from .model import Dataset, ModelSpec, ParamVector, draw_init_like, gradient, loss
from .rng import derive_seed, spawn_rng

# Below this squared distance a pair is useless for the m formula; pairs are
# redrawn rather than divided through.
DEGENERATE_SQ_DIST = 1e-30

G_FORMULAS = ("gradient-norm", "loss-magnitude")


class DegeneratePairError(ValueError):
    """Raised when u and v (nearly) coincide and cannot be separated."""


class ProbeFailure(RuntimeError):
    """A single probe produced an error or a non-finite value."""

    def __init__(self, probe_index: int, reason: str):
        super().__init__(f"probe {probe_index} failed: {reason}")
        self.probe_index = probe_index


@dataclass(frozen=True)
class ProbeSample:
    """The (m, g) pair produced by one probe."""

    m_value: float
    g_value: float

    def __post_init__(self):
        if not (np.isfinite(self.m_value) and np.isfinite(self.g_value)):
            raise ValueError("probe values must be finite")
        if self.g_value < 0.0:
            raise ValueError("g_value must be nonnegative")


@dataclass(frozen=True)
class ConstantsEstimate:
    """Estimated (mu, L, G) triple with the probe count that produced it."""

    mu: float
    L: float
    G: float
    n_probes: int

    def __post_init__(self):
        if self.mu > self.L:
            raise ValueError(f"mu={self.mu} exceeds L={self.L}")
        if self.G < 0.0:
            raise ValueError("G must be nonnegative")
        if self.n_probes < 1:
            raise ValueError("n_probes must be positive")


@dataclass(frozen=True)
class InitDistributionSampler:
    """Draws probe points from the model's initialization distribution."""

    def draw(self, spec: ModelSpec, rng: np.random.Generator) -> ParamVector:
        return draw_init_like(spec, rng)


@dataclass(frozen=True)
class GaussianPerturbationSampler:
    """Draws probe points as ``center + sigma * N(0, I)``.

    Useful for probing around current weights instead of fresh ones, e.g.
    to compare probe-time against training-time gradient magnitudes.
    """

    center: tuple[float, ...]
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError("sigma must be > 0 (a zero-width sampler cannot produce distinct pairs)")

    def draw(self, spec: ModelSpec, rng: np.random.Generator) -> ParamVector:
        center = np.asarray(self.center, dtype=np.float64)
        return center + self.sigma * rng.standard_normal(center.size)


ProbeSampler = InitDistributionSampler | GaussianPerturbationSampler


def draw_probe_pair(
    spec: ModelSpec, sampler: ProbeSampler, rng_seed: int
) -> tuple[ParamVector, ParamVector]:
    """Two distinct random parameter vectors; v is redrawn on collision."""
    rng = spawn_rng("probe-pair", rng_seed)
    u = sampler.draw(spec, rng)
    v = sampler.draw(spec, rng)
    for _ in range(100):
        diff = u - v
        if diff @ diff >= DEGENERATE_SQ_DIST:
            return u, v
        v = sampler.draw(spec, rng)
    raise DegeneratePairError("sampler keeps producing coincident pairs")


def compute_m(spec: ModelSpec, u: ParamVector, v: ParamVector, data: Dataset) -> float:
    """Normalized curvature of the loss between two parameter vectors.

    For a quadratic objective this is exactly the Rayleigh quotient of the
    curvature matrix along u - v, hence bracketed by its extreme eigenvalues.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("u and v must have identical shapes")
    diff = u - v
    sq_dist = float(diff @ diff)
    if sq_dist < DEGENERATE_SQ_DIST:
        raise DegeneratePairError(f"||u - v||^2 = {sq_dist} is below {DEGENERATE_SQ_DIST}")
    gap = loss(spec, u, data) - loss(spec, v, data) + float((v - u) @ gradient(spec, v, data))
    return 2.0 * gap / sq_dist


def compute_g(spec: ModelSpec, v: ParamVector, data: Dataset) -> float:
    """Euclidean norm of the loss gradient at v."""
    return float(np.linalg.norm(gradient(spec, v, data)))


def compute_g_loss_magnitude(spec: ModelSpec, v: ParamVector, data: Dataset) -> float:
    """Alternative g reading: the loss magnitude |F(v)| instead of ||grad F(v)||."""
    return abs(loss(spec, v, data))


def collect_probes(
    spec: ModelSpec,
    data: Dataset,
    n_probes: int,
    sampler: ProbeSampler,
    rng_seed: int,
    g_formula: str = "gradient-norm",
) -> tuple[ProbeSample, ...]:
    """Run the probe loop and keep every (m, g) sample.

    Probe i uses a seed derived from (rng_seed, i) only, so a longer run
    extends a shorter one sample-for-sample.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    if g_formula not in G_FORMULAS:
        raise ValueError(f"g_formula must be one of {G_FORMULAS}")
    g_of = compute_g if g_formula == "gradient-norm" else compute_g_loss_magnitude
    samples = []
    for i in range(n_probes):
        try:
            u, v = draw_probe_pair(spec, sampler, derive_seed(rng_seed, i))
            samples.append(
                ProbeSample(compute_m(spec, u, v, data), g_of(spec, v, data))
            )
        except ProbeFailure:
            raise
        except Exception as exc:
            raise ProbeFailure(i, str(exc)) from exc
    return tuple(samples)


def constants_from_samples(samples) -> ConstantsEstimate:
    """Reduce probe samples: mu = min m, L = max m, G = max g."""
    samples = tuple(samples)
    if not samples:
        raise ValueError("no probe samples")
    return ConstantsEstimate(
        mu=min(s.m_value for s in samples),
        L=max(s.m_value for s in samples),
        G=max(s.g_value for s in samples),
        n_probes=len(samples),
    )


def estimate_constants(
    spec: ModelSpec,
    data: Dataset,
    n_probes: int,
    sampler: ProbeSampler,
    rng_seed: int,
    g_formula: str = "gradient-norm",
) -> ConstantsEstimate:
    """Full probing procedure: draw pairs, collect (m, g), reduce to (mu, L, G)."""
    if n_probes < 2:
        raise ValueError("n_probes must be >= 2 (a single probe pins mu = L trivially)")
    return constants_from_samples(
        collect_probes(spec, data, n_probes, sampler, rng_seed, g_formula)
    )


def aggregate_global(per_node) -> ConstantsEstimate:
    """Worst-case federation-wide constants from per-node estimates.

    G and L take the maximum and mu the minimum across nodes, each the
    direction that makes the convergence bound largest; probe counts add up.
    """
    estimates = tuple(per_node)
    if not estimates:
        raise ValueError("need at least one per-node estimate")
    return ConstantsEstimate(
        mu=min(e.mu for e in estimates),
        L=max(e.L for e in estimates),
        G=max(e.G for e in estimates),
        n_probes=sum(e.n_probes for e in estimates),
    )


def write_probes_csv(path: Path | str, samples_by_node: dict[int, tuple[ProbeSample, ...]]) -> None:
    """Export raw probe samples as rows of node_id, probe_index, m_value, g_value."""
    rows = []
    for node_id in sorted(samples_by_node):
        for idx, sample in enumerate(samples_by_node[node_id]):
            rows.append((node_id, idx, sample.m_value, sample.g_value))
    write_csv(path, ("node_id", "probe_index", "m_value", "g_value"), rows)
