"""Post-run analysis: node usefulness, constants-vs-usefulness correlations,
gradient-magnitude CDFs, and constant-driven node selection policies.

Selection uses nothing but the probed (mu, L, G) triples, so it requires no
information about node dataset sizes or contents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .csvio import read_csv, write_csv
from .flsim import FLRun
from .probe import ConstantsEstimate
from .rng import spawn_rng

SELECTION_POLICIES = ("top-L", "top-G", "bottom-mu", "random", "all")
CONSTANT_NAMES = ("mu", "L", "G")


@dataclass(frozen=True)
class UsefulnessRecord:
    """A node's mean per-round improvement in global test loss."""

    node_id: int
    usefulness: float

    def __post_init__(self):
        if not math.isfinite(self.usefulness):
            raise ValueError("usefulness must be finite")


@dataclass(frozen=True)
class CorrelationReport:
    quantity: str
    pearson: float
    spearman: float
    n: int

    def __post_init__(self):
        if not (-1.0 <= self.pearson <= 1.0 and -1.0 <= self.spearman <= 1.0):
            raise ValueError("correlation coefficients must lie in [-1, 1]")


@dataclass(frozen=True)
class CDFSeries:
    """Empirical distribution function: sorted distinct values, fractions to 1."""

    values: tuple[float, ...]
    fractions: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.fractions) or not self.values:
            raise ValueError("values and fractions must be nonempty and aligned")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("values must be strictly ascending")
        if any(b <= a for a, b in zip(self.fractions, self.fractions[1:])):
            raise ValueError("fractions must be strictly increasing")
        if not 0.0 < self.fractions[0] <= 1.0 or self.fractions[-1] != 1.0:
            raise ValueError("fractions must lie in (0, 1] and end at 1")


def usefulness_from_rounds(rounds) -> list[UsefulnessRecord]:
    rounds = tuple(rounds)
    if not rounds:
        raise ValueError("run has no rounds")
    node_ids = sorted(rounds[0].per_node_usefulness)
    return [
        UsefulnessRecord(
            node_id,
            float(np.mean([r.per_node_usefulness[node_id] for r in rounds])),
        )
        for node_id in node_ids
    ]


def node_usefulness(run: FLRun) -> list[UsefulnessRecord]:
    """Per node, the arithmetic mean of usefulness deltas across all rounds."""
    return usefulness_from_rounds(run.rounds)


def correlate(x, y) -> tuple[float, float]:
    """Pearson and Spearman coefficients (average ranks on ties)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 points")
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        raise ValueError("inputs must have nonzero variance")
    pearson = float(stats.pearsonr(x, y).statistic)
    spearman = float(stats.spearmanr(x, y).statistic)
    return pearson, spearman


def empirical_cdf(values) -> CDFSeries:
    """Standard empirical CDF: fraction at v = (count of samples <= v) / n."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("values must be nonempty")
    distinct, counts = np.unique(arr, return_counts=True)
    fractions = np.cumsum(counts) / arr.size
    fractions[-1] = 1.0
    return CDFSeries(tuple(float(v) for v in distinct), tuple(float(f) for f in fractions))


def select_nodes(estimates, k: int, policy: str, rng_seed: int | None = None) -> set[int]:
    """Pick k node ids by a constants-only policy; ties break by ascending id.

    ``estimates`` is a sequence of (node_id, ConstantsEstimate) pairs. The
    ``random`` policy needs ``rng_seed``; ``all`` returns every node.
    """
    pairs = list(estimates)
    if policy not in SELECTION_POLICIES:
        raise ValueError(f"policy must be one of {SELECTION_POLICIES}")
    if not 1 <= k <= len(pairs):
        raise ValueError(f"k must lie in [1, {len(pairs)}]")
    ids = [node_id for node_id, _ in pairs]
    if policy == "all":
        return set(ids)
    if policy == "random":
        if rng_seed is None:
            raise ValueError("random policy needs rng_seed")
        rng = spawn_rng("select", rng_seed)
        return set(int(i) for i in rng.choice(sorted(ids), size=k, replace=False))
    key = {
        "top-L": lambda c: c.L,
        "top-G": lambda c: c.G,
        "bottom-mu": lambda c: -c.mu,
    }[policy]
    ranked = sorted(pairs, key=lambda pair: (-key(pair[1]), pair[0]))
    return {node_id for node_id, _ in ranked[:k]}


# ---------------------------------------------------------------------------
# Report emission


@dataclass(frozen=True)
class ReportInputs:
    """Everything the report CSVs are computed from; buildable from an FLRun
    or parsed back out of a saved run directory."""

    usefulness: tuple[UsefulnessRecord, ...]
    node_constants: dict[int, ConstantsEstimate]
    probe_g: tuple[float, ...]
    training_g: tuple[float, ...]
    seed: int


def report_inputs_from_run(run: FLRun) -> ReportInputs:
    return ReportInputs(
        usefulness=tuple(node_usefulness(run)),
        node_constants=dict(run.node_constants),
        probe_g=tuple(run.probe_g_pooled()),
        training_g=tuple(run.training_g_pooled()),
        seed=run.config.seed,
    )


def report_inputs_from_dir(run_dir: Path | str) -> ReportInputs:
    """Rebuild report inputs from a saved run directory's CSV files."""
    run_dir = Path(run_dir)
    _, urows = read_csv(run_dir / "usefulness.csv")
    per_node: dict[int, list[float]] = {}
    for _, node_id, delta in urows:
        per_node.setdefault(int(node_id), []).append(float(delta))
    usefulness = tuple(
        UsefulnessRecord(node_id, float(np.mean(vals)))
        for node_id, vals in sorted(per_node.items())
    )
    _, crows = read_csv(run_dir / "constants.csv")
    node_constants = {
        int(nid): ConstantsEstimate(float(mu), float(ell), float(g), int(n))
        for nid, mu, ell, g, n in crows
        if int(nid) >= 0
    }
    _, grows = read_csv(run_dir / "gtrace.csv")
    probe_g = tuple(float(v) for source, _, v in grows if source == "probe")
    training_g = tuple(float(v) for source, _, v in grows if source == "training")
    seed = 0
    for line in (run_dir / "config.txt").read_text(encoding="utf-8").splitlines():
        if line.startswith("scenario.seed"):
            seed = int(line.split("=", 1)[1].strip())
    return ReportInputs(usefulness, node_constants, probe_g, training_g, seed)


def _constant_values(inputs: ReportInputs, quantity: str) -> np.ndarray:
    getter = {"mu": lambda c: c.mu, "L": lambda c: c.L, "G": lambda c: c.G}[quantity]
    return np.array([getter(inputs.node_constants[r.node_id]) for r in inputs.usefulness])


def correlation_rows(inputs: ReportInputs) -> list[tuple[str, float, float, int]]:
    """(quantity, pearson, spearman, n) per constant; nan when undefined."""
    usefulness = np.array([r.usefulness for r in inputs.usefulness])
    rows = []
    for quantity in CONSTANT_NAMES:
        try:
            pearson, spearman = correlate(_constant_values(inputs, quantity), usefulness)
        except ValueError:
            pearson = spearman = float("nan")
        rows.append((quantity, pearson, spearman, usefulness.size))
    return rows


def _cdf_rows(values) -> list[tuple[float, float]]:
    if not values:
        return []
    series = empirical_cdf(values)
    return list(zip(series.values, series.fractions))


def write_reports(run_dir: Path | str, inputs: ReportInputs, selection_k: int | None = None) -> None:
    """Emit correlations.csv, cdf_probe.csv, cdf_training.csv, selection.csv."""
    run_dir = Path(run_dir)
    write_csv(
        run_dir / "correlations.csv",
        ("quantity", "pearson", "spearman", "n"),
        correlation_rows(inputs),
    )
    write_csv(run_dir / "cdf_probe.csv", ("value", "fraction"), _cdf_rows(inputs.probe_g))
    write_csv(run_dir / "cdf_training.csv", ("value", "fraction"), _cdf_rows(inputs.training_g))

    estimates = sorted(inputs.node_constants.items())
    n = len(estimates)
    k = selection_k if selection_k is not None else math.ceil(n / 2)
    rows = []
    for policy in SELECTION_POLICIES:
        chosen = select_nodes(estimates, k, policy, rng_seed=inputs.seed)
        rows.append((policy, k, ";".join(str(i) for i in sorted(chosen))))
    write_csv(run_dir / "selection.csv", ("policy", "k", "chosen"), rows)
