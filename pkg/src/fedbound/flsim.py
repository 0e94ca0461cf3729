"""FedAvg state machine: partition, probe, local training, averaging, records.

A run proceeds in two phases. First every node probes its local loss
landscape at the initial parameter distribution, yielding per-node and
worst-case global (mu, L, G) estimates. Then T rounds of broadcast,
one-or-more local SGD epochs per node, and coordinate-wise averaging,
with per-round losses, usefulness deltas, and gradient-norm traces kept
for later analysis. Bound values per round are filled in after the run
finishes, once the optimum proxy (the best-training-loss parameters seen
anywhere in the run) is known.

All randomness derives from (config seed, phase, round, node), so serial
and parallel schedules produce identical results.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bound import BoundParams, convergence_bound, estimate_initial_distance
from .csvio import write_csv
from .model import Dataset, ModelSpec, ParamVector, init_params, loss, sgd_epoch_traced
from .probe import (
    ConstantsEstimate,
    GaussianPerturbationSampler,
    InitDistributionSampler,
    ProbeSample,
    aggregate_global,
    collect_probes,
    constants_from_samples,
    write_probes_csv,
)
from .rng import derive_seed, spawn_rng

PROBE_SAMPLER_KINDS = ("init", "perturb")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one federated run depends on, including probe settings."""

    n_nodes: int
    samples_per_node: int
    rounds: int
    model: ModelSpec | None = None
    lr: float = 0.05
    batch_size: int = 32
    local_epochs_per_round: int = 1
    missing_classes: frozenset[int] = frozenset()
    test_fraction: float = 0.1
    n_probes: int = 100
    probe_sampler: str = "init"
    perturb_sigma: float = 0.1
    g_formula: str = "gradient-norm"
    squared_distance: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if self.samples_per_node < 1:
            raise ValueError("samples_per_node must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.lr < 0.0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.local_epochs_per_round < 1:
            raise ValueError("local_epochs_per_round must be >= 1")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")
        if self.n_probes < 2:
            raise ValueError("n_probes must be >= 2")
        if self.probe_sampler not in PROBE_SAMPLER_KINDS:
            raise ValueError(f"probe_sampler must be one of {PROBE_SAMPLER_KINDS}")
        if self.model is not None and self.model.kind != "quadratic":
            bad = [c for c in self.missing_classes if c < 0 or c >= self.model.num_classes]
            if bad:
                raise ValueError(f"missing class indices {bad} outside [0, num_classes)")


@dataclass(frozen=True)
class NodeState:
    """One learning node: its data, current parameters, and probe results."""

    id: int
    local_data: Dataset
    params: ParamVector
    constants: ConstantsEstimate | None = None


@dataclass(frozen=True)
class RoundRecord:
    """Observables of one federated round (losses at the aggregated model)."""

    t: int
    train_loss: float
    test_loss: float
    bound_value: float
    per_node_usefulness: dict[int, float]
    training_g_values: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("round index starts at 1")
        if not (np.isfinite(self.train_loss) and np.isfinite(self.test_loss)):
            raise ValueError("losses must be finite")


@dataclass(frozen=True)
class FLRun:
    """A finished federated run with everything the analysis stage consumes."""

    config: ScenarioConfig
    rounds: tuple[RoundRecord, ...]
    final_params: ParamVector
    global_constants: ConstantsEstimate
    node_constants: dict[int, ConstantsEstimate]
    probe_samples: dict[int, tuple[ProbeSample, ...]]
    initial_params: ParamVector
    wstar_proxy: ParamVector
    init_distance: float

    def __post_init__(self):
        if len(self.rounds) != self.config.rounds:
            raise ValueError(
                f"run has {len(self.rounds)} rounds, config says {self.config.rounds}"
            )

    def training_g_pooled(self) -> list[float]:
        return [g for record in self.rounds for _, g in record.training_g_values]

    def probe_g_pooled(self) -> list[float]:
        return [s.g_value for samples in self.probe_samples.values() for s in samples]


def partition_dataset(
    data: Dataset, cfg: ScenarioConfig, rng_seed: int
) -> tuple[Dataset, list[Dataset]]:
    """Split a global dataset into a held-out test set and disjoint node sets.

    The test split keeps every class; only the training side drops samples
    of the configured missing classes.
    """
    n = len(data)
    rng = spawn_rng("partition", rng_seed)
    order = rng.permutation(n)
    n_test = int(round(cfg.test_fraction * n))
    test_idx = order[:n_test]
    pool = order[n_test:]
    if cfg.missing_classes:
        keep = ~np.isin(data.labels[pool], sorted(cfg.missing_classes))
        pool = pool[keep]
    need = cfg.n_nodes * cfg.samples_per_node
    if len(pool) < need:
        raise ValueError(
            f"insufficient data: need {need} training samples after filtering, have {len(pool)}"
        )
    nodes = [
        data.subset(pool[i * cfg.samples_per_node : (i + 1) * cfg.samples_per_node])
        for i in range(cfg.n_nodes)
    ]
    return data.subset(test_idx), nodes


def fedavg(models) -> ParamVector:
    """Coordinate-wise arithmetic mean of equally-weighted parameter vectors."""
    models = [np.asarray(m, dtype=np.float64) for m in models]
    if not models:
        raise ValueError("need at least one model")
    dim = models[0].shape
    if any(m.shape != dim for m in models):
        raise ValueError("parameter vectors differ in shape")
    return np.mean(np.stack(models), axis=0)


def local_round(
    node: NodeState,
    global_params: ParamVector,
    test_data: Dataset,
    cfg: ScenarioConfig,
    rng_seed: int,
) -> tuple[ParamVector, float, list[float]]:
    """Replace the node's model with the global one and resume local training.

    Returns the trained parameters, the node's usefulness delta (global
    test loss before minus after its local epochs), and the batch-gradient
    norm observed at every SGD step.
    """
    params = np.asarray(global_params, dtype=np.float64)
    trace: list[float] = []
    for epoch in range(cfg.local_epochs_per_round):
        params, norms = sgd_epoch_traced(
            cfg.model, params, node.local_data, cfg.lr, cfg.batch_size,
            derive_seed(rng_seed, epoch),
        )
        trace.extend(norms)
    delta = loss(cfg.model, global_params, test_data) - loss(cfg.model, params, test_data)
    return params, delta, trace


def local_sgd_seed(cfg_seed: int, round_index: int, node_id: int, epoch: int) -> int:
    """Seed of one node's SGD epoch within a round; for external reference runs."""
    return derive_seed(derive_seed(cfg_seed, "round", round_index, node_id), epoch)


def probe_sampler_for(cfg: ScenarioConfig, w1: ParamVector):
    """The probe-point sampler a run uses: fresh draws, or jitter around w1."""
    if cfg.probe_sampler == "init":
        return InitDistributionSampler()
    return GaussianPerturbationSampler(center=tuple(w1), sigma=cfg.perturb_sigma)


def run_federated_partitioned(
    cfg: ScenarioConfig, test_data: Dataset, node_datasets
) -> FLRun:
    """The FedAvg engine, given already-built per-node datasets."""
    node_datasets = list(node_datasets)
    if cfg.model is None:
        raise ValueError("config has no model spec")
    if len(node_datasets) != cfg.n_nodes:
        raise ValueError(f"expected {cfg.n_nodes} node datasets, got {len(node_datasets)}")
    if cfg.local_epochs_per_round != 1:
        warnings.warn(
            "bound values assume one local epoch per round; this config uses "
            f"{cfg.local_epochs_per_round}",
            stacklevel=2,
        )

    w1 = init_params(cfg.model, derive_seed(cfg.seed, "init"))
    sampler = probe_sampler_for(cfg, w1)
    probe_samples: dict[int, tuple[ProbeSample, ...]] = {}
    node_constants: dict[int, ConstantsEstimate] = {}
    nodes: list[NodeState] = []
    for i, local in enumerate(node_datasets):
        samples = collect_probes(
            cfg.model, local, cfg.n_probes, sampler,
            derive_seed(cfg.seed, "probe", i), cfg.g_formula,
        )
        probe_samples[i] = samples
        node_constants[i] = constants_from_samples(samples)
        nodes.append(NodeState(i, local, w1.copy(), node_constants[i]))
    global_constants = aggregate_global(node_constants[i] for i in range(cfg.n_nodes))

    def train_loss_at(params: ParamVector) -> float:
        return float(np.mean([loss(cfg.model, params, node.local_data) for node in nodes]))

    current = w1
    candidates = [(train_loss_at(w1), w1)]
    raw_rounds = []
    for t in range(1, cfg.rounds + 1):
        locals_, usefulness, traces = [], {}, []
        for node in nodes:
            trained, delta, trace = local_round(
                node, current, test_data, cfg, derive_seed(cfg.seed, "round", t, node.id)
            )
            locals_.append(trained)
            usefulness[node.id] = delta
            traces.extend((node.id, g) for g in trace)
        current = fedavg(locals_)
        train_loss = train_loss_at(current)
        candidates.append((train_loss, current))
        raw_rounds.append(
            dict(
                t=t,
                train_loss=train_loss,
                test_loss=loss(cfg.model, current, test_data),
                per_node_usefulness=usefulness,
                training_g_values=tuple(traces),
            )
        )

    wstar_proxy = min(candidates, key=lambda pair: pair[0])[1]
    dist = estimate_initial_distance(w1, wstar_proxy)
    if global_constants.mu > 0.0:
        params = BoundParams(
            mu=global_constants.mu,
            L=global_constants.L,
            G=global_constants.G,
            init_distance=dist,
            squared_distance=cfg.squared_distance,
        )
        bounds = {t: convergence_bound(t, params) for t in range(1, cfg.rounds + 1)}
    else:
        warnings.warn(
            "probed mu is not positive; bound values are undefined for this run",
            stacklevel=2,
        )
        bounds = {t: float("nan") for t in range(1, cfg.rounds + 1)}

    records = tuple(RoundRecord(bound_value=bounds[r["t"]], **r) for r in raw_rounds)
    return FLRun(
        config=cfg,
        rounds=records,
        final_params=current,
        global_constants=global_constants,
        node_constants=node_constants,
        probe_samples=probe_samples,
        initial_params=w1,
        wstar_proxy=wstar_proxy,
        init_distance=dist,
    )


def run_federated(cfg: ScenarioConfig, data: Dataset) -> FLRun:
    """Partition a global dataset per the config, then run the engine."""
    test_data, node_datasets = partition_dataset(data, cfg, derive_seed(cfg.seed, "partition"))
    return run_federated_partitioned(cfg, test_data, node_datasets)


def config_echo_lines(cfg: ScenarioConfig, extra: dict[str, str] | None = None) -> list[str]:
    """Plain-text key = value echo of a scenario, stable order."""
    model = cfg.model
    pairs: list[tuple[str, str]] = [
        ("scenario.n_nodes", str(cfg.n_nodes)),
        ("scenario.samples_per_node", str(cfg.samples_per_node)),
        ("scenario.rounds", str(cfg.rounds)),
        ("scenario.lr", format(cfg.lr, ".9g")),
        ("scenario.batch_size", str(cfg.batch_size)),
        ("scenario.local_epochs_per_round", str(cfg.local_epochs_per_round)),
        ("scenario.missing_classes", ",".join(str(c) for c in sorted(cfg.missing_classes))),
        ("scenario.test_fraction", format(cfg.test_fraction, ".9g")),
        ("scenario.seed", str(cfg.seed)),
        ("probe.n_probes", str(cfg.n_probes)),
        ("probe.sampler", cfg.probe_sampler),
        ("probe.perturb_sigma", format(cfg.perturb_sigma, ".9g")),
        ("probe.g_formula", cfg.g_formula),
        ("bound.squared_distance", "true" if cfg.squared_distance else "false"),
        ("model.kind", model.kind if model else ""),
        ("model.feature_dim", str(model.feature_dim) if model else ""),
        ("model.num_classes", str(model.num_classes) if model else ""),
        ("model.hidden_width", str(model.hidden_width) if model else ""),
        ("model.l2", format(model.l2_coefficient, ".9g") if model else ""),
    ]
    if cfg.local_epochs_per_round != 1:
        pairs.append(("warning.bound_assumptions", "local_epochs_per_round != 1"))
    for key in sorted(extra or {}):
        pairs.append((key, (extra or {})[key]))
    return [f"{key} = {value}" for key, value in pairs]


def save_run(run: FLRun, run_dir: Path | str, extra_config: dict[str, str] | None = None) -> None:
    """Serialize a run: config echo plus rounds/usefulness/gtrace/constants/probes CSVs."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(
        "\n".join(config_echo_lines(run.config, extra_config)) + "\n", encoding="utf-8"
    )
    write_csv(
        run_dir / "rounds.csv",
        ("t", "train_loss", "test_loss", "bound_value"),
        [(r.t, r.train_loss, r.test_loss, r.bound_value) for r in run.rounds],
    )
    write_csv(
        run_dir / "usefulness.csv",
        ("t", "node_id", "delta"),
        [
            (r.t, node_id, r.per_node_usefulness[node_id])
            for r in run.rounds
            for node_id in sorted(r.per_node_usefulness)
        ],
    )
    gtrace_rows: list[tuple[str, int, float]] = []
    for node_id in sorted(run.probe_samples):
        gtrace_rows.extend(("probe", node_id, s.g_value) for s in run.probe_samples[node_id])
    for record in run.rounds:
        gtrace_rows.extend(("training", node_id, g) for node_id, g in record.training_g_values)
    write_csv(run_dir / "gtrace.csv", ("source", "node_id", "value"), gtrace_rows)

    constants_rows = [
        (i, c.mu, c.L, c.G, c.n_probes) for i, c in sorted(run.node_constants.items())
    ]
    g = run.global_constants
    constants_rows.append((-1, g.mu, g.L, g.G, g.n_probes))
    write_csv(run_dir / "constants.csv", ("node_id", "mu", "L", "G", "n_probes"), constants_rows)
    write_probes_csv(run_dir / "probes.csv", run.probe_samples)


def with_model(cfg: ScenarioConfig, model: ModelSpec) -> ScenarioConfig:
    return replace(cfg, model=model)
