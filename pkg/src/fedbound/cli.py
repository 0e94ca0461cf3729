"""Command-line entry point.

Subcommands:

* ``run``      -- full pipeline: per-seed federated runs, analysis reports,
                  and an aggregate summary.csv
* ``probe``    -- constants estimation only; prints per-node and global (mu, L, G)
* ``report``   -- regenerate the analysis CSVs from an existing run directory
* ``selftest`` -- built-in gradient and probe-oracle checks

The environment variable ``FEDBOUND_SEED`` overrides the configured seed.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, flsim, probe
from .bound import BoundParams, convergence_bound
from .config import CifarSource, ConfigError, ExperimentConfig, load_config
from .csvio import write_csv
from .data import gen_synthetic, gen_synthetic_nodes, load_cifar10
from .model import (
    Dataset,
    finite_difference_gradient,
    gradient,
    init_params,
    mlp_spec,
    quadratic_spec,
    softmax_spec,
)
from .rng import derive_seed, spawn_rng

SUMMARY_HEADER = (
    "scenario",
    "seed",
    "final_train_loss",
    "final_test_loss",
    "final_bound",
    "pearson_mu",
    "spearman_mu",
    "pearson_L",
    "spearman_L",
    "pearson_G",
    "spearman_G",
)


def _synthetic_has_knobs(cfg: ExperimentConfig) -> bool:
    return not isinstance(cfg.dataset, CifarSource) and bool(
        cfg.dataset.label_skew or cfg.dataset.noise_mult or cfg.dataset.feature_scale
    )


def _hetero_test_size(scenario: flsim.ScenarioConfig) -> int:
    total_train = scenario.n_nodes * scenario.samples_per_node
    frac = scenario.test_fraction
    return max(1, int(round(frac / (1.0 - frac) * total_train)))


def run_one_seed(cfg: ExperimentConfig, seed: int) -> flsim.FLRun:
    """Build the dataset for one seed and run the federated pipeline."""
    scenario = replace(cfg.scenario, seed=seed)
    if isinstance(cfg.dataset, CifarSource):
        data = load_cifar10(cfg.dataset.path, cfg.dataset.pool, cfg.dataset.grayscale)
        return flsim.run_federated(scenario, data)
    if _synthetic_has_knobs(cfg):
        test_data, node_datasets = gen_synthetic_nodes(
            cfg.dataset,
            scenario.n_nodes,
            scenario.samples_per_node,
            _hetero_test_size(scenario),
            seed,
            scenario.missing_classes,
        )
        return flsim.run_federated_partitioned(scenario, test_data, node_datasets)
    data = gen_synthetic(cfg.dataset, seed)
    return flsim.run_federated(scenario, data)


def _dataset_echo(cfg: ExperimentConfig) -> dict[str, str]:
    if isinstance(cfg.dataset, CifarSource):
        return {
            "data.source": "cifar10",
            "data.cifar_path": str(cfg.dataset.path),
            "data.cifar_pool": str(cfg.dataset.pool),
            "data.cifar_grayscale": "true" if cfg.dataset.grayscale else "false",
        }
    spec = cfg.dataset
    echo = {
        "data.source": "synthetic",
        "data.num_classes": str(spec.num_classes),
        "data.feature_dim": str(spec.feature_dim),
        "data.samples_per_class": str(spec.samples_per_class),
        "data.separation": format(spec.separation, ".9g"),
        "data.noise_sigma": format(spec.noise_sigma, ".9g"),
    }
    if spec.label_skew:
        echo["data.label_skew"] = ",".join(format(s, ".9g") for s in spec.label_skew)
    if spec.noise_mult:
        echo["data.noise_mult"] = ",".join(format(m, ".9g") for m in spec.noise_mult)
    if spec.feature_scale:
        echo["data.feature_scale"] = ",".join(format(s, ".9g") for s in spec.feature_scale)
    return echo


def execute_seed(cfg: ExperimentConfig, seed: int) -> tuple:
    """Run one seed, write its run directory atomically, return its summary row."""
    run = run_one_seed(cfg, seed)
    run_name = f"{cfg.scenario_name}_seed{seed}"
    final_dir = cfg.output_dir / run_name
    tmp_dir = cfg.output_dir / f".tmp-{run_name}"
    if tmp_dir.exists():
        shutil.rmtree(tmp_dir)
    extra = {"scenario.name": cfg.scenario_name, **_dataset_echo(cfg)}
    if cfg.selection_k is not None:
        extra["selection.k"] = str(cfg.selection_k)
    flsim.save_run(run, tmp_dir, extra_config=extra)
    inputs = analysis.report_inputs_from_run(run)
    analysis.write_reports(tmp_dir, inputs, selection_k=cfg.selection_k)
    if final_dir.exists():
        shutil.rmtree(final_dir)
    tmp_dir.rename(final_dir)

    last = run.rounds[-1]
    corr = {q: (p, s) for q, p, s, _ in analysis.correlation_rows(inputs)}
    return (
        cfg.scenario_name,
        seed,
        last.train_loss,
        last.test_loss,
        last.bound_value,
        corr["mu"][0],
        corr["mu"][1],
        corr["L"][0],
        corr["L"][1],
        corr["G"][0],
        corr["G"][1],
    )


def run_experiment(cfg: ExperimentConfig, parallel: int = 1) -> int:
    """Run every repeat seed, then write the aggregate summary.csv."""
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg.repeat_seeds)
    if parallel > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(execute_seed, [cfg] * len(seeds), seeds))
    else:
        rows = [execute_seed(cfg, seed) for seed in seeds]
    rows.sort(key=lambda row: (row[0], row[1]))
    write_csv(cfg.output_dir / "summary.csv", SUMMARY_HEADER, rows)
    return 0


def _cmd_run(args) -> int:
    cfg = _load_config_with_env(args.config)
    if args.out:
        cfg = replace(cfg, output_dir=Path(args.out))
    return run_experiment(cfg, parallel=args.parallel)


def _cmd_probe(args) -> int:
    cfg = _load_config_with_env(args.config)
    seed = cfg.repeat_seeds[0]
    scenario = replace(cfg.scenario, seed=seed)
    if isinstance(cfg.dataset, CifarSource):
        data = load_cifar10(cfg.dataset.path, cfg.dataset.pool, cfg.dataset.grayscale)
        _, node_datasets = flsim.partition_dataset(
            data, scenario, derive_seed(seed, "partition")
        )
    elif _synthetic_has_knobs(cfg):
        _, node_datasets = gen_synthetic_nodes(
            cfg.dataset,
            scenario.n_nodes,
            scenario.samples_per_node,
            _hetero_test_size(scenario),
            seed,
            scenario.missing_classes,
        )
    else:
        data = gen_synthetic(cfg.dataset, seed)
        _, node_datasets = flsim.partition_dataset(
            data, scenario, derive_seed(seed, "partition")
        )
    w1 = init_params(scenario.model, derive_seed(seed, "init"))
    sampler = flsim.probe_sampler_for(scenario, w1)
    estimates = []
    for i, local in enumerate(node_datasets):
        est = probe.estimate_constants(
            scenario.model, local, scenario.n_probes, sampler,
            derive_seed(seed, "probe", i), scenario.g_formula,
        )
        estimates.append(est)
        print(f"node {i}: mu={est.mu:.9g} L={est.L:.9g} G={est.G:.9g} n_probes={est.n_probes}")
    agg = probe.aggregate_global(estimates)
    print(f"global: mu={agg.mu:.9g} L={agg.L:.9g} G={agg.G:.9g} n_probes={agg.n_probes}")
    return 0


def _cmd_report(args) -> int:
    run_dir = Path(args.run)
    if not (run_dir / "rounds.csv").exists():
        print(f"error: {run_dir} does not look like a run directory", file=sys.stderr)
        return 1
    selection_k = None
    config_file = run_dir / "config.txt"
    if config_file.exists():
        for line in config_file.read_text(encoding="utf-8").splitlines():
            if line.startswith("selection.k"):
                selection_k = int(line.split("=", 1)[1].strip())
    inputs = analysis.report_inputs_from_dir(run_dir)
    analysis.write_reports(run_dir, inputs, selection_k=selection_k)
    print(f"reports regenerated under {run_dir}")
    return 0


def _selftest_gradients(n_cases: int = 20) -> bool:
    rng = spawn_rng("selftest", 0)
    worst = 0.0
    for case in range(n_cases):
        dim = int(rng.integers(2, 6))
        classes = int(rng.integers(2, 5))
        if case % 2 == 0:
            spec = softmax_spec(dim, classes, l2=float(rng.uniform(0, 0.2)))
        else:
            spec = mlp_spec(dim, classes, int(rng.integers(2, 5)), l2=float(rng.uniform(0, 0.2)))
        n = int(rng.integers(2, 8))
        data = Dataset(rng.uniform(0, 1, (n, dim)), rng.integers(0, classes, n), classes)
        params = init_params(spec, 1000 + case)
        analytic = gradient(spec, params, data)
        numeric = finite_difference_gradient(spec, params, data)
        denom = max(float(np.abs(analytic).max()), 1e-8)
        worst = max(worst, float(np.abs(analytic - numeric).max()) / denom)
    ok = worst <= 1e-5
    print(f"{'PASS' if ok else 'FAIL'} gradient-vs-finite-difference (max rel err {worst:.3g})")
    return ok


def _selftest_quadratic() -> bool:
    data = Dataset(np.full((1, 2), 0.5), np.zeros(1, dtype=np.int64), 1)
    sampler = probe.InitDistributionSampler()
    spec = quadratic_spec([1.0, 4.0])
    samples = probe.collect_probes(spec, data, 1000, sampler, rng_seed=7)
    m_values = [s.m_value for s in samples]
    ok_diag = min(m_values) >= 1.0 - 1e-9 and max(m_values) <= 4.0 + 1e-9
    print(f"{'PASS' if ok_diag else 'FAIL'} quadratic probe bracket "
          f"(m in [{min(m_values):.6f}, {max(m_values):.6f}], expected [1, 4])")
    ident = quadratic_spec([1.0, 1.0, 1.0])
    est = probe.estimate_constants(ident, data, 200, sampler, rng_seed=8)
    ok_ident = abs(est.mu - 1.0) <= 1e-9 and abs(est.L - 1.0) <= 1e-9
    print(f"{'PASS' if ok_ident else 'FAIL'} identity curvature (mu={est.mu:.12f}, L={est.L:.12f})")
    return ok_diag and ok_ident


def _selftest_bound() -> bool:
    p = BoundParams(mu=1.0, L=2.0, G=1.0, init_distance=1.0)
    first = convergence_bound(1, p)
    mid = convergence_bound(17, p)
    ok = abs(first - 24.0) < 1e-12 and abs(mid - 12.0) < 1e-12
    print(f"{'PASS' if ok else 'FAIL'} bound arithmetic (t=1 -> {first}, t=17 -> {mid})")
    return ok


def _cmd_selftest(_args) -> int:
    results = [_selftest_gradients(), _selftest_quadratic(), _selftest_bound()]
    return 0 if all(results) else 1


def _load_config_with_env(path: str) -> ExperimentConfig:
    cfg = load_config(path)
    env_seed = os.environ.get("FEDBOUND_SEED")
    if env_seed is not None:
        seed = int(env_seed)
        cfg = replace(
            cfg,
            scenario=replace(cfg.scenario, seed=seed),
            repeat_seeds=(seed,),
        )
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedbound", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the full experiment pipeline")
    run_p.add_argument("--config", required=True, help="path to a key = value config file")
    run_p.add_argument("--out", default=None, help="override the output directory")
    run_p.add_argument("--parallel", type=int, default=1, help="seeds to run in parallel")
    run_p.set_defaults(func=_cmd_run)

    probe_p = sub.add_parser("probe", help="estimate constants only")
    probe_p.add_argument("--config", required=True)
    probe_p.set_defaults(func=_cmd_probe)

    report_p = sub.add_parser("report", help="re-run analysis on a run directory")
    report_p.add_argument("--run", required=True)
    report_p.set_defaults(func=_cmd_report)

    selftest_p = sub.add_parser("selftest", help="gradient and probe-oracle checks")
    selftest_p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
