import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedbound.analysis import (
    CDFSeries,
    ReportInputs,
    UsefulnessRecord,
    correlate,
    correlation_rows,
    empirical_cdf,
    node_usefulness,
    report_inputs_from_dir,
    report_inputs_from_run,
    select_nodes,
    usefulness_from_rounds,
    write_reports,
)
from fedbound.data import SyntheticSpec, gen_synthetic
from fedbound.flsim import FLRun, RoundRecord, ScenarioConfig, run_federated, save_run
from fedbound.model import softmax_spec
from fedbound.probe import ConstantsEstimate


def run_with_deltas(per_round_deltas):
    n_nodes = len(per_round_deltas[0])
    cfg = ScenarioConfig(
        n_nodes=n_nodes, samples_per_node=1, rounds=len(per_round_deltas), n_probes=2
    )
    records = tuple(
        RoundRecord(
            t=i + 1,
            train_loss=1.0,
            test_loss=1.0,
            bound_value=1.0,
            per_node_usefulness=dict(deltas),
            training_g_values=(),
        )
        for i, deltas in enumerate(per_round_deltas)
    )
    const = ConstantsEstimate(0.5, 1.0, 1.0, 2)
    w = np.zeros(3)
    node_ids = sorted(per_round_deltas[0])
    return FLRun(
        config=cfg,
        rounds=records,
        final_params=w,
        global_constants=const,
        node_constants={i: const for i in node_ids},
        probe_samples={i: () for i in node_ids},
        initial_params=w,
        wstar_proxy=w,
        init_distance=0.0,
    )


class TestNodeUsefulness:
    def test_mean_of_round_deltas(self):
        run = run_with_deltas([{0: 0.5}, {0: 0.3}])
        records = node_usefulness(run)
        assert len(records) == 1
        assert records[0].node_id == 0
        assert records[0].usefulness == pytest.approx(0.4)

    def test_single_round_is_identity(self):
        run = run_with_deltas([{0: 0.7, 1: -0.2}])
        records = node_usefulness(run)
        assert records[0].usefulness == pytest.approx(0.7)
        assert records[1].usefulness == pytest.approx(-0.2)

    def test_zero_lr_run_gives_all_zero(self):
        data = gen_synthetic(
            SyntheticSpec(num_classes=3, feature_dim=4, samples_per_class=60), seed=0
        )
        cfg = ScenarioConfig(
            n_nodes=2, samples_per_node=30, rounds=2, model=softmax_spec(4, 3),
            lr=0.0, batch_size=30, n_probes=2, seed=1,
        )
        run = run_federated(cfg, data)
        assert all(r.usefulness == 0.0 for r in node_usefulness(run))

    def test_concatenation_linearity(self):
        first = run_with_deltas([{0: 0.4}, {0: 0.8}])
        second = run_with_deltas([{0: -0.2}, {0: 0.6}])
        merged = usefulness_from_rounds(first.rounds + second.rounds)
        a = node_usefulness(first)[0].usefulness
        b = node_usefulness(second)[0].usefulness
        assert merged[0].usefulness == pytest.approx((a + b) / 2)

    def test_empty_rounds_rejected(self):
        with pytest.raises(ValueError):
            usefulness_from_rounds(())


class TestCorrelate:
    def test_perfect_linear(self):
        pearson, spearman = correlate([1, 2, 3], [2, 4, 6])
        assert pearson == pytest.approx(1.0, abs=1e-12)
        assert spearman == pytest.approx(1.0, abs=1e-12)

    def test_monotone_nonlinear(self):
        pearson, spearman = correlate([1, 2, 3], [1, 8, 27])
        assert pearson < 1.0
        assert spearman == pytest.approx(1.0, abs=1e-12)

    def test_anticorrelation(self):
        x = [1.0, 2.0, 5.0, 9.0]
        pearson, spearman = correlate(x, [-v for v in x])
        assert pearson == pytest.approx(-1.0, abs=1e-12)
        assert spearman == pytest.approx(-1.0, abs=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            correlate([1, 2, 3], [1, 2])

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            correlate([1, 2], [3, 4])

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            correlate([1, 1, 1], [1, 2, 3])

    @given(
        st.lists(st.integers(-1000, 1000), min_size=4, max_size=20, unique=True),
        st.floats(min_value=0.01, max_value=50),
        st.floats(-100, 100),
    )
    @settings(max_examples=60, deadline=None)
    def test_pearson_invariant_under_positive_affine_maps(self, xs, scale, shift):
        # Integer-valued inputs keep the affine map collision-free in float64.
        rng = np.random.default_rng(0)
        ys = rng.permutation(len(xs)).astype(float)
        base_p, base_s = correlate(xs, ys)
        mapped_p, mapped_s = correlate([scale * x + shift for x in xs], ys)
        assert mapped_p == pytest.approx(base_p, abs=1e-9)
        assert mapped_s == pytest.approx(base_s, abs=1e-12)

    @given(st.lists(st.floats(0.1, 50), min_size=4, max_size=15, unique=True))
    @settings(max_examples=40, deadline=None)
    def test_spearman_invariant_under_monotone_transform(self, xs):
        ys = list(range(len(xs)))
        _, base = correlate(xs, ys)
        _, cubed = correlate([x ** 3 for x in xs], ys)
        assert cubed == pytest.approx(base, abs=1e-12)


class TestEmpiricalCdf:
    def test_counting_example(self):
        series = empirical_cdf([1.0, 2.0, 3.0])
        assert series.values == (1.0, 2.0, 3.0)
        assert series.fractions[1] == pytest.approx(2 / 3)
        assert series.fractions[-1] == 1.0

    def test_all_equal_single_step(self):
        series = empirical_cdf([5.0, 5.0, 5.0])
        assert series.values == (5.0,)
        assert series.fractions == (1.0,)

    def test_order_invariant(self):
        a = empirical_cdf([3.0, 1.0, 2.0, 1.0])
        b = empirical_cdf([1.0, 1.0, 2.0, 3.0])
        assert a == b

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            empirical_cdf([])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
    @settings(max_examples=60, deadline=None)
    def test_valid_distribution_function(self, values):
        series = empirical_cdf(values)
        assert series.fractions[-1] == 1.0
        assert all(b > a for a, b in zip(series.fractions, series.fractions[1:]))
        assert all(b > a for a, b in zip(series.values, series.values[1:]))

    def test_series_type_validates(self):
        with pytest.raises(ValueError):
            CDFSeries(values=(1.0, 1.0), fractions=(0.5, 1.0))
        with pytest.raises(ValueError):
            CDFSeries(values=(1.0, 2.0), fractions=(0.5, 0.9))


def estimates(**by_node):
    return [
        (int(name[1:]), ConstantsEstimate(mu=v[0], L=v[1], G=v[2], n_probes=2))
        for name, v in sorted(by_node.items())
    ]


class TestSelectNodes:
    def test_top_l_argmax(self):
        pairs = estimates(n1=(0.1, 0.5, 1.0), n2=(0.1, 2.0, 1.0))
        assert select_nodes(pairs, 1, "top-L") == {2}

    def test_k_equals_n_returns_all(self):
        pairs = estimates(n1=(0.1, 0.5, 1.0), n2=(0.1, 2.0, 1.0), n3=(0.1, 1.0, 1.0))
        for policy in ("top-L", "top-G", "bottom-mu", "all"):
            assert select_nodes(pairs, 3, policy, rng_seed=0) == {1, 2, 3}

    def test_ties_break_by_ascending_id(self):
        pairs = estimates(n5=(0.1, 1.0, 1.0), n2=(0.1, 1.0, 1.0), n9=(0.1, 1.0, 1.0))
        assert select_nodes(pairs, 2, "top-L") == {2, 5}

    def test_bottom_mu_takes_smallest(self):
        pairs = estimates(n1=(0.5, 1.0, 1.0), n2=(0.1, 1.0, 1.0), n3=(0.9, 1.0, 1.0))
        assert select_nodes(pairs, 1, "bottom-mu") == {2}

    def test_random_is_seeded_and_valid(self):
        pairs = estimates(n1=(0.1, 1.0, 1.0), n2=(0.1, 1.0, 1.0), n3=(0.1, 1.0, 1.0))
        a = select_nodes(pairs, 2, "random", rng_seed=4)
        b = select_nodes(pairs, 2, "random", rng_seed=4)
        assert a == b
        assert len(a) == 2 and a <= {1, 2, 3}

    def test_k_out_of_range_rejected(self):
        pairs = estimates(n1=(0.1, 1.0, 1.0))
        with pytest.raises(ValueError):
            select_nodes(pairs, 2, "top-L")
        with pytest.raises(ValueError):
            select_nodes(pairs, 0, "top-L")

    @given(st.floats(min_value=0.01, max_value=100))
    @settings(max_examples=30, deadline=None)
    def test_invariant_under_uniform_rescaling(self, scale):
        pairs = estimates(n1=(0.1, 0.5, 3.0), n2=(0.2, 2.0, 1.0), n3=(0.3, 1.0, 2.0))
        scaled = [
            (i, ConstantsEstimate(c.mu * scale, c.L * scale, c.G * scale, c.n_probes))
            for i, c in pairs
        ]
        for policy in ("top-L", "top-G", "bottom-mu"):
            assert select_nodes(scaled, 2, policy) == select_nodes(pairs, 2, policy)


class TestReports:
    def make_inputs(self):
        return ReportInputs(
            usefulness=tuple(UsefulnessRecord(i, float(i) * 0.1) for i in range(4)),
            node_constants={
                i: ConstantsEstimate(0.1 * (i + 1), 1.0 + i, 2.0 - 0.3 * i, 5)
                for i in range(4)
            },
            probe_g=(1.0, 2.0, 3.0),
            training_g=(0.5, 0.25),
            seed=3,
        )

    def test_report_files_and_schemas(self, tmp_path):
        write_reports(tmp_path, self.make_inputs())
        corr = (tmp_path / "correlations.csv").read_text().splitlines()
        assert corr[0] == "quantity,pearson,spearman,n"
        assert [line.split(",")[0] for line in corr[1:]] == ["mu", "L", "G"]
        cdf = (tmp_path / "cdf_probe.csv").read_text().splitlines()
        assert cdf[0] == "value,fraction"
        assert len(cdf) == 4
        sel = (tmp_path / "selection.csv").read_text().splitlines()
        assert sel[0] == "policy,k,chosen"
        assert len(sel) == 6
        top_l = next(line for line in sel if line.startswith("top-L"))
        assert top_l == "top-L,2,2;3"

    def test_degenerate_correlations_are_nan(self, tmp_path):
        inputs = ReportInputs(
            usefulness=tuple(UsefulnessRecord(i, 0.1 * i) for i in range(3)),
            node_constants={i: ConstantsEstimate(0.5, 1.0, 1.0, 5) for i in range(3)},
            probe_g=(1.0,),
            training_g=(),
            seed=0,
        )
        rows = correlation_rows(inputs)
        assert all(np.isnan(p) and np.isnan(s) for _, p, s, _ in rows)
        write_reports(tmp_path, inputs)
        assert "nan" in (tmp_path / "correlations.csv").read_text()
        assert (tmp_path / "cdf_training.csv").read_text().splitlines() == ["value,fraction"]

    def test_roundtrip_through_run_directory(self, tmp_path):
        data = gen_synthetic(
            SyntheticSpec(num_classes=3, feature_dim=4, samples_per_class=80), seed=2
        )
        cfg = ScenarioConfig(
            n_nodes=3, samples_per_node=40, rounds=3, model=softmax_spec(4, 3, l2=0.01),
            lr=0.1, batch_size=20, n_probes=4, seed=5,
        )
        run = run_federated(cfg, data)
        save_run(run, tmp_path)
        direct = report_inputs_from_run(run)
        parsed = report_inputs_from_dir(tmp_path)
        assert parsed.seed == 5
        assert len(parsed.usefulness) == 3
        for a, b in zip(direct.usefulness, parsed.usefulness):
            assert b.usefulness == pytest.approx(a.usefulness, rel=1e-6)
        for i in range(3):
            assert parsed.node_constants[i].L == pytest.approx(
                direct.node_constants[i].L, rel=1e-8
            )
        assert len(parsed.probe_g) == len(direct.probe_g)
        assert len(parsed.training_g) == len(direct.training_g)
