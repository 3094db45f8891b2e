"""シミュレーション（シナリオ生成と実験ドライバー）のテスト"""

import json
import math

import numpy as np
import pytest

from nullspread.errors import ConfigError, EstimationError
from simulation.experiments import (
    T_TEST,
    fdp_and_sensitivity,
    fdr_power_experiment,
    relative_error,
    roc_experiment,
    roc_points,
    run_replications,
    runtime_ratio,
    sensitivity_at_fdp,
    tau_error_experiment,
)
from simulation.scenario import (
    ExperimentOptions,
    ScenarioConfig,
    gen_scenario,
    load_simulation_config,
    load_variance_file,
)


def small_config(**changes):
    base = ScenarioConfig(n_genes=300, m1=4, m0=4, gamma=0.05, tau=0.5, seed=123, reps=2)
    return base.replace(**changes)


class TestScenarioConfig:
    def test_nonnull_count(self):
        assert ScenarioConfig(n_genes=15000, gamma=0.01).n_nonnull == 150
        assert ScenarioConfig(n_genes=99, gamma=0.05).n_nonnull == 4

    @pytest.mark.parametrize(
        "changes",
        [
            {"gamma": 1.0},
            {"tau": -0.1},
            {"noise": "cauchy"},
            {"design": "paired", "m0": 3},
            {"m1": 1},
            {"variance_source": "empirical"},
            {"reps": 0},
            {"n_genes": 100.5},
            {"reps": 2.0},
            {"m1": True},
            {"seed": 1.5},
            {"m0": "4"},
            {"tau": "1"},
        ],
    )
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            small_config(**changes)

    def test_from_dict_unknown_key(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"n_genes": 10, "sigma": 1.0})

    def test_dict_round_trip(self):
        config = small_config(noise="laplacian")
        assert ScenarioConfig.from_dict(config.to_dict()) == config


class TestGenScenario:
    def test_pure_null_has_zero_effects(self):
        scenario = gen_scenario(small_config(gamma=0.0, tau=0.0), 0)
        assert not scenario.is_nonnull.any()
        assert np.all(scenario.mu == 0.0)

    def test_nonnull_layout(self):
        scenario = gen_scenario(ScenarioConfig(n_genes=15000, gamma=0.01, tau=1.0, reps=1), 0)
        assert scenario.is_nonnull.sum() == 150
        assert scenario.is_nonnull[:150].all()
        mu = scenario.mu[:150]
        assert np.all(mu[:75] > 0) and np.all(mu[75:] < 0)
        assert np.all((np.abs(mu) >= 1.0) & (np.abs(mu) <= 10.0))

    def test_deterministic_per_replication(self):
        config = small_config()
        first = gen_scenario(config, 1)
        again = gen_scenario(config, 1)
        other = gen_scenario(config, 2)
        np.testing.assert_array_equal(first.matrix.values.to_numpy(), again.matrix.values.to_numpy())
        assert not np.array_equal(first.matrix.values.to_numpy(), other.matrix.values.to_numpy())

    def test_chisq_variances_have_unit_mean(self):
        scenario = gen_scenario(small_config(), 0)
        assert scenario.sigma2.mean() == pytest.approx(1.0)
        assert np.all(scenario.sigma2 > 0)

    @pytest.mark.parametrize("noise", ["gaussian", "laplacian"])
    def test_noise_variance(self, noise):
        config = ScenarioConfig(
            n_genes=20_000, m1=2, m0=5, gamma=0.0, tau=0.0, noise=noise,
            variance_source="constant", variance_value=2.0, seed=9, reps=1,
        )
        scenario = gen_scenario(config, 0)
        control = scenario.matrix.values.iloc[:, 2:].to_numpy()
        assert control.mean() == pytest.approx(0.0, abs=0.05)
        assert control.var() == pytest.approx(2.0, abs=0.1)

    def test_paired_design(self):
        scenario = gen_scenario(small_config(design="paired"), 0)
        assert scenario.matrix.batches == ("p1", "p2", "p3", "p4") * 2
        table = scenario.summaries()
        assert len(table) == 300
        assert np.all(table.df_sigma == 3.0)

    def test_one_sample_design(self):
        scenario = gen_scenario(small_config(design="one_sample"), 0)
        assert list(scenario.matrix.values.columns) == ["d1", "d2", "d3", "d4"]
        assert np.all(scenario.summaries().df_sigma == 3.0)

    def test_gene_ids_sortable(self):
        ids = gen_scenario(small_config(), 0).matrix.gene_ids
        assert ids[0] == "g001" and ids == sorted(ids)


class TestVarianceFile:
    def test_empirical_pool(self, write_text):
        path = write_text("variances.txt", "# variances\n1.0\n3.0\n")
        np.testing.assert_allclose(load_variance_file(path), [0.5, 1.5])
        scenario = gen_scenario(small_config(variance_source="empirical", variance_file=path), 0)
        assert set(np.unique(scenario.sigma2)) <= {0.5, 1.5}

    def test_missing_file(self, tmp_path):
        config = small_config(variance_source="empirical", variance_file=str(tmp_path / "none.txt"))
        with pytest.raises(ConfigError) as excinfo:
            gen_scenario(config, 0)
        assert excinfo.value.reason == "variance_file_missing"

    def test_empty_file(self, write_text):
        path = write_text("empty.txt", "")
        with pytest.raises(ConfigError) as excinfo:
            load_variance_file(path)
        assert excinfo.value.reason == "variance_file_empty"

    def test_nonpositive_value(self, write_text):
        path = write_text("bad.txt", "1.0\n-2.0\n")
        with pytest.raises(ConfigError):
            load_variance_file(path)


class TestSimulationConfig:
    def test_load(self, write_text):
        path = write_text(
            "sim.json",
            json.dumps({"scenario": {"n_genes": 500, "tau": 1.0}, "taus": [0, 1], "alpha1": 0.05}),
        )
        config, options = load_simulation_config(path)
        assert config.n_genes == 500 and config.tau == 1.0
        assert options.taus == (0, 1)
        assert options.alpha1 == 0.05
        assert options.gammas == ExperimentOptions().gammas

    @pytest.mark.parametrize(
        "text",
        [
            "{not json",
            json.dumps([1, 2]),
            json.dumps({"scenario": {}, "extra": 1}),
            json.dumps({"taus": [-1.0]}),
            json.dumps({"gammas": []}),
            json.dumps({"alpha2": 2.0}),
            json.dumps({"scenario": {"m1": 1}}),
            json.dumps({"scenario": {"n_genes": 100.5, "reps": 1}}),
        ],
    )
    def test_invalid(self, write_text, text):
        with pytest.raises(ConfigError):
            load_simulation_config(write_text("sim.json", text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_simulation_config(str(tmp_path / "missing.json"))


def brute_force_fdp(rejected, is_nonnull):
    r = sum(rejected)
    v = sum(1 for rej, nn in zip(rejected, is_nonnull) if rej and not nn)
    s = sum(1 for rej, nn in zip(rejected, is_nonnull) if rej and nn)
    n1 = sum(is_nonnull)
    return v / max(r, 1), (s / n1 if n1 else None)


class TestMetrics:
    def test_fdp_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 11))
            rejected = (rng.uniform(size=n) < 0.5).tolist()
            is_nonnull = (rng.uniform(size=n) < 0.3).tolist()
            assert fdp_and_sensitivity(rejected, is_nonnull) == brute_force_fdp(rejected, is_nonnull)

    def test_roc_perfect_separation(self):
        fdp, sensitivity = roc_points([0.001, 0.5, 0.002, 0.6], [True, False, True, False])
        points = list(zip(fdp.tolist(), sensitivity.tolist()))
        assert points[0] == (0.0, 0.0)
        assert (0.0, 1.0) in points
        assert points[-1] == (0.5, 1.0)

    def test_roc_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 11))
            p = rng.uniform(size=n)
            is_nonnull = rng.uniform(size=n) < 0.4
            fdp, sensitivity = roc_points(p, is_nonnull)
            order = np.argsort(p, kind="stable")
            for k in range(n + 1):
                rejected = np.zeros(n, dtype=bool)
                rejected[order[:k]] = True
                expected_fdp, expected_sens = brute_force_fdp(rejected.tolist(), is_nonnull.tolist())
                assert fdp[k] == pytest.approx(expected_fdp)
                assert sensitivity[k] == pytest.approx(expected_sens or 0.0)
            assert np.all(np.diff(sensitivity) >= 0)

    def test_relative_error(self):
        assert relative_error(1.1, 1.0) == pytest.approx(0.1 / 1.1)
        assert relative_error(0.0, 0.0) == 0.0


class TestExperiments:
    def test_run_replications_ordered(self):
        assert run_replications(lambda i: i * i, 6, threads=3) == [0, 1, 4, 9, 16, 25]
        assert run_replications(lambda i: i, 3, threads=1) == [0, 1, 2]

    def test_roc_experiment(self):
        curve = roc_experiment(small_config(gamma=0.1, tau=0.0), method=T_TEST, threads=2)
        assert curve.rejections.tolist() == list(range(301))
        assert curve.points[0] == (0.0, 0.0)
        assert curve.sensitivity[-1] == pytest.approx(1.0)
        assert 0.0 <= sensitivity_at_fdp(curve, 0.1) <= 1.0
        frame = curve.to_frame()
        assert list(frame.columns) == ["method", "rejections", "fdp", "sensitivity"]

    def test_roc_unknown_method(self):
        with pytest.raises(ConfigError):
            roc_experiment(small_config(), method="wilcoxon")

    def test_tau_error_with_true_value(self):
        def true_value(table):
            return 0.25

        frame = tau_error_experiment(small_config(), methods=[true_value], taus=[0.5], gammas=[0.05])
        assert frame.loc[0, "mean_relative_error"] == 0.0
        assert frame.loc[0, "failures"] == 0
        assert frame.loc[0, "method"] == "true_value"

    def test_tau_error_counts_failures(self):
        def broken(table):
            raise EstimationError("no estimate")

        frame = tau_error_experiment(small_config(), methods=[broken, "iteb"])
        broken_row = frame[frame["method"] == "broken"].iloc[0]
        assert broken_row["failures"] == 2
        assert math.isnan(broken_row["mean_relative_error"])
        assert frame[frame["method"] == "iteb"].iloc[0]["failures"] == 0

    def test_tau_error_grid(self):
        frame = tau_error_experiment(
            small_config(), methods=["iteb", "cm"], taus=[0.0, 1.0], gammas=[0.0, 0.05]
        )
        assert len(frame) == 8
        assert set(frame["method"]) == {"iteb", "cm"}

    def test_tau_error_needs_two_reps(self):
        with pytest.raises(ConfigError):
            tau_error_experiment(small_config(reps=1), methods=["iteb"])

    def test_fdr_power_without_signals(self):
        result = fdr_power_experiment(small_config(gamma=0.0), threads=2)
        assert result.power is None and result.oracle_power is None
        assert 0.0 <= result.mean_fdp <= 1.0
        assert result.reps == 2 and result.failures == 0

    def test_fdr_power_with_signals(self):
        result = fdr_power_experiment(small_config(gamma=0.1, tau=0.5, reps=3))
        assert 0.0 <= result.power <= 1.0
        assert 0.0 <= result.oracle_power <= 1.0
        assert result.fdp_se is not None
        assert list(result.to_frame().columns)[:2] == ["mean_fdp", "fdp_se"]

    def test_runtime_ratio(self):
        timings = runtime_ratio(small_config(n_genes=400))
        assert set(timings) == {"iteb_seconds", "tmle_seconds", "ratio"}
        assert timings["tmle_seconds"] > 0
