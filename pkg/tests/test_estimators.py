"""τ² 推定量のテスト"""

import json
import math

import numpy as np
import pytest
from scipy import stats

from conftest import make_table, null_table
from nullspread.errors import DomainError, EstimationError
from nullspread.estimators import (
    CM,
    ITEB,
    TMLE,
    ItebConfig,
    central_matching,
    curvature,
    eb_pilot,
    estimate_tau2,
    iteb,
    solve_curvature_equation,
    truncated_mle,
)


def scaled(table, c):
    return make_table(c * table.xbar, c * c * table.s2, table.df_sigma)


class TestEbPilot:
    def test_all_zero(self):
        assert eb_pilot(make_table(np.zeros(5), 0.0), 0.1) == 0.0

    def test_single_gene(self):
        assert eb_pilot(make_table([math.sqrt(5.0)], 1.0), 0.0) == pytest.approx(4.0)

    def test_clamped_at_zero(self):
        table = make_table([0.1, -0.1], 1.0)
        assert eb_pilot(table, 0.0) == 0.0
        assert eb_pilot(table, 0.0, clamp=False) == pytest.approx(0.01 - 1.0)

    def test_unbiased_with_zero_delta(self):
        table = null_table(200_000, tau2=0.5, sigma2=1.0, df=8.0, seed=3)
        assert eb_pilot(table, 0.0) == pytest.approx(0.5, abs=0.03)

    def test_empty_and_negative_delta(self):
        with pytest.raises(DomainError):
            eb_pilot([], 0.1)
        with pytest.raises(DomainError):
            eb_pilot(make_table([1.0], 1.0), -0.5)


class TestItebConfig:
    def test_resolve_defaults(self):
        config = ItebConfig().resolve(200)
        assert config.delta == pytest.approx(0.2)
        assert config.max_iterations == 200
        assert (config.alpha1, config.alpha2) == (0.1, 0.01)

    @pytest.mark.parametrize("kwargs", [{"alpha1": 0.0}, {"alpha1": 1.0}, {"alpha2": 0.0}, {"delta": -1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            ItebConfig(**kwargs)


class TestIteb:
    def test_all_zero_effects(self):
        estimate = iteb(make_table(np.zeros(50), 1.0))
        assert estimate.tau2 == 0.0
        assert estimate.iterations == 1
        assert estimate.removed_set == ()
        assert estimate.diagnostics["converged"]

    def test_recovers_tau2_with_signals(self):
        table = null_table(5000, tau2=1.0, sigma2=1.0, n_signal=50, signal=15.0, seed=1)
        estimate = iteb(table)
        assert estimate.method == ITEB
        assert estimate.tau2 == pytest.approx(1.0, abs=0.25)
        # 強い信号はすべて取り除かれる
        assert {f"g{i}" for i in range(50)} <= set(estimate.removed_set)

    def test_trace_nonincreasing(self):
        rng = np.random.default_rng(10)
        for k in range(100):
            gamma = 0.3 if k % 4 == 0 else float(rng.uniform(0.0, 0.1))
            n = int(rng.integers(200, 800))
            table = null_table(
                n,
                tau2=float(rng.uniform(0.0, 2.0)),
                sigma2=float(rng.uniform(0.2, 2.0)),
                df=float(rng.choice([3, 4, 8])),
                seed=k,
                n_signal=int(gamma * n),
                signal=float(rng.uniform(3.0, 10.0)),
            )
            trace = np.array(iteb(table).trace)
            assert np.all(np.diff(trace) <= 0), f"dataset {k}: {trace}"

    def test_sets_partition_ids(self):
        table = null_table(1000, tau2=0.5, n_signal=100, seed=2)
        estimate = iteb(table)
        assert set(estimate.surviving_set) | set(estimate.removed_set) == set(table.ids)
        assert not set(estimate.surviving_set) & set(estimate.removed_set)
        assert len(estimate.trace) == estimate.iterations
        assert estimate.surviving_mask.sum() == len(estimate.surviving_set)

    def test_removed_genes_never_return(self):
        table = null_table(1000, tau2=0.5, n_signal=100, seed=4)
        one = iteb(table, ItebConfig(max_iterations=1))
        two = iteb(table, ItebConfig(max_iterations=2))
        full = iteb(table)
        assert set(one.removed_set) <= set(two.removed_set) <= set(full.removed_set)

    def test_scale_equivariance_exact(self):
        table = null_table(2000, tau2=0.8, n_signal=40, seed=5)
        config = ItebConfig(delta=0.05)
        base = iteb(table, config)
        doubled = iteb(scaled(table, 2.0), config)
        np.testing.assert_array_equal(np.array(doubled.trace), 4.0 * np.array(base.trace))
        assert doubled.removed_set == base.removed_set

    def test_all_hypotheses_removed(self):
        table = make_table([100.0, -100.0], 1e-4)
        with pytest.raises(EstimationError) as excinfo:
            iteb(table, ItebConfig(delta=1e9))
        assert excinfo.value.reason == "all_hypotheses_removed"

    def test_too_few_genes(self):
        with pytest.raises(DomainError):
            iteb(make_table([1.0], 1.0))

    def test_to_dict_serializable(self):
        estimate = iteb(null_table(300, tau2=0.5, n_signal=5, seed=6))
        data = json.loads(json.dumps(estimate.to_dict()))
        assert data["method"] == ITEB
        assert data["diagnostics"]["n_genes"] == 300


class TestTruncatedMle:
    def test_empty_window(self):
        with pytest.raises(EstimationError) as excinfo:
            truncated_mle(make_table([0.1, 0.2, 0.3, 0.4, 0.5], 1.0))
        assert excinfo.value.reason == "empty_window"

    def test_objective_nonincreasing(self):
        estimate = truncated_mle(null_table(2000, tau2=0.5, n_signal=20, seed=7))
        history = np.array(estimate.diagnostics["objective_history"])
        assert np.all(np.diff(history) <= 1e-9 * np.abs(history[:-1]))

    def test_recovers_tau2(self):
        estimate = truncated_mle(null_table(5000, tau2=1.0, sigma2=1.0, n_signal=50, seed=8))
        assert estimate.method == TMLE
        assert estimate.tau2 == pytest.approx(1.0, abs=0.4)
        assert estimate.diagnostics["window_size"] >= 0.75 * 5000

    def test_orders_by_spread(self):
        small = truncated_mle(null_table(3000, tau2=0.0, seed=9)).tau2
        large = truncated_mle(null_table(3000, tau2=2.0, seed=9)).tau2
        assert 0.0 <= small < large

    def test_scale_equivariance(self):
        table = null_table(1000, tau2=0.8, seed=10)
        base = truncated_mle(table)
        doubled = truncated_mle(scaled(table, 2.0))
        assert doubled.tau2 == pytest.approx(4.0 * base.tau2, rel=1e-3, abs=1e-4)

    def test_invalid_leave_out(self):
        with pytest.raises(DomainError):
            truncated_mle(null_table(100, 0.5), leave_out=1.0)


class TestCentralMatching:
    def test_curvature_values(self):
        assert curvature([1.0], 0.0) == pytest.approx(0.5)
        assert curvature([1.0, 1.0], 1.0) == pytest.approx(0.25)

    def test_solve_curvature_equation(self):
        tau2, unbracketed = solve_curvature_equation([1.0, 1.0], 0.25, 10.0, grid_tol=1e-10)
        assert tau2 == pytest.approx(1.0, abs=1e-8)
        assert not unbracketed

    def test_boundary_root_is_zero(self):
        assert solve_curvature_equation([1.0], 1.0, 10.0) == (0.0, False)

    def test_unbracketed_returns_upper(self):
        assert solve_curvature_equation([1.0], 1e-6, 10.0) == (10.0, True)

    def test_noiseless_density_recovery(self):
        tau2 = 0.7
        rng = np.random.default_rng(11)
        table = make_table(rng.normal(0.0, math.sqrt(1.0 + tau2), size=500), 1.0, df=8.0)
        estimate = central_matching(
            table, density=lambda x: stats.norm.pdf(x, scale=math.sqrt(1.0 + tau2)), grid_tol=1e-8
        )
        assert estimate.method == CM
        assert estimate.tau2 == pytest.approx(tau2, abs=1e-6)
        assert estimate.diagnostics["beta2"] == pytest.approx(1.0 / (2.0 * (1.0 + tau2)))

    def test_narrow_density_gives_zero(self):
        table = make_table(np.random.default_rng(12).normal(size=500), 1.0)
        estimate = central_matching(table, density=lambda x: stats.norm.pdf(x, scale=math.sqrt(0.5)))
        assert estimate.tau2 == 0.0

    def test_nonpositive_curvature_fails(self):
        table = make_table(np.random.default_rng(13).normal(size=500), 1.0)
        with pytest.raises(EstimationError) as excinfo:
            central_matching(table, density=lambda x: np.exp(x * x))
        assert excinfo.value.reason == "central_matching_failed"

    def test_histogram_estimate(self):
        tau2 = 1.0
        table = make_table(np.random.default_rng(14).normal(0.0, math.sqrt(1.0 + tau2), size=20_000), 1.0)
        estimate = central_matching(table)
        assert estimate.tau2 == pytest.approx(tau2, abs=0.4)
        assert estimate.diagnostics["populated_bins"] >= 100

    def test_too_few_bins(self):
        with pytest.raises(DomainError):
            central_matching(null_table(500, 0.5), n_bins=5)


class TestEstimateTau2:
    def test_dispatch_case_insensitive(self):
        table = null_table(500, tau2=0.5, n_signal=5, seed=15)
        assert estimate_tau2(table, "ITEB").tau2 == iteb(table).tau2

    def test_ignores_foreign_and_none_options(self):
        table = null_table(500, tau2=0.5, seed=16)
        estimate = estimate_tau2(table, "iteb", n_bins=50, leave_out=0.3, delta=None, alpha1=0.05)
        assert estimate.diagnostics["alpha1"] == 0.05

    def test_cm_options(self):
        table = null_table(3000, tau2=0.5, seed=17)
        estimate = estimate_tau2(table, "cm", n_bins=60, alpha1=0.2)
        assert estimate.diagnostics["n_bins"] == 60

    def test_unknown_method(self):
        with pytest.raises(DomainError) as excinfo:
            estimate_tau2(make_table([1.0, 2.0], 1.0), "mom")
        assert excinfo.value.reason == "unknown_method"
