"""Least-squares fits, F-test, MSE protocol and model comparison."""

import numpy as np
import pytest

from arealtrend.data import ArealPanel
from arealtrend.evaluate import (
    compare_models,
    f_test_units,
    fit_bayes,
    fit_ols,
    mse,
    mse_cv,
    write_comparison_csv,
)
from arealtrend.model import ChainSettings, ModelConfig, ModelFamily
from arealtrend.synthgen import SyntheticSpec, grid_graph, path_graph, simulate


def _linear_panel(n=5, T=6, alpha=None, beta=None, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    alpha = rng.normal(1.0, 0.5, n) if alpha is None else np.asarray(alpha)
    beta = rng.normal(-0.05, 0.05, n) if beta is None else np.asarray(beta)
    t = np.arange(1, T + 1)
    y = alpha[:, None] + np.outer(beta, t)
    if noise:
        y = y + rng.normal(0, noise, (n, T))
    ids = tuple(f"u{i:03d}" for i in range(n))
    periods = tuple(2006 + k for k in range(T))
    counts = np.zeros((n, T), dtype=np.int64)
    return ArealPanel(ids, periods, counts, y=y), alpha, beta


class TestFitOls:
    def test_noiseless_per_unit_fit_is_exact(self):
        panel, alpha, beta = _linear_panel()
        fit = fit_ols(panel, None, ModelFamily.NO_SHRINKAGE)
        np.testing.assert_allclose(fit.alpha, alpha, atol=1e-10)
        np.testing.assert_allclose(fit.beta, beta, atol=1e-10)
        assert fit.rss == pytest.approx(0.0, abs=1e-20)

    def test_two_stage_equals_direct_fitted_values(self):
        spec = SyntheticSpec(graph=grid_graph(4, 4), T=7, seed=3, gamma=(0.4, -0.3))
        sim = simulate(spec)
        with_cov = fit_ols(sim.panel, sim.covariates, ModelFamily.NO_SHRINKAGE)
        without_cov = fit_ols(sim.panel, None, ModelFamily.NO_SHRINKAGE)
        periods = list(sim.panel.periods)
        np.testing.assert_allclose(
            with_cov.predict(sim.panel, periods),
            without_cov.predict(sim.panel, periods),
            atol=1e-10,
        )
        assert with_cov.rss == pytest.approx(without_cov.rss, abs=1e-10)

    def test_global_trend_recovers_pooled_line(self):
        panel, _, _ = _linear_panel(alpha=np.full(4, 2.0), beta=np.full(4, -0.1), n=4)
        fit = fit_ols(panel, None, ModelFamily.GLOBAL_TREND)
        np.testing.assert_allclose(fit.alpha, 2.0, atol=1e-10)
        np.testing.assert_allclose(fit.beta, -0.1, atol=1e-10)

    def test_single_training_period_rejected(self):
        panel, _, _ = _linear_panel(T=3)
        with pytest.raises(ValueError, match="two distinct"):
            fit_ols(panel, None, ModelFamily.NO_SHRINKAGE, train_periods=[2006])

    def test_wrong_family_rejected(self):
        panel, _, _ = _linear_panel()
        with pytest.raises(ValueError, match="least-squares"):
            fit_ols(panel, None, ModelFamily.SPATIAL_CAR)

    def test_prediction_formula_exact(self):
        panel, _, _ = _linear_panel(noise=0.2)
        fit = fit_ols(panel, None, ModelFamily.NO_SHRINKAGE)
        pred = fit.predict(panel, [2007])
        t = panel.t_of_period(2007)
        np.testing.assert_allclose(pred[:, 0], fit.alpha + fit.beta * t, atol=1e-14)


class TestFTest:
    def test_identical_fits_give_zero(self):
        panel, _, _ = _linear_panel(alpha=np.full(4, 1.0), beta=np.full(4, -0.1), n=4)
        F, p = f_test_units(panel, None)
        assert F == 0.0 and p == 1.0

    def test_strong_heterogeneity_significant(self):
        rng = np.random.default_rng(0)
        panel, _, _ = _linear_panel(
            n=30, T=10, alpha=rng.normal(0, 3, 30), beta=rng.normal(0, 1, 30), noise=0.05, seed=1
        )
        F, p = f_test_units(panel, None)
        assert p < 1e-3

    def test_matches_textbook_formula(self):
        spec = SyntheticSpec(graph=grid_graph(3, 3), T=8, seed=2, gamma=(0.3,))
        sim = simulate(spec)
        F, p = f_test_units(sim.panel, sim.covariates)

        # independent computation from scratch: dense designs and lstsq
        n, T = sim.panel.n, sim.panel.n_periods
        y = sim.panel.y.reshape(-1)
        t = np.tile(np.arange(1, T + 1), n)
        Z_rep = np.repeat(sim.covariates.Z, T, axis=0)
        X_small = np.column_stack([np.ones(n * T), Z_rep, t])
        rss0 = np.linalg.lstsq(X_small, y, rcond=None)[1][0]
        X_big = np.zeros((n * T, 2 * n))
        for i in range(n):
            rows = slice(i * T, (i + 1) * T)
            X_big[rows, i] = 1.0
            X_big[rows, n + i] = np.arange(1, T + 1)
        coef, *_ = np.linalg.lstsq(X_big, y, rcond=None)
        rss1 = float(((y - X_big @ coef) ** 2).sum())
        p0, p1 = X_small.shape[1], 2 * n
        F_ref = ((rss0 - rss1) / (p1 - p0)) / (rss1 / (n * T - p1))
        assert F == pytest.approx(F_ref, rel=1e-10)


class TestMse:
    def test_perfect_predictions(self):
        panel, _, _ = _linear_panel()
        fit = fit_ols(panel, None, ModelFamily.NO_SHRINKAGE)
        assert mse(panel, fit, [panel.periods[-1]]) == pytest.approx(0.0, abs=1e-20)

    def test_constant_offset(self):
        panel, _, _ = _linear_panel()
        fit = fit_ols(panel, None, ModelFamily.NO_SHRINKAGE)
        fit.alpha = fit.alpha + 0.3
        assert mse(panel, fit, [panel.periods[0]]) == pytest.approx(0.09, rel=1e-10)

    def test_missing_period_rejected(self):
        panel, _, _ = _linear_panel()
        fit = fit_ols(panel, None, ModelFamily.NO_SHRINKAGE)
        with pytest.raises(KeyError):
            mse(panel, fit, [1999])

    def test_invariant_to_unit_order(self):
        panel, _, _ = _linear_panel(noise=0.3, seed=5)
        fit = fit_ols(panel, None, ModelFamily.NO_SHRINKAGE, train_periods=list(panel.periods[:-1]))
        value = mse(panel, fit, [panel.periods[-1]])
        order = list(reversed(panel.unit_ids))
        panel2 = panel.restrict(order)
        fit2 = fit_ols(panel2, None, ModelFamily.NO_SHRINKAGE, train_periods=list(panel.periods[:-1]))
        assert mse(panel2, fit2, [panel.periods[-1]]) == pytest.approx(value, rel=1e-12)


class TestMseCv:
    def test_noiseless_no_shrinkage_is_zero(self):
        panel, _, _ = _linear_panel()
        cfg = ModelConfig(family=ModelFamily.NO_SHRINKAGE)
        value, folds = mse_cv(panel, None, None, ModelFamily.NO_SHRINKAGE, cfg)
        assert value == pytest.approx(0.0, abs=1e-18)
        assert set(folds) == set(panel.periods)

    def test_two_period_definition(self):
        panel, _, _ = _linear_panel(T=2, noise=0.4, seed=7)
        cfg = ModelConfig()
        with pytest.raises(ValueError):
            mse_cv(panel, None, None, ModelFamily.NO_SHRINKAGE, cfg)  # per-unit fit needs 2 train periods

    def test_three_period_average(self):
        panel, _, _ = _linear_panel(T=3, noise=0.4, seed=7)
        cfg = ModelConfig()
        value, folds = mse_cv(panel, None, None, ModelFamily.GLOBAL_TREND, cfg)
        # the average of the per-fold values is the definition
        assert value == pytest.approx(np.mean(list(folds.values())), rel=1e-12)
        # and each fold equals a manual refit-and-score
        for holdout in panel.periods:
            train = [p for p in panel.periods if p != holdout]
            fit = fit_ols(panel, None, ModelFamily.GLOBAL_TREND, train)
            assert folds[holdout] == pytest.approx(mse(panel, fit, [holdout]), rel=1e-12)


class TestCompareModels:
    def test_single_family_single_row(self):
        panel, _, _ = _linear_panel(noise=0.2, T=5)
        table = compare_models(panel, None, None, [ModelFamily.NO_SHRINKAGE], ModelConfig())
        assert len(table.rows) == 1
        assert table.rows[0].pct_change is None

    def test_pct_change_recomputable(self):
        spec = SyntheticSpec(graph=grid_graph(4, 4), T=6, seed=9)
        sim = simulate(spec)
        cfg = ModelConfig(chain=ChainSettings(n_iter=120, burn_in=20, thin=1, seed=1))
        table = compare_models(
            sim.panel, None, sim.graph,
            [ModelFamily.NO_SHRINKAGE, ModelFamily.GLOBAL_SHRINKAGE], cfg,
        )
        base = table.row(ModelFamily.NO_SHRINKAGE).mse_out
        row = table.row(ModelFamily.GLOBAL_SHRINKAGE)
        assert row.pct_change == pytest.approx(100 * (row.mse_out - base) / base, rel=1e-12)

    def test_constant_trend_has_no_moran(self):
        panel, _, _ = _linear_panel(n=9, noise=0.1, seed=3)
        g = grid_graph(3, 3)
        table = compare_models(panel, None, g, [ModelFamily.GLOBAL_TREND], ModelConfig())
        assert table.rows[0].morans_i_beta is None

    def test_csv_column_order(self, tmp_path):
        panel, _, _ = _linear_panel(noise=0.2, T=5)
        table = compare_models(panel, None, None, [ModelFamily.NO_SHRINKAGE], ModelConfig())
        path = tmp_path / "comparison.csv"
        write_comparison_csv(table, path)
        header = path.read_text().splitlines()[0]
        assert header == "model,mse_in,mse_out,pct_change,mse_cv,morans_i_beta"


class TestBayesPredictionLinearity:
    def test_mean_of_predictions_equals_prediction_at_means(self):
        spec = SyntheticSpec(graph=path_graph(6), T=5, seed=4, gamma=(0.2,))
        sim = simulate(spec)
        cfg = ModelConfig(
            family=ModelFamily.SPATIAL_CAR,
            chain=ChainSettings(n_iter=100, burn_in=20, thin=1, seed=6),
        )
        fit = fit_bayes(sim.panel, sim.covariates, sim.graph, cfg)
        chain = fit.chain
        t = sim.panel.t_of_period(sim.panel.periods[-1])
        per_draw = (
            chain.draws["gamma"] @ sim.covariates.Z.T
            + chain.draws["alpha"]
            + chain.draws["beta"] * t
        )
        pred_from_means = fit.predict(sim.panel, [sim.panel.periods[-1]])[:, 0]
        np.testing.assert_allclose(per_draw.mean(axis=0), pred_from_means, atol=1e-10)
