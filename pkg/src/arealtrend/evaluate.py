"""Classical fits and predictive evaluation.

Implements the least-squares baselines (citywide trend, per-unit fits
with two-stage covariate estimation), the nested F-test, and the
holdout / leave-one-period-out MSE protocol used to compare model
families, including Moran's I on the fitted trends.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.stats

from .data import ArealPanel, CovariateMatrix
from .exceptions import DimensionMismatchError
from .graph import AdjacencyGraph, morans_i
from .model import BAYES_FAMILIES, ModelConfig, ModelFamily


def _resolve_train_periods(panel: ArealPanel, train_periods) -> list[int]:
    if train_periods is None:
        return list(panel.periods)
    train = list(train_periods)
    missing = [p for p in train if p not in panel.periods]
    if missing:
        raise KeyError(f"train periods not in panel: {missing}")
    return train


def _train_arrays(panel: ArealPanel, train_periods: Sequence[int]):
    """(y sub-matrix, t codes) for the training periods, in period order."""
    cols = [panel.periods.index(p) for p in train_periods]
    t = np.array([panel.t_of_period(p) for p in train_periods], dtype=float)
    return panel.y[:, cols], t


@dataclass
class FitResult:
    """Point estimates and the prediction rule y_hat = z'gamma + alpha_i + beta_i * t.

    The classical families store least-squares estimates; the Bayesian
    families store posterior means (and keep the chain around).  Global
    families broadcast their single intercept/slope across units.
    """

    family: ModelFamily
    unit_ids: tuple[str, ...]
    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    covariate_term: np.ndarray  # z_i' gamma per unit (zeros when no covariates)
    train_periods: tuple[int, ...]
    rss: float = math.nan
    df_resid: int = 0
    n_params: int = 0
    chain: object | None = field(default=None, repr=False)

    @property
    def residual_variance(self) -> float:
        return self.rss / self.df_resid if self.df_resid > 0 else 0.0

    def predict(self, panel: ArealPanel, periods: Sequence[int]) -> np.ndarray:
        """Predicted transformed responses, one column per requested period."""
        if tuple(panel.unit_ids) != tuple(self.unit_ids):
            raise DimensionMismatchError("panel units do not match the fitted units")
        t = np.array([panel.t_of_period(p) for p in periods], dtype=float)
        return self.covariate_term[:, None] + self.alpha[:, None] + np.outer(self.beta, t)


def _pooled_covariate_fit(y_train, Z):
    """Least squares of all y_it on (1, z_i): returns (intercept, gamma)."""
    n, T = y_train.shape
    X = np.column_stack([np.ones(n), Z])
    X_rep = np.repeat(X, T, axis=0)
    coef, *_ = np.linalg.lstsq(X_rep, y_train.ravel(), rcond=None)
    return coef[0], coef[1:]


def _per_unit_fit(y_train, t):
    """Per-unit least squares of y on (1, t); returns (alpha, beta) arrays."""
    if len(t) < 2 or np.ptp(t) == 0:
        raise ValueError("per-unit fits need at least two distinct training periods")
    t_mean = t.mean()
    denom = float(((t - t_mean) ** 2).sum())
    y_mean = y_train.mean(axis=1)
    beta = ((y_train - y_mean[:, None]) @ (t - t_mean)) / denom
    alpha = y_mean - beta * t_mean
    return alpha, beta


def fit_ols(
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    family: ModelFamily,
    train_periods: Sequence[int] | None = None,
) -> FitResult:
    """Least-squares fit of the citywide-trend or per-unit model.

    The citywide model regresses y on (1, z, t).  The per-unit model
    fits each unit's intercept and slope separately, with the covariate
    coefficients estimated by the equivalent two-stage procedure (pooled
    covariate regression first, per-unit fits on its residuals), which
    leaves the fitted values identical to the direct per-unit fit.
    """
    family = ModelFamily(family)
    if family not in (ModelFamily.GLOBAL_TREND, ModelFamily.NO_SHRINKAGE):
        raise ValueError(f"fit_ols handles the least-squares families only, got {family}")
    train = _resolve_train_periods(panel, train_periods)
    y_train, t = _train_arrays(panel, train)
    n = panel.n
    N = y_train.size

    if covariates is not None:
        if tuple(covariates.unit_ids) != tuple(panel.unit_ids):
            raise DimensionMismatchError("covariate units do not match panel units")
        Z = covariates.Z
        d = covariates.d
    else:
        Z = np.zeros((n, 0))
        d = 0

    if family is ModelFamily.GLOBAL_TREND:
        X = np.column_stack([np.ones(N), np.repeat(Z, len(t), axis=0), np.tile(t, n)])
        coef, *_ = np.linalg.lstsq(X, y_train.ravel(), rcond=None)
        intercept, gamma, slope = coef[0], coef[1 : 1 + d], coef[1 + d]
        cov_term = Z @ gamma
        alpha = np.full(n, intercept)
        beta = np.full(n, slope)
        fitted = cov_term[:, None] + alpha[:, None] + np.outer(beta, t)
        rss = float(((y_train - fitted) ** 2).sum())
        n_params = d + 2
    else:
        if d > 0:
            intercept, gamma = _pooled_covariate_fit(y_train, Z)
            cov_term = Z @ gamma
            resid = y_train - (intercept + cov_term)[:, None]
            a_res, beta = _per_unit_fit(resid, t)
            alpha = intercept + a_res
        else:
            gamma = np.zeros(0)
            cov_term = np.zeros(n)
            alpha, beta = _per_unit_fit(y_train, t)
        fitted = cov_term[:, None] + alpha[:, None] + np.outer(beta, t)
        rss = float(((y_train - fitted) ** 2).sum())
        n_params = 2 * n  # covariate effects are absorbed by the per-unit intercepts

    return FitResult(
        family=family,
        unit_ids=tuple(panel.unit_ids),
        gamma=np.asarray(gamma, dtype=float),
        alpha=alpha,
        beta=beta,
        covariate_term=cov_term,
        train_periods=tuple(train),
        rss=rss,
        df_resid=N - n_params,
        n_params=n_params,
    )


def fit_bayes(
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    graph: AdjacencyGraph,
    config: ModelConfig,
    train_periods: Sequence[int] | None = None,
    jobs: int = 1,
) -> FitResult:
    """Gibbs fit of a hierarchical family; point estimates are posterior means."""
    from . import sampler  # deferred to avoid an import cycle

    if config.family not in BAYES_FAMILIES:
        raise ValueError(f"{config.family} is not a Gibbs-sampled family")
    train = _resolve_train_periods(panel, train_periods)
    chain = sampler.run_chains(config, panel, covariates, graph, train_periods=train, jobs=jobs)
    gamma = chain.draws["gamma"].mean(axis=0) if "gamma" in chain.draws else np.zeros(0)
    if config.two_stage and chain.fixed_gamma is not None:
        gamma = chain.fixed_gamma
    alpha = chain.draws["alpha"].mean(axis=0)
    beta = chain.draws["beta"].mean(axis=0)
    cov_term = covariates.Z @ gamma if covariates is not None and gamma.size else np.zeros(panel.n)
    return FitResult(
        family=config.family,
        unit_ids=tuple(panel.unit_ids),
        gamma=gamma,
        alpha=alpha,
        beta=beta,
        covariate_term=cov_term,
        train_periods=tuple(train),
        chain=chain,
    )


def fit_family(
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    graph: AdjacencyGraph | None,
    family: ModelFamily,
    config: ModelConfig,
    train_periods: Sequence[int] | None = None,
    jobs: int = 1,
) -> FitResult:
    """Dispatch to the least-squares or Gibbs fitter for one family."""
    family = ModelFamily(family)
    if family in BAYES_FAMILIES:
        if graph is None:
            raise DimensionMismatchError(f"family {family.value} requires an adjacency graph")
        from dataclasses import replace

        return fit_bayes(panel, covariates, graph, replace(config, family=family), train_periods, jobs)
    return fit_ols(panel, covariates, family, train_periods)


def f_test_units(
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    train_periods: Sequence[int] | None = None,
) -> tuple[float, float]:
    """Nested F-test of per-unit coefficients against the citywide trend.

    The citywide model (intercept, covariates, one slope) is nested in
    the per-unit model, whose intercepts absorb the covariates.  Returns
    the F statistic and its p-value.
    """
    small = fit_ols(panel, covariates, ModelFamily.GLOBAL_TREND, train_periods)
    big = fit_ols(panel, covariates, ModelFamily.NO_SHRINKAGE, train_periods)
    df_num = big.n_params - small.n_params
    df_den = big.df_resid
    if df_num <= 0 or df_den <= 0:
        raise ValueError("models are not properly nested for this data size")
    if big.rss < 1e-12:  # exact fit up to float noise
        if small.rss < 1e-12:
            return 0.0, 1.0
        return math.inf, 0.0
    F = ((small.rss - big.rss) / df_num) / (big.rss / df_den)
    p = float(scipy.stats.f.sf(F, df_num, df_den))
    return float(F), p


def mse(panel: ArealPanel, fit: FitResult, target_periods: Sequence[int]) -> float:
    """Mean squared prediction error on the transformed scale.

    Averages (y_it - y_hat_it)^2 over the retained units for every
    period in ``target_periods``.
    """
    target = list(target_periods)
    cols = [panel.periods.index(p) if p in panel.periods else None for p in target]
    if any(c is None for c in cols):
        raise KeyError(f"target periods not in panel: {[p for p, c in zip(target, cols) if c is None]}")
    pred = fit.predict(panel, target)
    actual = panel.y[:, cols]
    return float(np.mean((actual - pred) ** 2))


def _cv_fold(args):
    panel, covariates, graph, family, config, holdout = args
    train = [p for p in panel.periods if p != holdout]
    fit = fit_family(panel, covariates, graph, family, config, train)
    return holdout, mse(panel, fit, [holdout])


def mse_cv(
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    graph: AdjacencyGraph | None,
    family: ModelFamily,
    config: ModelConfig,
    jobs: int = 1,
) -> tuple[float, dict[int, float]]:
    """Leave-one-period-out cross-validated MSE.

    Every period takes a turn as the holdout while the model is refit
    from scratch on the rest; returns the average and the per-fold
    values.
    """
    if panel.n_periods < 2:
        raise ValueError("cross-validation needs at least two periods")
    tasks = [(panel, covariates, graph, family, config, p) for p in panel.periods]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cv_fold, tasks))
    else:
        results = [_cv_fold(t) for t in tasks]
    per_fold = dict(sorted(results))
    return float(np.mean(list(per_fold.values()))), per_fold


@dataclass
class ComparisonRow:
    family: ModelFamily
    mse_in: float
    mse_out: float
    pct_change: float | None  # vs the no-shrinkage baseline; None for the baseline itself
    mse_cv: float | None
    morans_i_beta: float | None


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]
    holdout_period: int
    train_periods: tuple[int, ...]
    cv_folds: dict[str, dict[int, float]] = field(default_factory=dict)

    def row(self, family: ModelFamily) -> ComparisonRow:
        for r in self.rows:
            if r.family is ModelFamily(family):
                return r
        raise KeyError(f"no row for family {family}")


def compare_models(
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    graph: AdjacencyGraph | None,
    families: Sequence[ModelFamily],
    config: ModelConfig,
    holdout_period: int | None = None,
    cv: bool = False,
    jobs: int = 1,
) -> ComparisonTable:
    """Fit each family on a shared train/holdout split and tabulate accuracy.

    Reports in-sample MSE (final training period), out-of-sample MSE
    (holdout period), the percent change in out-of-sample MSE relative
    to the no-shrinkage baseline, optionally the cross-validated MSE,
    and Moran's I of the fitted per-unit trends.
    """
    if panel.n_periods < 2:
        raise ValueError("model comparison needs at least two periods")
    holdout = holdout_period if holdout_period is not None else panel.periods[-1]
    if holdout not in panel.periods:
        raise KeyError(f"holdout period {holdout} not in panel")
    train = [p for p in panel.periods if p != holdout]
    last_train = train[-1]

    baseline = fit_ols(panel, covariates, ModelFamily.NO_SHRINKAGE, train)
    baseline_out = mse(panel, baseline, [holdout])

    rows = []
    cv_folds: dict[str, dict[int, float]] = {}
    for family in families:
        family = ModelFamily(family)
        fit = fit_family(panel, covariates, graph, family, config, train, jobs=jobs)
        mse_in = mse(panel, fit, [last_train])
        mse_out = mse(panel, fit, [holdout])
        if family is ModelFamily.NO_SHRINKAGE:
            pct = None
        else:
            pct = 100.0 * (mse_out - baseline_out) / baseline_out
        cv_value = None
        if cv:
            cv_value, folds = mse_cv(panel, covariates, graph, family, config, jobs=jobs)
            cv_folds[family.value] = folds
        moran = None
        if graph is not None and graph.n_edges > 0 and np.ptp(fit.beta) > 0:
            moran = morans_i(fit.beta, graph).I
        rows.append(
            ComparisonRow(
                family=family,
                mse_in=mse_in,
                mse_out=mse_out,
                pct_change=pct,
                mse_cv=cv_value,
                morans_i_beta=moran,
            )
        )
    return ComparisonTable(
        rows=rows, holdout_period=holdout, train_periods=tuple(train), cv_folds=cv_folds
    )


COMPARISON_COLUMNS = ("model", "mse_in", "mse_out", "pct_change", "mse_cv", "morans_i_beta")


def write_comparison_csv(table: ComparisonTable, path) -> None:
    """Frozen column order: model,mse_in,mse_out,pct_change,mse_cv,morans_i_beta."""
    import csv

    def fmt(v):
        return "" if v is None else repr(float(v))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_COLUMNS)
        for r in table.rows:
            writer.writerow(
                [r.family.value, fmt(r.mse_in), fmt(r.mse_out), fmt(r.pct_change), fmt(r.mse_cv), fmt(r.morans_i_beta)]
            )
