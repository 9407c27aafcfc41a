"""Gibbs sampler for the hierarchical areal trend models.

One iteration scans: joint Gaussian draw of all coefficients, the two
mean hyperparameters, the four variances (conjugate Inverse-Gamma), a
Metropolis-Hastings step for the spatial mixing parameter rho, a
systematic sweep over variable border weights using matrix-determinant-
lemma ratios against a cached sparse factorization, and the conjugate
Beta updates of the border retention probabilities.  Steps not present
in a family are skipped.  Chains are reproducible: chain c of master
seed s draws from a counter-based Philox stream keyed by (s, c).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data import ArealPanel, CovariateMatrix
from .exceptions import DimensionMismatchError, NumericalError
from .graph import AdjacencyGraph, laplacian_precision
from .linalg import SparseCholesky
from .model import (
    BAYES_FAMILIES,
    CAR_FAMILIES,
    VARIANCE_FLOOR,
    ModelConfig,
    ModelFamily,
    PriorSpec,
    ThetaState,
    build_joint_prior,
    coef_precision,
    initial_state,
    resolve_prior,
    variable_border_targets,
)


def chain_rng(seed: int, chain_index: int) -> np.random.Generator:
    """Counter-based generator for chain ``chain_index`` of master ``seed``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(chain_index,))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Design matrix


@dataclass
class DesignMatrix:
    """Sparse N x (d + 2n) design for y_it = z_i'gamma + alpha_i + beta_i t.

    Rows are unit-major: observation (i, s) for the s-th training
    period sits in row i * T_train + s and keeps the panel's original
    integer time code.  X'X is cached; X'y tracks the current response.
    """

    X: sp.csr_matrix
    XtX: sp.csr_matrix
    y: np.ndarray
    Xty: np.ndarray
    n: int
    d: int
    t_values: np.ndarray

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def n_coef(self) -> int:
        return self.d + 2 * self.n

    @classmethod
    def build(
        cls,
        panel: ArealPanel,
        covariates: CovariateMatrix | None,
        train_periods: Sequence[int] | None = None,
        fixed_gamma: np.ndarray | None = None,
    ) -> "DesignMatrix":
        """Assemble X and the response for the training periods.

        With ``fixed_gamma`` the covariate contribution is subtracted
        from y and the gamma block is omitted (two-stage estimation).
        """
        periods = list(train_periods) if train_periods is not None else list(panel.periods)
        cols = [panel.periods.index(p) for p in periods]
        t = np.array([panel.t_of_period(p) for p in periods], dtype=float)
        n, k = panel.n, len(periods)
        y = panel.y[:, cols].reshape(-1).astype(float)

        if covariates is not None:
            if tuple(covariates.unit_ids) != tuple(panel.unit_ids):
                raise DimensionMismatchError("covariate units do not match panel units")
            Z = covariates.Z
        else:
            Z = np.zeros((n, 0))

        if fixed_gamma is not None:
            if fixed_gamma.size != Z.shape[1]:
                raise DimensionMismatchError("fixed gamma length does not match covariates")
            y = y - np.repeat(Z @ fixed_gamma, k)
            Z = np.zeros((n, 0))
        d = Z.shape[1]

        rows_per_obs = np.arange(n * k)
        unit_of_obs = np.repeat(np.arange(n), k)
        t_of_obs = np.tile(t, n)

        rows, colidx, vals = [], [], []
        if d > 0:
            rows.append(np.repeat(rows_per_obs, d))
            colidx.append(np.tile(np.arange(d), n * k))
            vals.append(np.repeat(Z, k, axis=0).reshape(-1))
        rows.append(rows_per_obs)
        colidx.append(d + unit_of_obs)
        vals.append(np.ones(n * k))
        rows.append(rows_per_obs)
        colidx.append(d + n + unit_of_obs)
        vals.append(t_of_obs)

        X = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(colidx))),
            shape=(n * k, d + 2 * n),
        )
        XtX = (X.T @ X).tocsr()
        return cls(X=X, XtX=XtX, y=y, Xty=X.T @ y, n=n, d=d, t_values=t)

    def set_y(self, y: np.ndarray) -> None:
        """Swap in a new response (used by the prior-calibration harness)."""
        if y.shape != self.y.shape:
            raise ValueError("response shape mismatch")
        self.y = np.asarray(y, dtype=float)
        self.Xty = self.X.T @ self.y

    def theta_of_state(self, state: ThetaState, include_gamma: bool) -> np.ndarray:
        parts = ([state.gamma] if include_gamma else []) + [state.alpha, state.beta]
        return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Full conditionals (parameter computations are separated from the draws so
# tests can compare them against dense oracles)


def theta_conditional(
    design: DesignMatrix, Omega0: sp.spmatrix, theta0: np.ndarray, sigma2: float
) -> tuple[np.ndarray, SparseCholesky]:
    """Mean and precision factor of theta | everything else.

    The conditional is N(theta_hat, V) with V^{-1} = Omega0 + X'X/sigma^2
    and theta_hat = V (Omega0 theta0 + X'y/sigma^2); the factorization is
    sparse with a fill-reducing ordering and V is never formed densely.
    """
    sigma2 = max(sigma2, VARIANCE_FLOOR)
    P = (Omega0 + design.XtX / sigma2).tocsc()
    factor = SparseCholesky(P)
    rhs = Omega0 @ theta0 + design.Xty / sigma2
    return factor.solve(rhs), factor


def mean_hyper_conditional(
    v: np.ndarray, Sigma_inv: sp.spmatrix, tau2: float
) -> tuple[float, float]:
    """Mean and variance of alpha0 (or beta0) given its coefficient vector.

    Under the flat prior the conditional is
    N(1'S v / 1'S 1, tau^2 / 1'S 1) with S the unit-scale precision.
    """
    ones = np.ones(v.size)
    s1 = Sigma_inv @ ones
    denom = float(ones @ s1)
    return float(s1 @ v) / denom, tau2 / denom


def variance_conditional_params(
    prior: PriorSpec,
    design: DesignMatrix,
    theta: np.ndarray,
    state: ThetaState,
    Sigma_inv_alpha: sp.spmatrix,
    Sigma_inv_beta: sp.spmatrix,
    include_gamma: bool,
) -> dict[str, tuple[float, float]]:
    """Inverse-Gamma (shape, rate) pairs for every sampled variance."""
    ig = prior.ig
    resid = design.y - design.X @ theta
    out = {
        "sigma2": (ig.a_sigma + design.n_obs / 2.0, ig.b_sigma + 0.5 * float(resid @ resid))
    }
    if include_gamma and not prior.flat_gamma and state.gamma.size:
        out["tau2_gamma"] = (
            ig.a_gamma + state.gamma.size / 2.0,
            ig.b_gamma + 0.5 * float(state.gamma @ state.gamma),
        )
    dev_a = state.alpha - state.alpha0
    dev_b = state.beta - state.beta0
    out["tau2_alpha"] = (
        ig.a_alpha + state.alpha.size / 2.0,
        ig.b_alpha + 0.5 * float(dev_a @ (Sigma_inv_alpha @ dev_a)),
    )
    out["tau2_beta"] = (
        ig.a_beta + state.beta.size / 2.0,
        ig.b_beta + 0.5 * float(dev_b @ (Sigma_inv_beta @ dev_b)),
    )
    return out


def _draw_inverse_gamma(rng: np.random.Generator, shape: float, rate: float) -> float:
    if shape <= 0 or rate <= 0:
        raise NumericalError(f"invalid Inverse-Gamma parameters ({shape}, {rate})")
    return rate / rng.gamma(shape)


# ---------------------------------------------------------------------------
# Metropolis-Hastings step for rho


def _beta_logpdf(x: float, a: float, b: float) -> float:
    from math import lgamma, log, log1p

    return (a - 1) * log(x) + (b - 1) * log1p(-x) - (lgamma(a) + lgamma(b) - lgamma(a + b))


def _car_logdet(
    graph: AdjacencyGraph, rho: float, w, lap_eigs: np.ndarray | None
) -> float:
    """log det of rho L_w + (1-rho) I, via cached Laplacian eigenvalues when available."""
    if lap_eigs is not None:
        return float(np.log(rho * lap_eigs + (1.0 - rho)).sum())
    return SparseCholesky(laplacian_precision(graph, rho, w).tocsc()).logdet()


def lap_edge_quad(graph: AdjacencyGraph, weights: np.ndarray | None, dev: np.ndarray) -> float:
    """dev' (D_W - W) dev = sum over edges of w_e (dev_i - dev_j)^2."""
    if graph.n_edges == 0:
        return 0.0
    i, j = graph._edge_endpoints
    diff2 = (dev[i] - dev[j]) ** 2
    return float(diff2.sum() if weights is None else (weights * diff2).sum())


def rho_log_target(
    rho: float,
    state: ThetaState,
    graph: AdjacencyGraph,
    family: ModelFamily,
    rho_prior: tuple[float, float],
    lap_eigs: tuple[np.ndarray | None, np.ndarray | None] = (None, None),
) -> float:
    """Unnormalized log density of rho given the coefficient vectors.

    Includes both the alpha and the beta Gaussian terms (rho is shared)
    and the Beta prior.  Log-determinants come from cached Laplacian
    eigenvalues for fixed adjacency or sparse factorizations otherwise;
    the quadratic forms are linear in rho.
    """
    if not 0 < rho < 1:
        return -np.inf
    var_a, var_b = variable_border_targets(family)
    w_a = state.w_alpha.astype(float) if var_a else None
    w_b = state.w_beta.astype(float) if var_b else None
    tau2_a = max(state.tau2_alpha, VARIANCE_FLOOR)
    tau2_b = max(state.tau2_beta, VARIANCE_FLOOR)

    total = (rho_prior[0] - 1) * np.log(rho) + (rho_prior[1] - 1) * np.log1p(-rho)
    for v, v0, tau2, w, eigs in (
        (state.alpha, state.alpha0, tau2_a, w_a, lap_eigs[0]),
        (state.beta, state.beta0, tau2_b, w_b, lap_eigs[1]),
    ):
        dev = v - v0
        quad = rho * lap_edge_quad(graph, w, dev) + (1.0 - rho) * float(dev @ dev)
        total += 0.5 * _car_logdet(graph, rho, w, eigs) - 0.5 * quad / tau2
    return float(total)


def update_rho(
    rng: np.random.Generator,
    state: ThetaState,
    graph: AdjacencyGraph,
    family: ModelFamily,
    rho_prior: tuple[float, float],
    mh_b: float,
    lap_eigs: tuple[np.ndarray | None, np.ndarray | None] = (None, None),
) -> tuple[float, bool]:
    """One MH step; proposal Beta(b rho/(1-rho), b) keeps the mean at rho."""
    rho = state.rho
    c = mh_b * rho / (1.0 - rho)
    rho_star = float(rng.beta(c, mh_b))
    if not 0.0 < rho_star < 1.0:  # numerically degenerate proposal
        return rho, False

    lt_curr = rho_log_target(rho, state, graph, family, rho_prior, lap_eigs)
    lt_star = rho_log_target(rho_star, state, graph, family, rho_prior, lap_eigs)
    c_star = mh_b * rho_star / (1.0 - rho_star)
    log_fwd = _beta_logpdf(rho_star, c, mh_b)
    log_rev = _beta_logpdf(rho, c_star, mh_b)
    log_accept = lt_star - lt_curr + log_rev - log_fwd
    if np.log(rng.uniform()) < log_accept:
        return rho_star, True
    return rho, False


# ---------------------------------------------------------------------------
# Variable border weights


class EdgeUpdater:
    """Per-sweep machinery for sampling border weights.

    Keeps a sparse factorization of the current Leroux precision and
    corrects quadratic forms for accumulated single-edge flips by the
    Woodbury identity, so each flip costs one sparse solve instead of a
    refactorization.  The factor is refreshed after ``refresh_every``
    flips to bound numerical drift.
    """

    def __init__(self, graph: AdjacencyGraph, rho: float, weights: np.ndarray, refresh_every: int = 32):
        self.graph = graph
        self.rho = rho
        self.weights = np.asarray(weights, dtype=np.int8).copy()
        self.refresh_every = refresh_every
        self._refresh()

    def _refresh(self) -> None:
        P = laplacian_precision(self.graph, self.rho, self.weights.astype(float))
        self.factor = SparseCholesky(P.tocsc())
        self._pairs: list[tuple[int, int]] = []  # endpoints of accumulated flips
        self._M = np.zeros((0, 0))  # C^{-1} + U' A0^{-1} U

    def _base_solve_edge(self, i: int, j: int) -> np.ndarray:
        u = np.zeros(self.graph.n)
        u[i] = 1.0
        u[j] = -1.0
        return self.factor.solve(u)

    def quad_inv_edge(self, i: int, j: int, x_base: np.ndarray) -> float:
        """u' A^{-1} u for u = e_i - e_j against the drift-corrected precision."""
        quad0 = x_base[i] - x_base[j]
        if not self._pairs:
            return float(quad0)
        s = np.array([x_base[a] - x_base[b] for a, b in self._pairs])
        return float(quad0 - s @ np.linalg.solve(self._M, s))

    def det_ratio(self, edge_index: int, x_base: np.ndarray) -> float:
        """det(P with w_e = 1) / det(P with w_e = 0), the rest held at current values."""
        i, j = self.graph.edges[edge_index]
        quad = self.quad_inv_edge(i, j, x_base)
        if self.weights[edge_index] == 0:
            return 1.0 + self.rho * quad
        return 1.0 / (1.0 - self.rho * quad)

    def flip_log_odds(
        self, edge_index: int, v: np.ndarray, tau2: float, phi: float
    ) -> tuple[float, np.ndarray]:
        """log [q / (1-q)] for the edge plus the base solve (reused on a flip)."""
        i, j = self.graph.edges[edge_index]
        x_base = self._base_solve_edge(i, j)
        ratio = self.det_ratio(edge_index, x_base)
        tau2 = max(tau2, VARIANCE_FLOOR)
        penalty = -self.rho * (v[i] - v[j]) ** 2 / (2.0 * tau2)
        prior_odds = np.log(phi) - np.log1p(-phi)
        return 0.5 * np.log(ratio) + penalty + prior_odds, x_base

    def apply_flip(self, edge_index: int, new_w: int, x_base: np.ndarray) -> None:
        old = int(self.weights[edge_index])
        if new_w == old:
            return
        self.weights[edge_index] = new_w
        if len(self._pairs) + 1 >= self.refresh_every:
            self._refresh()
            return
        i, j = self.graph.edges[edge_index]
        c = (new_w - old) * self.rho
        k = len(self._pairs)
        M_new = np.empty((k + 1, k + 1))
        M_new[:k, :k] = self._M
        cross = np.array([x_base[a] - x_base[b] for a, b in self._pairs])
        M_new[:k, k] = cross
        M_new[k, :k] = cross
        M_new[k, k] = 1.0 / c + (x_base[i] - x_base[j])
        self._M = M_new
        self._pairs.append((i, j))


def flip_probability(
    graph: AdjacencyGraph,
    state: ThetaState,
    edge: tuple[int, int],
    which: str,
    refresh_every: int = 32,
) -> float:
    """Conditional probability that the given base edge keeps weight 1.

    Stand-alone evaluation against a fresh factorization of the current
    precision; the sweep in :func:`update_borders` computes the same
    quantity incrementally.
    """
    i, j = min(edge), max(edge)
    try:
        edge_index = graph.edges.index((i, j))
    except ValueError:
        raise ValueError(f"edge {edge} is not in the base geography") from None
    if which == "alpha":
        v, tau2, phi, w = state.alpha, state.tau2_alpha, state.phi_alpha, state.w_alpha
        v0 = state.alpha0
    else:
        v, tau2, phi, w = state.beta, state.tau2_beta, state.phi_beta, state.w_beta
        v0 = state.beta0
    updater = EdgeUpdater(graph, state.rho, w, refresh_every)
    log_odds, _ = updater.flip_log_odds(edge_index, v - v0, tau2, phi)
    return float(expit(log_odds))


def update_borders(
    rng: np.random.Generator,
    graph: AdjacencyGraph,
    state: ThetaState,
    which: str,
    refresh_every: int = 32,
) -> tuple[np.ndarray, np.ndarray]:
    """Systematic-scan Gibbs sweep over the base edges in fixed order.

    Returns the new weight vector and the 0/1 indicator of which edges
    changed this sweep.
    """
    if which == "alpha":
        v, tau2, phi, w = state.alpha - state.alpha0, state.tau2_alpha, state.phi_alpha, state.w_alpha
    else:
        v, tau2, phi, w = state.beta - state.beta0, state.tau2_beta, state.phi_beta, state.w_beta
    updater = EdgeUpdater(graph, state.rho, w, refresh_every)
    flipped = np.zeros(graph.n_edges, dtype=np.int8)
    for e in range(graph.n_edges):
        log_odds, x_base = updater.flip_log_odds(e, v, tau2, phi)
        q = expit(log_odds)
        new_w = int(rng.uniform() < q)
        if new_w != updater.weights[e]:
            flipped[e] = 1
        updater.apply_flip(e, new_w, x_base)
    return updater.weights.copy(), flipped


def update_phi(
    rng: np.random.Generator, w: np.ndarray, phi_prior: tuple[float, float]
) -> float:
    """Conjugate Beta draw: Beta(a + sum w, b + sum (1 - w))."""
    a, b = phi_prior
    ones = float(np.sum(w))
    return float(rng.beta(a + ones, b + (w.size - ones)))


# ---------------------------------------------------------------------------
# Chain orchestration


@dataclass
class ChainOutput:
    """Retained draws plus run metadata for one chain (or a merge of chains)."""

    family: ModelFamily
    unit_ids: tuple[str, ...]
    edge_ids: tuple[tuple[str, str], ...]
    draws: dict[str, np.ndarray]
    seed: int
    config: dict
    rho_accept_rate: float | None = None
    flip_counts: dict[str, np.ndarray] = field(default_factory=dict)
    clip_count: int = 0
    n_chains: int = 1
    chain_draw_counts: tuple[int, ...] = ()
    fixed_gamma: np.ndarray | None = None
    elapsed_seconds: float = 0.0

    @property
    def n_draws(self) -> int:
        return self.draws["alpha"].shape[0]

    def scalar_names(self) -> list[str]:
        return [k for k, v in self.draws.items() if v.ndim == 1]


class GibbsSampler:
    """One chain over one dataset; see the module docstring for the scan order."""

    def __init__(
        self,
        config: ModelConfig,
        panel: ArealPanel,
        covariates: CovariateMatrix | None,
        graph: AdjacencyGraph,
        prior: PriorSpec,
        train_periods: Sequence[int] | None = None,
        state: ThetaState | None = None,
    ):
        if config.family not in BAYES_FAMILIES:
            raise ValueError(f"{config.family} is not a Gibbs-sampled family")
        if tuple(graph.unit_ids) != tuple(panel.unit_ids):
            raise DimensionMismatchError("graph units do not match panel units")
        self.config = config
        self.family = config.family
        self.graph = graph
        self.prior = prior
        self.state = state if state is not None else initial_state(
            config, panel, covariates, graph, prior, train_periods
        )
        fixed_gamma = self.state.gamma if config.two_stage else None
        self.design = DesignMatrix.build(panel, covariates, train_periods, fixed_gamma)
        self.include_gamma = not config.two_stage and self.design.d > 0
        self.sample_rho = self.family in CAR_FAMILIES and config.rho_fixed is None
        self.var_alpha, self.var_beta = variable_border_targets(self.family)
        self.clip_count = 0
        self.rho_tries = 0
        self.rho_accepts = 0
        self.flip_totals = {
            "alpha": np.zeros(graph.n_edges, dtype=np.int64),
            "beta": np.zeros(graph.n_edges, dtype=np.int64),
        }
        # Laplacian eigenvalues make the rho log-determinant O(n); only
        # valid while the adjacency is fixed, so variable sides fall back
        # to sparse factorizations inside rho_log_target.
        self._lap_eigs: tuple[np.ndarray | None, np.ndarray | None] = (None, None)
        if self.sample_rho and graph.n <= 2048:
            base = np.linalg.eigvalsh(graph.laplacian().toarray()) if graph.n else np.zeros(0)
            self._lap_eigs = (
                None if self.var_alpha else base,
                None if self.var_beta else base,
            )
        self._init_precision_assembly()

    def _rho_eff(self) -> float:
        """rho entering the coefficient priors (0 when the prior is iid)."""
        return 0.0 if self.family is ModelFamily.GLOBAL_SHRINKAGE else self.state.rho

    def _init_precision_assembly(self) -> None:
        """Precompute the fixed coordinate layout of Omega0 + X'X / sigma^2.

        The sparsity pattern is frozen across the run (variable-border
        flips only zero entries out), so each scan just refills one data
        vector and lets the COO -> CSC conversion sum duplicates.
        """
        n, d = self.design.n, self.design.d
        g = self.graph
        ei, ej = (g._edge_endpoints if g.n_edges else (np.zeros(0, int), np.zeros(0, int)))
        xtx = self.design.XtX.tocoo()

        blocks_r = [np.arange(d)]
        blocks_c = [np.arange(d)]
        for off in (d, d + n):
            blocks_r += [np.arange(n) + off, ei + off, ej + off]
            blocks_c += [np.arange(n) + off, ej + off, ei + off]
        blocks_r.append(xtx.row)
        blocks_c.append(xtx.col)
        self._asm_rows = np.concatenate(blocks_r)
        self._asm_cols = np.concatenate(blocks_c)
        self._asm_xtx_data = xtx.data.copy()
        self._asm_incidence = (ei, ej)

    def _coef_block_data(self, weights: np.ndarray | None, tau2: float) -> tuple[np.ndarray, np.ndarray]:
        """(diagonal, edge) data of the alpha/beta prior precision block."""
        n = self.design.n
        rho = self._rho_eff()
        ei, ej = self._asm_incidence
        w = np.ones(ei.size) if weights is None else weights.astype(float)
        deg_w = np.zeros(n)
        np.add.at(deg_w, ei, w)
        np.add.at(deg_w, ej, w)
        diag = (rho * deg_w + (1.0 - rho)) / tau2
        off = -rho * w / tau2
        return diag, off

    def assemble_precision(self, sigma2: float) -> tuple[sp.csc_matrix, np.ndarray]:
        """Current conditional precision of theta and the linear term Omega0 theta0 + X'y/sigma^2.

        Mirrors theta_conditional(build_joint_prior(...)) but reuses the
        frozen coordinate layout; the prior mean term uses the fact that
        the Laplacian annihilates constant vectors.
        """
        state = self.state
        n, d = self.design.n, self.design.d
        tau2_a = max(state.tau2_alpha, VARIANCE_FLOOR)
        tau2_b = max(state.tau2_beta, VARIANCE_FLOOR)
        sigma2 = max(sigma2, VARIANCE_FLOOR)
        rho = self._rho_eff()

        if d and not self.prior.flat_gamma:
            gamma_diag = np.full(d, 1.0 / max(state.tau2_gamma, VARIANCE_FLOOR))
        else:
            gamma_diag = np.zeros(d)
        diag_a, off_a = self._coef_block_data(state.w_alpha if self.var_alpha else None, tau2_a)
        diag_b, off_b = self._coef_block_data(state.w_beta if self.var_beta else None, tau2_b)
        data = np.concatenate(
            [gamma_diag, diag_a, off_a, off_a, diag_b, off_b, off_b, self._asm_xtx_data / sigma2]
        )
        P = sp.csc_matrix(
            (data, (self._asm_rows, self._asm_cols)), shape=(d + 2 * n, d + 2 * n)
        )
        rhs = np.concatenate(
            [
                np.zeros(d),
                np.full(n, state.alpha0 * (1.0 - rho) / tau2_a),
                np.full(n, state.beta0 * (1.0 - rho) / tau2_b),
            ]
        )
        rhs += self.design.Xty / sigma2
        return P, rhs

    # -- individual updates ------------------------------------------------

    def _clip_variance(self, value: float) -> float:
        if value < VARIANCE_FLOOR:
            self.clip_count += 1
            return VARIANCE_FLOOR
        return value

    def update_theta(self, rng: np.random.Generator) -> None:
        state = self.state
        P, rhs = self.assemble_precision(state.sigma2)
        try:
            factor = SparseCholesky(P)
        except NumericalError as exc:
            raise NumericalError(f"coefficient update failed: {exc}") from exc
        theta = factor.solve(rhs) + factor.sample(rng)
        d = self.design.d
        if self.include_gamma:
            state.gamma = theta[:d]
        state.alpha = theta[d : d + self.design.n]
        state.beta = theta[d + self.design.n :]

    def update_mean_hyper(self, rng: np.random.Generator) -> None:
        # 1'S = (1 - rho) 1' for every Leroux block (the Laplacian kills
        # constants), and exactly 1' for the iid block (rho_eff = 0), so
        # the generic conditional collapses to a closed form.
        state = self.state
        n = self.design.n
        denom = (1.0 - self._rho_eff()) * n
        mean_a = float(state.alpha.sum()) / n
        var_a = max(state.tau2_alpha, VARIANCE_FLOOR) / denom
        state.alpha0 = float(rng.normal(mean_a, np.sqrt(var_a)))
        mean_b = float(state.beta.sum()) / n
        var_b = max(state.tau2_beta, VARIANCE_FLOOR) / denom
        state.beta0 = float(rng.normal(mean_b, np.sqrt(var_b)))

    def _coef_quad(self, dev: np.ndarray, weights: np.ndarray | None) -> float:
        rho = self._rho_eff()
        w = None if weights is None else weights.astype(float)
        return rho * lap_edge_quad(self.graph, w, dev) + (1.0 - rho) * float(dev @ dev)

    def update_variances(self, rng: np.random.Generator) -> None:
        state = self.state
        ig = self.prior.ig
        theta = self.design.theta_of_state(state, self.include_gamma)
        resid = self.design.y - self.design.X @ theta
        state.sigma2 = self._clip_variance(
            _draw_inverse_gamma(
                rng, ig.a_sigma + self.design.n_obs / 2.0, ig.b_sigma + 0.5 * float(resid @ resid)
            )
        )
        if self.include_gamma and not self.prior.flat_gamma:
            state.tau2_gamma = self._clip_variance(
                _draw_inverse_gamma(
                    rng,
                    ig.a_gamma + state.gamma.size / 2.0,
                    ig.b_gamma + 0.5 * float(state.gamma @ state.gamma),
                )
            )
        quad_a = self._coef_quad(state.alpha - state.alpha0, state.w_alpha if self.var_alpha else None)
        state.tau2_alpha = self._clip_variance(
            _draw_inverse_gamma(rng, ig.a_alpha + self.design.n / 2.0, ig.b_alpha + 0.5 * quad_a)
        )
        quad_b = self._coef_quad(state.beta - state.beta0, state.w_beta if self.var_beta else None)
        state.tau2_beta = self._clip_variance(
            _draw_inverse_gamma(rng, ig.a_beta + self.design.n / 2.0, ig.b_beta + 0.5 * quad_b)
        )

    def step(self, rng: np.random.Generator, skip_mean_hyper: bool = False) -> None:
        """One full scan in the fixed order."""
        state = self.state
        self.update_theta(rng)
        if not skip_mean_hyper:
            self.update_mean_hyper(rng)
        self.update_variances(rng)
        if self.sample_rho:
            new_rho, accepted = update_rho(
                rng,
                state,
                self.graph,
                self.family,
                self.config.rho_prior,
                self.config.mh_b,
                self._lap_eigs,
            )
            state.rho = new_rho
            self.rho_tries += 1
            self.rho_accepts += int(accepted)
        if self.var_alpha:
            state.w_alpha, flipped = update_borders(rng, self.graph, state, "alpha")
            self.flip_totals["alpha"] += flipped
        if self.var_beta:
            state.w_beta, flipped = update_borders(rng, self.graph, state, "beta")
            self.flip_totals["beta"] += flipped
        if self.var_alpha:
            state.phi_alpha = update_phi(rng, state.w_alpha, self.config.phi_prior)
        if self.var_beta:
            state.phi_beta = update_phi(rng, state.w_beta, self.config.phi_prior)

    # -- full run ----------------------------------------------------------

    def _recorded_fields(self) -> dict[str, tuple[int, ...]]:
        n, m = self.design.n, self.graph.n_edges
        fields: dict[str, tuple[int, ...]] = {}
        if self.include_gamma:
            fields["gamma"] = (self.design.d,)
        fields.update(
            alpha=(n,), beta=(n,), alpha0=(), beta0=(), sigma2=(), tau2_alpha=(), tau2_beta=()
        )
        if self.include_gamma and not self.prior.flat_gamma:
            fields["tau2_gamma"] = ()
        if self.family in CAR_FAMILIES:
            fields["rho"] = ()
        if self.var_alpha:
            fields["w_alpha"] = (m,)
            fields["phi_alpha"] = ()
        if self.var_beta:
            fields["w_beta"] = (m,)
            fields["phi_beta"] = ()
        return fields

    def run(self, chain_index: int = 0) -> ChainOutput:
        cfg = self.config.chain
        rng = chain_rng(cfg.seed, chain_index)
        n_keep = cfg.n_retained
        fields = self._recorded_fields()
        draws = {k: np.empty((n_keep, *shape)) for k, shape in fields.items()}

        started = time.perf_counter()
        kept = 0
        for it in range(1, cfg.n_iter + 1):
            try:
                self.step(rng)
            except NumericalError as exc:
                raise NumericalError(f"chain aborted at iteration {it}: {exc}") from exc
            if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0 and kept < n_keep:
                s = self.state
                values = {
                    "gamma": s.gamma,
                    "alpha": s.alpha,
                    "beta": s.beta,
                    "alpha0": s.alpha0,
                    "beta0": s.beta0,
                    "sigma2": s.sigma2,
                    "tau2_alpha": s.tau2_alpha,
                    "tau2_beta": s.tau2_beta,
                    "tau2_gamma": s.tau2_gamma,
                    "rho": s.rho,
                    "w_alpha": s.w_alpha,
                    "w_beta": s.w_beta,
                    "phi_alpha": s.phi_alpha,
                    "phi_beta": s.phi_beta,
                }
                for k in draws:
                    draws[k][kept] = values[k]
                kept += 1
        elapsed = time.perf_counter() - started

        edge_ids = tuple(
            (self.graph.unit_ids[i], self.graph.unit_ids[j]) for i, j in self.graph.edges
        )
        flip_counts = {}
        if self.var_alpha:
            flip_counts["alpha"] = self.flip_totals["alpha"].copy()
        if self.var_beta:
            flip_counts["beta"] = self.flip_totals["beta"].copy()
        return ChainOutput(
            family=self.family,
            unit_ids=tuple(self.graph.unit_ids),
            edge_ids=edge_ids,
            draws=draws,
            seed=cfg.seed,
            config=self.config.to_dict(),
            rho_accept_rate=(self.rho_accepts / self.rho_tries) if self.rho_tries else None,
            flip_counts=flip_counts,
            clip_count=self.clip_count,
            n_chains=1,
            chain_draw_counts=(kept,),
            fixed_gamma=self.state.gamma.copy() if self.config.two_stage else None,
            elapsed_seconds=elapsed,
        )


def run_chain(
    config: ModelConfig,
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    graph: AdjacencyGraph,
    train_periods: Sequence[int] | None = None,
    chain_index: int = 0,
    prior: PriorSpec | None = None,
) -> ChainOutput:
    """Run a single chain; fully determined by (config, seed, chain_index).

    Chains beyond the first start from deterministically dispersed
    variances so multi-chain convergence diagnostics are meaningful.
    """
    if prior is None:
        prior = resolve_prior(config, panel, covariates, train_periods)
    state = initial_state(config, panel, covariates, graph, prior, train_periods)
    if chain_index > 0:
        jitter = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=config.chain.seed, spawn_key=(chain_index, 1)))
        )
        for name in ("sigma2", "tau2_alpha", "tau2_beta", "tau2_gamma"):
            setattr(state, name, getattr(state, name) * float(jitter.uniform(0.5, 2.0)))
    sampler = GibbsSampler(config, panel, covariates, graph, prior, train_periods, state=state)
    return sampler.run(chain_index)


def _run_chain_task(args):
    config, panel, covariates, graph, train_periods, chain_index, prior = args
    return run_chain(config, panel, covariates, graph, train_periods, chain_index, prior)


def merge_chains(outputs: Sequence[ChainOutput]) -> ChainOutput:
    """Concatenate retained draws from several chains of one model."""
    first = outputs[0]
    if len(outputs) == 1:
        return first
    draws = {
        k: np.concatenate([o.draws[k] for o in outputs], axis=0) for k in first.draws
    }
    rates = [o.rho_accept_rate for o in outputs if o.rho_accept_rate is not None]
    flip_counts = {
        k: np.sum([o.flip_counts[k] for o in outputs], axis=0) for k in first.flip_counts
    }
    return ChainOutput(
        family=first.family,
        unit_ids=first.unit_ids,
        edge_ids=first.edge_ids,
        draws=draws,
        seed=first.seed,
        config=first.config,
        rho_accept_rate=float(np.mean(rates)) if rates else None,
        flip_counts=flip_counts,
        clip_count=sum(o.clip_count for o in outputs),
        n_chains=len(outputs),
        chain_draw_counts=tuple(o.n_draws for o in outputs),
        fixed_gamma=first.fixed_gamma,
        elapsed_seconds=sum(o.elapsed_seconds for o in outputs),
    )


def run_chains(
    config: ModelConfig,
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    graph: AdjacencyGraph,
    train_periods: Sequence[int] | None = None,
    jobs: int = 1,
) -> ChainOutput:
    """Run the configured number of chains (concurrently when jobs > 1) and merge."""
    prior = resolve_prior(config, panel, covariates, train_periods)
    n_chains = config.chain.n_chains
    tasks = [
        (config, panel, covariates, graph, train_periods, c, prior) for c in range(n_chains)
    ]
    if jobs > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, n_chains)) as pool:
            outputs = list(pool.map(_run_chain_task, tasks))
    else:
        outputs = [_run_chain_task(t) for t in tasks]
    return merge_chains(outputs)


def gelman_rubin(chains: Sequence[np.ndarray]) -> float:
    """Potential scale reduction factor for one scalar across chains."""
    m = len(chains)
    if m < 2:
        raise ValueError("need at least two chains")
    length = min(len(c) for c in chains)
    x = np.stack([np.asarray(c[:length], dtype=float) for c in chains])
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = length * means.var(ddof=1)
    var_plus = (length - 1) / length * W + B / length
    return float(np.sqrt(var_plus / W)) if W > 0 else 1.0


def prior_calibration_chain(
    config: ModelConfig,
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    graph: AdjacencyGraph,
    prior: PriorSpec,
    n_draws: int,
    thin: int = 1,
    seed: int = 0,
    alpha0: float = 0.0,
    beta0: float = 0.0,
) -> dict[str, np.ndarray]:
    """Successive-conditional run: resample data from the model each scan.

    With the response redrawn from y ~ N(X theta, sigma^2 I) before every
    Gibbs scan, the chain's stationary law is the prior, so retained
    marginals of sigma^2, rho, phi etc. must match their priors.  The
    mean hyperparameters carry improper flat priors and are held at the
    given constants (their update is skipped) to keep the joint prior
    proper.
    """
    rng = chain_rng(seed, 0)
    ig = prior.ig
    n, m = graph.n, graph.n_edges
    d = 0 if covariates is None or config.two_stage else covariates.d

    def draw_prior_state() -> ThetaState:
        sigma2 = _draw_inverse_gamma(rng, ig.a_sigma, ig.b_sigma)
        tau2_a = _draw_inverse_gamma(rng, ig.a_alpha, ig.b_alpha)
        tau2_b = _draw_inverse_gamma(rng, ig.a_beta, ig.b_beta)
        tau2_g = (
            _draw_inverse_gamma(rng, ig.a_gamma, ig.b_gamma)
            if d and not prior.flat_gamma
            else 1.0
        )
        rho = (
            config.rho_fixed
            if config.rho_fixed is not None
            else float(rng.beta(*config.rho_prior))
        )
        var_a, var_b = variable_border_targets(config.family)
        phi_a = float(rng.beta(*config.phi_prior)) if var_a else 1.0
        phi_b = float(rng.beta(*config.phi_prior)) if var_b else 1.0
        w_a = (rng.uniform(size=m) < phi_a).astype(np.int8) if var_a else np.ones(m, np.int8)
        w_b = (rng.uniform(size=m) < phi_b).astype(np.int8) if var_b else np.ones(m, np.int8)
        state = ThetaState(
            gamma=np.zeros(d),
            alpha=np.full(n, alpha0),
            beta=np.full(n, beta0),
            alpha0=alpha0,
            beta0=beta0,
            sigma2=sigma2,
            tau2_alpha=tau2_a,
            tau2_beta=tau2_b,
            tau2_gamma=tau2_g,
            rho=rho,
            w_alpha=w_a,
            w_beta=w_b,
            phi_alpha=phi_a,
            phi_beta=phi_b,
        )
        if d:
            state.gamma = rng.normal(0.0, np.sqrt(tau2_g), size=d)
        Pa = coef_precision(config.family, graph, state, "alpha")
        Pb = coef_precision(config.family, graph, state, "beta")
        state.alpha = alpha0 + np.sqrt(tau2_a) * SparseCholesky(Pa.tocsc()).sample(rng)
        state.beta = beta0 + np.sqrt(tau2_b) * SparseCholesky(Pb.tocsc()).sample(rng)
        return state

    state = draw_prior_state()
    sampler = GibbsSampler(
        config, panel, covariates, graph, prior, train_periods=None, state=state
    )
    keys = ["sigma2", "tau2_alpha", "tau2_beta"]
    if config.family in CAR_FAMILIES and config.rho_fixed is None:
        keys.append("rho")
    if variable_border_targets(config.family)[0]:
        keys.append("phi_alpha")
    out = {k: np.empty(n_draws) for k in keys}
    for k_draw in range(n_draws):
        for _ in range(thin):
            y = sampler.design.X @ sampler.design.theta_of_state(
                sampler.state, sampler.include_gamma
            ) + np.sqrt(max(sampler.state.sigma2, VARIANCE_FLOOR)) * rng.standard_normal(
                sampler.design.n_obs
            )
            sampler.design.set_y(y)
            sampler.step(rng, skip_mean_hyper=True)
            sampler.state.alpha0 = alpha0
            sampler.state.beta0 = beta0
        for k in keys:
            out[k][k_draw] = getattr(sampler.state, k)
    return out
