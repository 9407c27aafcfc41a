"""Synthetic data generation and independent dense test oracles.

The simulator draws coefficient surfaces from the joint CAR law (with
optional planted barrier edges), builds the panel, and back-transforms
to integer counts.  The oracle functions replicate every Gibbs
conditional with plain dense numpy algebra so the test suite can check
the sparse sampler against code that shares none of its numerics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import ArealPanel, CovariateMatrix, covariates_from_table, ihs_to_count
from .graph import AdjacencyGraph

DENSE_ORACLE_MAX_N = 50


# ---------------------------------------------------------------------------
# Graph builders for fixtures


def _ids(n: int) -> tuple[str, ...]:
    width = max(3, len(str(n - 1)))
    return tuple(f"u{i:0{width}d}" for i in range(n))


def grid_graph(rows: int, cols: int) -> AdjacencyGraph:
    """Rook-adjacency lattice of rows x cols units."""
    n = rows * cols
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return AdjacencyGraph(_ids(n), tuple(sorted(edges)))


def cycle_graph(n: int) -> AdjacencyGraph:
    edges = sorted([(i, i + 1) for i in range(n - 1)] + [(0, n - 1)])
    return AdjacencyGraph(_ids(n), tuple(edges))


def path_graph(n: int) -> AdjacencyGraph:
    return AdjacencyGraph(_ids(n), tuple((i, i + 1) for i in range(n - 1)))


def grid_polygons(rows: int, cols: int) -> dict[str, list]:
    """Unit-square multipolygons matching grid_graph's unit ids (row-major)."""
    ids = _ids(rows * cols)
    out = {}
    for r in range(rows):
        for c in range(cols):
            x, y = float(c), float(rows - 1 - r)
            ring = [(x, y), (x + 1, y), (x + 1, y + 1), (x, y + 1), (x, y)]
            out[ids[r * cols + c]] = [[ring]]
    return out


# ---------------------------------------------------------------------------
# Generative simulator


@dataclass(frozen=True)
class SyntheticSpec:
    """True parameters for one simulated dataset."""

    graph: AdjacencyGraph
    T: int
    seed: int
    alpha0: float = 1.0
    beta0: float = -0.05
    tau2_alpha: float = 0.5
    tau2_beta: float = 0.01
    sigma2: float = 0.05
    rho: float = 0.9
    gamma: tuple[float, ...] = ()
    barriers_alpha: tuple[tuple[int, int], ...] = ()
    barriers_beta: tuple[tuple[int, int], ...] = ()
    alpha_offsets: tuple[float, ...] | None = None
    beta_offsets: tuple[float, ...] | None = None
    period_start: int = 2006

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if min(self.tau2_alpha, self.tau2_beta, self.sigma2) < 0:
            raise ValueError("variances must be non-negative")
        edge_set = set(self.graph.edges)
        for name, barriers in (("alpha", self.barriers_alpha), ("beta", self.barriers_beta)):
            for e in barriers:
                if tuple(sorted(e)) not in edge_set:
                    raise ValueError(f"planted {name} barrier {e} is not a base edge")
        for name, offs in (("alpha", self.alpha_offsets), ("beta", self.beta_offsets)):
            if offs is not None and len(offs) != self.graph.n:
                raise ValueError(f"{name}_offsets must have one entry per unit")


@dataclass
class SimulatedData:
    panel: ArealPanel
    covariates: CovariateMatrix | None
    graph: AdjacencyGraph
    truth: dict = field(default_factory=dict)


def _barrier_weights(graph: AdjacencyGraph, barriers) -> np.ndarray:
    w = np.ones(graph.n_edges)
    barrier_set = {tuple(sorted(e)) for e in barriers}
    for k, e in enumerate(graph.edges):
        if e in barrier_set:
            w[k] = 0.0
    return w


def _car_precision_dense(n, edges, rho, weights=None) -> np.ndarray:
    P = np.zeros((n, n))
    for k, (i, j) in enumerate(edges):
        w = 1.0 if weights is None else float(weights[k])
        P[i, i] += rho * w
        P[j, j] += rho * w
        P[i, j] -= rho * w
        P[j, i] -= rho * w
    P[np.diag_indices(n)] += 1.0 - rho
    return P


def _draw_car(rng, n, edges, rho, weights, mean, tau2):
    if tau2 == 0:
        return np.full(n, mean)
    P = _car_precision_dense(n, edges, rho, weights)
    cov = tau2 * np.linalg.inv(P)
    L = np.linalg.cholesky(cov)
    return mean + L @ rng.standard_normal(n)


def simulate(spec: SyntheticSpec) -> SimulatedData:
    """Draw one dataset from the generative model.

    Coefficients come from the joint CAR law under the planted border
    weights; responses are linear trends plus Gaussian noise; counts are
    the rounded inverse transform (clipped at zero) while the exact
    transformed responses stay in the panel for transform-free tests.
    """
    rng = np.random.default_rng(spec.seed)
    graph = spec.graph
    n = graph.n
    edges = list(graph.edges)

    w_alpha = _barrier_weights(graph, spec.barriers_alpha)
    w_beta = _barrier_weights(graph, spec.barriers_beta)
    alpha = _draw_car(rng, n, edges, spec.rho, w_alpha, spec.alpha0, spec.tau2_alpha)
    beta = _draw_car(rng, n, edges, spec.rho, w_beta, spec.beta0, spec.tau2_beta)
    # Deterministic structure (e.g. a jump across a planted barrier) rides
    # on top of the CAR draw.
    if spec.alpha_offsets is not None:
        alpha = alpha + np.asarray(spec.alpha_offsets, dtype=float)
    if spec.beta_offsets is not None:
        beta = beta + np.asarray(spec.beta_offsets, dtype=float)

    gamma = np.asarray(spec.gamma, dtype=float)
    if gamma.size:
        raw = rng.standard_normal((n, gamma.size))
        names = tuple(f"x{j + 1}" for j in range(gamma.size))
        covariates = covariates_from_table(graph.unit_ids, names, raw)
        cov_term = covariates.Z @ gamma
    else:
        covariates = None
        cov_term = np.zeros(n)

    t = np.arange(1, spec.T + 1, dtype=float)
    y = cov_term[:, None] + alpha[:, None] + np.outer(beta, t)
    if spec.sigma2 > 0:
        y = y + np.sqrt(spec.sigma2) * rng.standard_normal((n, spec.T))
    counts = ihs_to_count(y)
    periods = tuple(spec.period_start + k for k in range(spec.T))
    panel = ArealPanel(graph.unit_ids, periods, counts, y=y)
    truth = {
        "alpha": alpha,
        "beta": beta,
        "gamma": gamma,
        "alpha0": spec.alpha0,
        "beta0": spec.beta0,
        "sigma2": spec.sigma2,
        "tau2_alpha": spec.tau2_alpha,
        "tau2_beta": spec.tau2_beta,
        "rho": spec.rho,
        "w_alpha": w_alpha,
        "w_beta": w_beta,
    }
    return SimulatedData(panel=panel, covariates=covariates, graph=graph, truth=truth)


# ---------------------------------------------------------------------------
# Dense oracles (no shared code with graph.laplacian_precision or the sampler)


def _check_size(n: int) -> None:
    if n > DENSE_ORACLE_MAX_N:
        raise ValueError(f"dense oracle guard: n={n} exceeds {DENSE_ORACLE_MAX_N}")


def dense_car_precision(
    n: int, edges: Sequence[tuple[int, int]], rho: float, weights: Sequence[float] | None = None
) -> np.ndarray:
    """Leroux precision rho (D_W - W) + (1 - rho) I by explicit loops."""
    _check_size(n)
    return _car_precision_dense(n, edges, rho, weights)


def dense_logdet(P: np.ndarray) -> float:
    sign, ld = np.linalg.slogdet(P)
    if sign <= 0:
        raise ValueError("matrix is not positive definite")
    return float(ld)


def dense_theta_conditional(
    X: np.ndarray, y: np.ndarray, sigma2: float, Omega0: np.ndarray, theta0: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Exact conditional mean and covariance of theta by dense inversion."""
    _check_size(Omega0.shape[0])
    V = np.linalg.inv(Omega0 + X.T @ X / sigma2)
    mean = V @ (Omega0 @ theta0 + X.T @ y / sigma2)
    return mean, V


def dense_mean_hyper(v: np.ndarray, Sigma_inv: np.ndarray, tau2: float) -> tuple[float, float]:
    ones = np.ones(v.size)
    denom = float(ones @ Sigma_inv @ ones)
    return float(ones @ Sigma_inv @ v) / denom, tau2 / denom


def dense_flip_odds(
    n: int,
    edges: Sequence[tuple[int, int]],
    weights: np.ndarray,
    edge_index: int,
    rho: float,
    v: np.ndarray,
    v0: float,
    tau2: float,
    phi: float,
) -> float:
    """P(w_e = 1 | rest) via two dense determinants (no determinant lemma)."""
    w1 = np.asarray(weights, dtype=float).copy()
    w0 = w1.copy()
    w1[edge_index] = 1.0
    w0[edge_index] = 0.0
    det1 = np.linalg.det(dense_car_precision(n, edges, rho, w1))
    det0 = np.linalg.det(dense_car_precision(n, edges, rho, w0))
    i, j = edges[edge_index]
    odds = (
        np.sqrt(det1 / det0)
        * np.exp(-rho * ((v[i] - v0) - (v[j] - v0)) ** 2 / (2.0 * tau2))
        * phi
        / (1.0 - phi)
    )
    return float(odds / (1.0 + odds))


def enumerate_w_posterior(
    n: int,
    edges: Sequence[tuple[int, int]],
    rho: float,
    v: np.ndarray,
    v0: float,
    tau2: float,
    phi: float,
    current_w: Sequence[int],
) -> np.ndarray:
    """Exact per-edge conditional probabilities by exhaustive enumeration.

    Evaluates the unnormalized posterior over all 2^m border-weight
    configurations and reads off, for every edge, the conditional
    probability of weight 1 given the other edges at ``current_w``.
    """
    m = len(edges)
    if m > 6:
        raise ValueError(f"enumeration guard: m={m} exceeds 6 edges")
    if m == 0:
        return np.zeros(0)
    dev = np.asarray(v, dtype=float) - v0

    log_post = {}
    for code in range(2**m):
        w = np.array([(code >> k) & 1 for k in range(m)], dtype=float)
        P = dense_car_precision(n, edges, rho, w)
        ld = dense_logdet(P)
        quad = float(dev @ P @ dev)
        ones = w.sum()
        log_post[code] = (
            0.5 * ld
            - quad / (2.0 * tau2)
            + ones * np.log(phi)
            + (m - ones) * np.log1p(-phi)
        )

    current = [int(x) for x in current_w]
    q = np.empty(m)
    for e in range(m):
        code1 = sum((1 if (current[k] if k != e else 1) else 0) << k for k in range(m))
        code0 = sum((1 if (current[k] if k != e else 0) else 0) << k for k in range(m))
        l1, l0 = log_post[code1], log_post[code0]
        top = max(l1, l0)
        q[e] = np.exp(l1 - top) / (np.exp(l1 - top) + np.exp(l0 - top))
    return q


def dense_variance_params(
    ig: Mapping[str, float],
    X: np.ndarray,
    y: np.ndarray,
    theta: np.ndarray,
    gamma: np.ndarray,
    alpha: np.ndarray,
    beta: np.ndarray,
    alpha0: float,
    beta0: float,
    Sigma_inv_alpha: np.ndarray,
    Sigma_inv_beta: np.ndarray,
) -> dict[str, tuple[float, float]]:
    """Inverse-Gamma (shape, rate) pairs computed with dense algebra."""
    resid = y - X @ theta
    dev_a = alpha - alpha0
    dev_b = beta - beta0
    out = {
        "sigma2": (ig["a_sigma"] + y.size / 2.0, ig["b_sigma"] + 0.5 * float(resid @ resid)),
        "tau2_alpha": (
            ig["a_alpha"] + alpha.size / 2.0,
            ig["b_alpha"] + 0.5 * float(dev_a @ Sigma_inv_alpha @ dev_a),
        ),
        "tau2_beta": (
            ig["a_beta"] + beta.size / 2.0,
            ig["b_beta"] + 0.5 * float(dev_b @ Sigma_inv_beta @ dev_b),
        ),
    }
    if gamma.size:
        out["tau2_gamma"] = (
            ig["a_gamma"] + gamma.size / 2.0,
            ig["b_gamma"] + 0.5 * float(gamma @ gamma),
        )
    return out
