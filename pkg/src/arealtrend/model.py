"""Model families, priors and assembly of the joint coefficient prior.

Four hierarchical families share one likelihood y_it = z_i'gamma +
alpha_i + beta_i * t + eps: global shrinkage (independent coefficient
priors), spatial CAR (Leroux precision on alpha and beta), and the two
variable-border variants that let individual adjacency entries switch
off.  Two classical baselines (a single citywide trend and per-unit
least squares) round out the comparison set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .data import ArealPanel, CovariateMatrix
from .graph import AdjacencyGraph, laplacian_precision

VARIANCE_FLOOR = 1e-12


class ModelFamily(str, Enum):
    GLOBAL_TREND = "global_trend"
    NO_SHRINKAGE = "no_shrinkage"
    GLOBAL_SHRINKAGE = "global_shrinkage"
    SPATIAL_CAR = "spatial_car"
    VARIABLE_BORDERS = "variable_borders"
    VARIABLE_BORDERS_ALPHA_ONLY = "variable_borders_alpha_only"


#: Families fit by the Gibbs sampler (the rest are least-squares baselines).
BAYES_FAMILIES = frozenset(
    {
        ModelFamily.GLOBAL_SHRINKAGE,
        ModelFamily.SPATIAL_CAR,
        ModelFamily.VARIABLE_BORDERS,
        ModelFamily.VARIABLE_BORDERS_ALPHA_ONLY,
    }
)

#: Families whose coefficient priors involve the spatial structure.
CAR_FAMILIES = frozenset(
    {
        ModelFamily.SPATIAL_CAR,
        ModelFamily.VARIABLE_BORDERS,
        ModelFamily.VARIABLE_BORDERS_ALPHA_ONLY,
    }
)


def variable_border_targets(family: ModelFamily) -> tuple[bool, bool]:
    """Whether (W_alpha, W_beta) entries are sampled for this family."""
    if family is ModelFamily.VARIABLE_BORDERS:
        return True, True
    if family is ModelFamily.VARIABLE_BORDERS_ALPHA_ONLY:
        return True, False
    return False, False


@dataclass(frozen=True)
class IGHyper:
    """Inverse-Gamma (shape, rate) pairs for the four variance parameters."""

    a_sigma: float
    b_sigma: float
    a_alpha: float
    b_alpha: float
    a_beta: float
    b_beta: float
    a_gamma: float
    b_gamma: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class PriorSpec:
    """Resolved prior: IG hyperparameters plus the flat-gamma switch.

    Noninformative mode is expressed through limiting IG values (shape
    0 for sigma^2 under p ~ 1/sigma^2, shape -1/2 for the tau^2 under
    p ~ 1/tau) and a flat prior on gamma, whose precision block is then
    zero and whose scale tau_gamma^2 is not sampled.
    """

    ig: IGHyper
    flat_gamma: bool = False


def noninformative_prior() -> PriorSpec:
    """Limiting IG forms for uniform priors on gamma, log sigma, tau_alpha, tau_beta."""
    return PriorSpec(
        ig=IGHyper(
            a_sigma=0.0,
            b_sigma=0.0,
            a_alpha=-0.5,
            b_alpha=0.0,
            a_beta=-0.5,
            b_beta=0.0,
            a_gamma=0.0,
            b_gamma=0.0,
        ),
        flat_gamma=True,
    )


@dataclass(frozen=True)
class ChainSettings:
    """MCMC run lengths; defaults retain 1000 draws (2050 - 50 burn-in, thin 2)."""

    n_iter: int = 2050
    burn_in: int = 50
    thin: int = 2
    n_chains: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.burn_in < self.n_iter:
            raise ValueError(f"burn_in {self.burn_in} must be < n_iter {self.n_iter}")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


@dataclass(frozen=True)
class ModelConfig:
    """Family, priors and chain settings for one fit."""

    family: ModelFamily = ModelFamily.SPATIAL_CAR
    prior_mode: str = "empirical_bayes"  # or "noninformative"
    ig_hyper: IGHyper | None = None  # None -> tuned empirically at fit time
    rho_prior: tuple[float, float] = (10.0, 10.0)
    phi_prior: tuple[float, float] = (9.0, 1.0)  # barrier-leaning alternative: (1, 9)
    mh_b: float = 10.0
    chain: ChainSettings = field(default_factory=ChainSettings)
    two_stage: bool = False
    rho_fixed: float | None = None
    alpha_threshold: float = 0.6
    beta_threshold: float = 0.5

    def __post_init__(self):
        if isinstance(self.family, str) and not isinstance(self.family, ModelFamily):
            object.__setattr__(self, "family", ModelFamily(self.family))
        if self.prior_mode not in ("empirical_bayes", "noninformative"):
            raise ValueError(f"unknown prior_mode {self.prior_mode!r}")
        if self.ig_hyper is not None and self.prior_mode == "empirical_bayes":
            if any(v <= 0 for v in self.ig_hyper.as_dict().values()):
                raise ValueError("IG hyperparameters must be strictly positive")
        if any(v <= 0 for v in (*self.rho_prior, *self.phi_prior, self.mh_b)):
            raise ValueError("rho/phi prior parameters and mh_b must be positive")
        if self.rho_fixed is not None and not 0 <= self.rho_fixed < 1:
            raise ValueError("rho_fixed must lie in [0, 1)")

    def with_overrides(self, **kwargs) -> "ModelConfig":
        chain_keys = {k: v for k, v in kwargs.items() if k in ChainSettings.__dataclass_fields__}
        other = {k: v for k, v in kwargs.items() if k not in chain_keys}
        cfg = replace(self, **other) if other else self
        if chain_keys:
            cfg = replace(cfg, chain=replace(cfg.chain, **chain_keys))
        return cfg

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "prior_mode": self.prior_mode,
            "ig_hyper": self.ig_hyper.as_dict() if self.ig_hyper else None,
            "rho_prior": list(self.rho_prior),
            "phi_prior": list(self.phi_prior),
            "mh_b": self.mh_b,
            "chain": {
                "n_iter": self.chain.n_iter,
                "burn_in": self.chain.burn_in,
                "thin": self.chain.thin,
                "n_chains": self.chain.n_chains,
                "seed": self.chain.seed,
            },
            "two_stage": self.two_stage,
            "rho_fixed": self.rho_fixed,
            "alpha_threshold": self.alpha_threshold,
            "beta_threshold": self.beta_threshold,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        if "chain" in doc and doc["chain"] is not None:
            doc["chain"] = ChainSettings(**doc["chain"])
        if doc.get("ig_hyper") is not None:
            doc["ig_hyper"] = IGHyper(**doc["ig_hyper"])
        for key in ("rho_prior", "phi_prior"):
            if key in doc and doc[key] is not None:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ThetaState:
    """Current values of every sampled quantity for one chain."""

    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    alpha0: float
    beta0: float
    sigma2: float
    tau2_alpha: float
    tau2_beta: float
    tau2_gamma: float
    rho: float
    w_alpha: np.ndarray  # 0/1 per base edge
    w_beta: np.ndarray
    phi_alpha: float
    phi_beta: float

    def copy(self) -> "ThetaState":
        return ThetaState(
            gamma=self.gamma.copy(),
            alpha=self.alpha.copy(),
            beta=self.beta.copy(),
            alpha0=self.alpha0,
            beta0=self.beta0,
            sigma2=self.sigma2,
            tau2_alpha=self.tau2_alpha,
            tau2_beta=self.tau2_beta,
            tau2_gamma=self.tau2_gamma,
            rho=self.rho,
            w_alpha=self.w_alpha.copy(),
            w_beta=self.w_beta.copy(),
            phi_alpha=self.phi_alpha,
            phi_beta=self.phi_beta,
        )


def coef_precision(
    family: ModelFamily, graph: AdjacencyGraph, state: ThetaState, which: str
) -> sp.csr_matrix:
    """Unit-scale prior precision of alpha or beta (excludes the 1/tau^2 factor)."""
    if family is ModelFamily.GLOBAL_SHRINKAGE:
        return graph.identity
    if which == "alpha":
        weights = state.w_alpha if variable_border_targets(family)[0] else None
    elif which == "beta":
        weights = state.w_beta if variable_border_targets(family)[1] else None
    else:
        raise ValueError(f"which must be 'alpha' or 'beta', got {which!r}")
    return laplacian_precision(graph, state.rho, weights)


def build_joint_prior(
    config: ModelConfig,
    graph: AdjacencyGraph,
    state: ThetaState,
    flat_gamma: bool = False,
) -> tuple[np.ndarray, sp.csr_matrix]:
    """Prior mean theta0 and block-diagonal precision Omega0 for theta.

    theta = (gamma, alpha, beta) with theta0 = (0, alpha0*1, beta0*1).
    The gamma block is tau_gamma^{-2} I (or zero under a flat prior);
    the alpha/beta blocks are tau^{-2} Sigma^{-1} with Sigma^{-1} = I for
    global shrinkage and the Leroux precision for the CAR families.
    With two-stage covariate estimation gamma is fixed outside the
    sampler and theta excludes it.
    """
    n = graph.n
    d = 0 if config.two_stage else state.gamma.size
    theta0 = np.concatenate(
        [np.zeros(d), np.full(n, state.alpha0), np.full(n, state.beta0)]
    )
    tau2_a = max(state.tau2_alpha, VARIANCE_FLOOR)
    tau2_b = max(state.tau2_beta, VARIANCE_FLOOR)
    blocks = []
    if d > 0:
        if flat_gamma:
            blocks.append(sp.csr_matrix((d, d)))
        else:
            tau2_g = max(state.tau2_gamma, VARIANCE_FLOOR)
            blocks.append(sp.eye(d, format="csr") / tau2_g)
    blocks.append(coef_precision(config.family, graph, state, "alpha") / tau2_a)
    blocks.append(coef_precision(config.family, graph, state, "beta") / tau2_b)
    return theta0, sp.block_diag(blocks, format="csr")


def tune_empirical_bayes(
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    train_periods: Sequence[int] | None = None,
) -> IGHyper:
    """Pick IG hyperparameters so each prior mean matches a no-shrinkage estimate.

    The prior coefficient of variation is fixed at 0.1, which forces
    shape a = 102 (CV = 1/sqrt(a - 2)) and rate b = 101 * m for prior
    mean m.  The m's come from the per-unit least-squares fit: the
    residual variance for sigma^2, the cross-unit variances of the
    fitted intercepts and slopes for tau_alpha^2 / tau_beta^2, and the
    mean squared two-stage coefficient for tau_gamma^2.
    """
    from . import evaluate  # deferred: evaluate imports the sampler lazily

    fit = evaluate.fit_ols(panel, covariates, ModelFamily.NO_SHRINKAGE, train_periods)
    resid_var = fit.residual_variance
    if not resid_var > VARIANCE_FLOOR:
        raise ValueError("degenerate no-shrinkage fit: zero residual variance")
    m_alpha = float(np.var(fit.alpha, ddof=1))
    m_beta = float(np.var(fit.beta, ddof=1))
    if fit.gamma.size:
        m_gamma = float(np.mean(fit.gamma**2))
    else:
        m_gamma = 1.0
    for name, m in (("tau_alpha^2", m_alpha), ("tau_beta^2", m_beta), ("tau_gamma^2", m_gamma)):
        if not m > VARIANCE_FLOOR:
            raise ValueError(f"degenerate no-shrinkage fit: zero estimate for {name}")
    a = 102.0
    return IGHyper(
        a_sigma=a,
        b_sigma=resid_var * (a - 1),
        a_alpha=a,
        b_alpha=m_alpha * (a - 1),
        a_beta=a,
        b_beta=m_beta * (a - 1),
        a_gamma=a,
        b_gamma=m_gamma * (a - 1),
    )


def resolve_prior(
    config: ModelConfig,
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    train_periods: Sequence[int] | None = None,
) -> PriorSpec:
    """Concrete PriorSpec for a fit: EB-tuned, user-specified, or noninformative."""
    if config.prior_mode == "noninformative":
        return noninformative_prior()
    ig = config.ig_hyper or tune_empirical_bayes(panel, covariates, train_periods)
    return PriorSpec(ig=ig, flat_gamma=False)


def initial_state(
    config: ModelConfig,
    panel: ArealPanel,
    covariates: CovariateMatrix | None,
    graph: AdjacencyGraph,
    prior: PriorSpec,
    train_periods: Sequence[int] | None = None,
) -> ThetaState:
    """Chain start near the posterior mass.

    Coefficients start at their no-shrinkage estimates, variances at
    the corresponding prior means, rho at 0.5 (or its pinned value),
    all border weights at 1 and phi at its prior mean.
    """
    from . import evaluate

    fit = evaluate.fit_ols(panel, covariates, ModelFamily.NO_SHRINKAGE, train_periods)
    ig = prior.ig

    def prior_mean(a, b, fallback):
        return b / (a - 1) if a > 1 else fallback

    m = graph.n_edges
    rho0 = config.rho_fixed if config.rho_fixed is not None else 0.5
    phi0 = config.phi_prior[0] / (config.phi_prior[0] + config.phi_prior[1])
    return ThetaState(
        gamma=fit.gamma.copy(),
        alpha=fit.alpha.copy(),
        beta=fit.beta.copy(),
        alpha0=float(fit.alpha.mean()),
        beta0=float(fit.beta.mean()),
        sigma2=prior_mean(ig.a_sigma, ig.b_sigma, fit.residual_variance),
        tau2_alpha=prior_mean(ig.a_alpha, ig.b_alpha, float(np.var(fit.alpha, ddof=1))),
        tau2_beta=prior_mean(ig.a_beta, ig.b_beta, float(np.var(fit.beta, ddof=1))),
        tau2_gamma=prior_mean(
            ig.a_gamma, ig.b_gamma, float(np.mean(fit.gamma**2)) if fit.gamma.size else 1.0
        ),
        rho=rho0,
        w_alpha=np.ones(m, dtype=np.int8),
        w_beta=np.ones(m, dtype=np.int8),
        phi_alpha=phi0,
        phi_beta=phi0,
    )
