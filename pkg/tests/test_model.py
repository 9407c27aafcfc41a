"""Model configuration, priors and the joint coefficient prior."""

import numpy as np
import pytest
import scipy.integrate
import scipy.stats

from arealtrend.linalg import SparseCholesky
from arealtrend.model import (
    ChainSettings,
    IGHyper,
    ModelConfig,
    ModelFamily,
    ThetaState,
    build_joint_prior,
    initial_state,
    noninformative_prior,
    resolve_prior,
    tune_empirical_bayes,
)
from arealtrend.synthgen import SyntheticSpec, grid_graph, path_graph, simulate


class TestChainSettings:
    def test_retained_count(self):
        cfg = ChainSettings(n_iter=2050, burn_in=50, thin=2)
        assert cfg.n_retained == 1000

    def test_retained_floor(self):
        assert ChainSettings(n_iter=105, burn_in=4, thin=10).n_retained == 10

    def test_burn_in_bound(self):
        with pytest.raises(ValueError):
            ChainSettings(n_iter=10, burn_in=10)

    def test_thin_bound(self):
        with pytest.raises(ValueError):
            ChainSettings(thin=0)


class TestModelConfig:
    def test_family_coercion_and_json_roundtrip(self, tmp_path):
        cfg = ModelConfig(family="variable_borders", mh_b=12.0)
        doc = cfg.to_dict()
        path = tmp_path / "config.json"
        import json

        path.write_text(json.dumps(doc))
        again = ModelConfig.from_json(path)
        assert again == cfg

    def test_positive_ig_required(self):
        bad = IGHyper(1, 1, 1, 1, 1, 1, 0, 1)
        with pytest.raises(ValueError, match="positive"):
            ModelConfig(ig_hyper=bad)

    def test_unknown_prior_mode(self):
        with pytest.raises(ValueError):
            ModelConfig(prior_mode="flat")

    def test_rho_fixed_domain(self):
        with pytest.raises(ValueError):
            ModelConfig(rho_fixed=1.0)

    def test_with_overrides_touches_chain(self):
        cfg = ModelConfig().with_overrides(n_iter=99, seed=5, family=ModelFamily.SPATIAL_CAR)
        assert cfg.chain.n_iter == 99 and cfg.chain.seed == 5
        assert cfg.family is ModelFamily.SPATIAL_CAR


class TestEmpiricalBayes:
    def _sim(self, seed=0):
        spec = SyntheticSpec(graph=grid_graph(4, 4), T=8, seed=seed, gamma=(0.4, -0.2))
        return simulate(spec)

    def test_shape_and_rate_identities(self):
        sim = self._sim()
        ig = tune_empirical_bayes(sim.panel, sim.covariates)
        assert ig.a_sigma == 102.0
        # prior mean b/(a-1) must equal the no-shrinkage estimate, so b = 101 m
        for a, b in ((ig.a_sigma, ig.b_sigma), (ig.a_alpha, ig.b_alpha), (ig.a_beta, ig.b_beta)):
            m = b / (a - 1)
            assert b == pytest.approx(101.0 * m)
            # coefficient of variation 1/sqrt(a-2) = 0.1
            sd = b / ((a - 1) * np.sqrt(a - 2))
            assert sd / m == pytest.approx(0.1)

    def test_rate_scales_with_estimate(self):
        # m = 0.05 -> b = 5.05, by the rate identity b = m (a - 1)
        assert 0.05 * 101.0 == pytest.approx(5.05)

    def test_degenerate_fit_rejected(self):
        spec = SyntheticSpec(graph=path_graph(4), T=4, seed=1, sigma2=0.0)
        sim = simulate(spec)
        with pytest.raises(ValueError, match="degenerate"):
            tune_empirical_bayes(sim.panel, sim.covariates)


def _state(graph, rho=0.5, w_alpha=None, w_beta=None, d=2, **kw):
    n = graph.n
    m = graph.n_edges
    defaults = dict(
        gamma=np.zeros(d),
        alpha=np.zeros(n),
        beta=np.zeros(n),
        alpha0=0.0,
        beta0=0.0,
        sigma2=1.0,
        tau2_alpha=2.0,
        tau2_beta=0.5,
        tau2_gamma=4.0,
        rho=rho,
        w_alpha=np.ones(m, np.int8) if w_alpha is None else np.asarray(w_alpha, np.int8),
        w_beta=np.ones(m, np.int8) if w_beta is None else np.asarray(w_beta, np.int8),
        phi_alpha=0.9,
        phi_beta=0.9,
    )
    defaults.update(kw)
    return ThetaState(**defaults)


class TestBuildJointPrior:
    def test_global_shrinkage_is_diagonal(self):
        g = path_graph(3)
        state = _state(g)
        theta0, Omega0 = build_joint_prior(ModelConfig(family=ModelFamily.GLOBAL_SHRINKAGE), g, state)
        expected = np.diag([1 / 4.0] * 2 + [1 / 2.0] * 3 + [1 / 0.5] * 3)
        np.testing.assert_allclose(Omega0.toarray(), expected, atol=1e-15)
        np.testing.assert_allclose(theta0, np.zeros(8))

    def test_car_at_rho_zero_reduces_to_global_shrinkage(self):
        g = path_graph(4)
        state = _state(g, rho=0.0)
        _, O_car = build_joint_prior(ModelConfig(family=ModelFamily.SPATIAL_CAR), g, state)
        _, O_glob = build_joint_prior(ModelConfig(family=ModelFamily.GLOBAL_SHRINKAGE), g, state)
        assert abs(O_car - O_glob).max() == 0.0

    def test_variable_borders_all_zero_weights(self):
        g = path_graph(4)
        rho = 0.3
        state = _state(g, rho=rho, w_alpha=[0, 0, 0], w_beta=[0, 0, 0])
        _, O_vb = build_joint_prior(ModelConfig(family=ModelFamily.VARIABLE_BORDERS), g, state)
        _, O_glob = build_joint_prior(ModelConfig(family=ModelFamily.GLOBAL_SHRINKAGE), g, state)
        # with every weight zero the Laplacian vanishes and only the
        # (1 - rho) identity scale separates the two priors
        top = O_vb.toarray()
        ref = O_glob.toarray()
        d = 2
        np.testing.assert_allclose(top[:d, :d], ref[:d, :d], atol=1e-15)
        np.testing.assert_allclose(top[d:, d:], (1 - rho) * ref[d:, d:], atol=1e-15)

    def test_symmetric_positive_definite(self):
        g = grid_graph(3, 3)
        state = _state(g, rho=0.97, w_alpha=np.random.default_rng(0).integers(0, 2, g.n_edges))
        _, Omega0 = build_joint_prior(ModelConfig(family=ModelFamily.VARIABLE_BORDERS), g, state)
        assert abs(Omega0 - Omega0.T).max() == 0.0
        SparseCholesky(Omega0.tocsc())  # factorization success == PD

    def test_linear_in_inverse_tau(self):
        g = path_graph(5)
        cfg = ModelConfig(family=ModelFamily.SPATIAL_CAR)
        s1 = _state(g, tau2_alpha=1.0)
        s2 = _state(g, tau2_alpha=2.0)
        _, O1 = build_joint_prior(cfg, g, s1)
        _, O2 = build_joint_prior(cfg, g, s2)
        d, n = 2, 5
        block1 = O1.toarray()[d : d + n, d : d + n]
        block2 = O2.toarray()[d : d + n, d : d + n]
        np.testing.assert_allclose(block2, 0.5 * block1, atol=1e-15)

    def test_alpha_only_variant_has_fixed_beta_block(self):
        g = path_graph(4)
        rng = np.random.default_rng(3)
        for _ in range(5):
            state = _state(
                g,
                rho=rng.uniform(0.1, 0.9),
                w_alpha=rng.integers(0, 2, g.n_edges),
                w_beta=rng.integers(0, 2, g.n_edges),
            )
            _, O_ao = build_joint_prior(
                ModelConfig(family=ModelFamily.VARIABLE_BORDERS_ALPHA_ONLY), g, state
            )
            full_w = _state(g, rho=state.rho, tau2_alpha=state.tau2_alpha, tau2_beta=state.tau2_beta)
            _, O_car = build_joint_prior(ModelConfig(family=ModelFamily.SPATIAL_CAR), g, full_w)
            d, n = 2, 4
            np.testing.assert_allclose(
                O_ao.toarray()[d + n :, d + n :], O_car.toarray()[d + n :, d + n :], atol=1e-15
            )

    def test_theta0_layout(self):
        g = path_graph(3)
        state = _state(g, alpha0=2.5, beta0=-0.7)
        theta0, _ = build_joint_prior(ModelConfig(family=ModelFamily.SPATIAL_CAR), g, state)
        np.testing.assert_allclose(theta0, [0, 0, 2.5, 2.5, 2.5, -0.7, -0.7, -0.7])


class TestNoninformativePrior:
    def test_limiting_shapes(self):
        prior = noninformative_prior()
        assert prior.flat_gamma
        # p(sigma^2) ~ 1/sigma^2 adds nothing to the shape: N/2 exactly
        assert prior.ig.a_sigma == 0.0 and prior.ig.b_sigma == 0.0
        # p(tau^2) ~ 1/tau gives shape n/2 - 1/2
        assert prior.ig.a_alpha == -0.5 and prior.ig.b_alpha == 0.0

    def test_sigma2_conditional_matches_grid_integration(self):
        # posterior for sigma^2 under p ~ 1/sigma^2 with Gaussian residuals:
        # numerically integrate the unnormalized density and compare with
        # the claimed IG(N/2, rss/2) law
        rng = np.random.default_rng(8)
        resid = rng.standard_normal(12) * 0.7
        N, rss = resid.size, float(resid @ resid)

        def unnorm(s2):
            return s2 ** (-N / 2 - 1) * np.exp(-rss / (2 * s2))

        grid = np.linspace(1e-3, 12.0, 120_001)
        weights = unnorm(grid)
        total = scipy.integrate.trapezoid(weights, grid)
        grid_mean = scipy.integrate.trapezoid(grid * weights, grid) / total
        ig_mean = scipy.stats.invgamma(a=N / 2, scale=rss / 2).mean()
        assert grid_mean == pytest.approx(ig_mean, rel=1e-3)

    def test_tau2_conditional_matches_grid_integration(self):
        # p(tau^2) ~ 1/tau with an n-dim Gaussian quadratic form Q gives
        # IG(n/2 - 1/2, Q/2)
        n, Q = 9, 3.4

        def unnorm(t2):
            return t2 ** (-n / 2 - 0.5) * np.exp(-Q / (2 * t2))

        grid = np.linspace(1e-4, 30.0, 300_001)
        weights = unnorm(grid)
        total = scipy.integrate.trapezoid(weights, grid)
        grid_mean = scipy.integrate.trapezoid(grid * weights, grid) / total
        ig_mean = scipy.stats.invgamma(a=n / 2 - 0.5, scale=Q / 2).mean()
        assert grid_mean == pytest.approx(ig_mean, rel=1e-3)


class TestInitialState:
    def test_starts_at_no_shrinkage_estimates(self):
        from arealtrend.evaluate import fit_ols

        spec = SyntheticSpec(graph=grid_graph(3, 3), T=6, seed=4, gamma=(0.3,))
        sim = simulate(spec)
        cfg = ModelConfig(family=ModelFamily.SPATIAL_CAR)
        prior = resolve_prior(cfg, sim.panel, sim.covariates)
        state = initial_state(cfg, sim.panel, sim.covariates, sim.graph, prior)
        fit = fit_ols(sim.panel, sim.covariates, ModelFamily.NO_SHRINKAGE)
        np.testing.assert_allclose(state.alpha, fit.alpha)
        np.testing.assert_allclose(state.beta, fit.beta)
        np.testing.assert_allclose(state.gamma, fit.gamma)
        assert state.rho == 0.5
        assert np.all(state.w_alpha == 1) and np.all(state.w_beta == 1)
        assert state.phi_alpha == pytest.approx(0.9)
        # EB prior means: b / (a - 1) = m
        assert state.sigma2 == pytest.approx(prior.ig.b_sigma / (prior.ig.a_sigma - 1))

    def test_rho_pinned(self):
        spec = SyntheticSpec(graph=path_graph(4), T=5, seed=2)
        sim = simulate(spec)
        cfg = ModelConfig(family=ModelFamily.SPATIAL_CAR, rho_fixed=0.0)
        prior = resolve_prior(cfg, sim.panel, sim.covariates)
        state = initial_state(cfg, sim.panel, sim.covariates, sim.graph, prior)
        assert state.rho == 0.0
