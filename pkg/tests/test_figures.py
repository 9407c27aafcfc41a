"""Report figures render to valid image files."""

import numpy as np

from arealtrend.evaluate import ComparisonRow, ComparisonTable
from arealtrend.figures import (
    plot_barrier_probabilities,
    plot_mse_comparison,
    plot_partial_effects,
    plot_traces,
)
from arealtrend.model import ChainSettings, ModelConfig, ModelFamily
from arealtrend.sampler import run_chain
from arealtrend.summarize import barrier_report
from arealtrend.synthgen import SyntheticSpec, grid_graph, simulate

PNG_MAGIC = b"\x89PNG"


def _png(path):
    return path.read_bytes()[:4] == PNG_MAGIC


def test_partial_effects_figure(tmp_path):
    effects = {
        "car": (np.array([0.2, -0.1]), np.array([0.1, -0.2]), np.array([0.3, 0.0])),
        "noshrink": (np.array([0.25, -0.05]), np.array([0.2, -0.1]), np.array([0.3, 0.0])),
    }
    path = tmp_path / "partial_effects.png"
    plot_partial_effects(effects, ["x1", "x2"], path)
    assert _png(path)


def test_traces_and_barriers_figures(tmp_path):
    spec = SyntheticSpec(graph=grid_graph(3, 3), T=5, seed=1)
    sim = simulate(spec)
    cfg = ModelConfig(
        family=ModelFamily.VARIABLE_BORDERS,
        chain=ChainSettings(n_iter=160, burn_in=40, thin=1, seed=2),
    )
    chain = run_chain(cfg, sim.panel, sim.covariates, sim.graph)
    tpath = tmp_path / "traces.png"
    plot_traces(chain, tpath, params=["sigma2", "rho"])
    assert _png(tpath)
    bpath = tmp_path / "barriers.png"
    plot_barrier_probabilities(barrier_report(chain), bpath)
    assert _png(bpath)


def test_mse_comparison_figure(tmp_path):
    table = ComparisonTable(
        rows=[
            ComparisonRow(ModelFamily.NO_SHRINKAGE, 0.05, 0.13, None, None, 0.2),
            ComparisonRow(ModelFamily.SPATIAL_CAR, 0.07, 0.10, -19.5, None, 0.6),
        ],
        holdout_period=2015,
        train_periods=(2006, 2007),
    )
    path = tmp_path / "mse.png"
    plot_mse_comparison(table, path)
    assert _png(path)
