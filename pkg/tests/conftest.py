"""Shared fixtures: the frozen 4-unit path dataset and small helpers."""

import numpy as np
import pytest

from arealtrend.data import ArealPanel, covariates_from_table
from arealtrend.model import IGHyper, PriorSpec, ThetaState
from arealtrend.synthgen import path_graph

# Frozen fixture: 4 units on a path, T = 3 periods, two covariates.
PATH4_COUNTS = np.array(
    [
        [12, 9, 7],
        [30, 26, 31],
        [2, 0, 1],
        [55, 48, 41],
    ],
    dtype=np.int64,
)
PATH4_PERIODS = (2006, 2007, 2008)
PATH4_COV = np.array(
    [
        [0.8, -1.2],
        [-0.3, 0.4],
        [1.5, 0.9],
        [-2.0, -0.1],
    ]
)


@pytest.fixture()
def path4():
    graph = path_graph(4)
    panel = ArealPanel(graph.unit_ids, PATH4_PERIODS, PATH4_COUNTS)
    covariates = covariates_from_table(graph.unit_ids, ("x1", "x2"), PATH4_COV)
    return panel, covariates, graph


@pytest.fixture()
def path4_state():
    """A fixed mid-run sampler state for conditional-law comparisons."""
    return ThetaState(
        gamma=np.array([0.4, -0.25]),
        alpha=np.array([0.9, 1.1, 0.8, 1.3]),
        beta=np.array([-0.10, -0.02, 0.03, -0.06]),
        alpha0=1.0,
        beta0=-0.04,
        sigma2=0.09,
        tau2_alpha=0.3,
        tau2_beta=0.05,
        tau2_gamma=0.2,
        rho=0.55,
        w_alpha=np.array([1, 0, 1], dtype=np.int8),
        w_beta=np.array([1, 1, 1], dtype=np.int8),
        phi_alpha=0.85,
        phi_beta=0.9,
    )


@pytest.fixture()
def eb_prior():
    ig = IGHyper(
        a_sigma=102.0,
        b_sigma=9.0,
        a_alpha=102.0,
        b_alpha=30.0,
        a_beta=102.0,
        b_beta=5.0,
        a_gamma=102.0,
        b_gamma=20.0,
    )
    return PriorSpec(ig=ig)
