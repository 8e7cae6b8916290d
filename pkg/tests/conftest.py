"""
Pytest configuration and shared fixtures
"""

import sys
from pathlib import Path
from unittest.mock import MagicMock

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from doeblin.models.chain import DenseDistribution, DenseKernel, StateSpace, random_kernel
from doeblin.models.mrf import PairwiseModel, ReferenceModel
from doeblin.models.schemas import ExperimentConfig
from doeblin.services.gibbs import chain_edges, random_model


@pytest.fixture
def rng():
    """Fresh seeded generator per test"""
    return np.random.default_rng(20240611)


@pytest.fixture
def flat4():
    return StateSpace.flat(4)


@pytest.fixture
def random_triple(flat4, rng):
    """(base kernel, reference, ε) on four states"""
    base = random_kernel(flat4, rng)
    reference = DenseDistribution.normalized(flat4, rng.dirichlet(np.ones(4)))
    return base, reference, 0.3


@pytest.fixture
def flip_chain():
    """Deterministic swap of two states, reference concentrated on the first"""
    space = StateSpace.flat(2)
    kernel = DenseKernel(space=space, rows=[[0.0, 1.0], [1.0, 0.0]])
    return kernel, DenseDistribution.point_mass(space, 0)


@pytest.fixture
def ising_pair():
    """Ferromagnetic 2-spin model with coupling 0.8 and a small field on spin 0"""
    space = StateSpace(num_variables=2, num_labels=2)
    model = PairwiseModel.zeros(space, [(0, 1)])
    theta = model.theta.copy()
    theta[model.node_index(0, 1)] = 0.3
    theta[model.edge_index(0, 0, 0)] = 0.8
    theta[model.edge_index(0, 1, 1)] = 0.8
    return model.with_theta(theta)


@pytest.fixture
def chain3_model():
    """Random 3-variable binary chain"""
    space = StateSpace(num_variables=3, num_labels=2)
    return random_model(space, chain_edges(3), np.random.default_rng(7), scale=0.8)


@pytest.fixture
def chain3_reference():
    space = StateSpace(num_variables=3, num_labels=2)
    return ReferenceModel(space=space, q=[[0.6, 0.4], [0.3, 0.7], [0.5, 0.5]])


@pytest.fixture
def quiet_settings():
    """Settings stand-in for formatter tests"""
    mock_settings = MagicMock()
    mock_settings.LOG_COLOR = "false"
    mock_settings.NO_COLOR = "0"
    mock_settings.LOG_TIMESTAMP = "utc"
    mock_settings.LOG_TIMEZONE = "UTC"
    mock_settings.LOG_TIMESTAMP_PRECISION = 6
    mock_settings.LOG_LEVEL = "INFO"
    mock_settings.LOG_FILE = ""
    mock_settings.log_file_enabled = False
    return mock_settings


@pytest.fixture
def small_config(tmp_path):
    """Fast experiment: 3-variable chain teacher, few rows and iterations"""
    return ExperimentConfig.model_validate(
        {
            "seed": 11,
            "epsilon": 0.3,
            "model": {"topology": "chain", "num_variables": 3, "num_labels": 2},
            "reference": {"kind": "fit", "smoothing": 1.0},
            "train": {
                "particles": 8,
                "learning_rate": 0.2,
                "iterations": 3,
                "batch_size": 4,
                "eval_every": 1,
            },
            "gen": {"num_rows": 60, "heldout_rows": 20},
            "diag": {"epsilons": [0.3, 1.0], "t_max": 5, "audit_pairs": 10},
            "bench": {
                "sizes": [4, 16],
                "particle_counts": [2, 4],
                "gibbs_steps": 50,
                "repeats": 1,
            },
            "output_dir": str(tmp_path / "run"),
        }
    )
