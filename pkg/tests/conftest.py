"""
Pytest configuration for the quantile metamodel tests.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add repository root to Python path
root_path = Path(__file__).parent.parent
sys.path.insert(0, str(root_path))

from src.curves import ProbGrid, QuantileCurve
from src.empirical import collect_many, curves_from_batches
from src.qmeta import MetamodelConfig, fit_metamodel
from src.simulators import TOY_SPACE, ToySimulator, make_stream


@pytest.fixture
def grid():
    """Small uniform probability grid."""
    return ProbGrid.uniform(21)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def normal_like_curve(grid: ProbGrid, loc: float, scale: float) -> QuantileCurve:
    """Quantile curve of a normal law, loc + scale * z_p."""
    from scipy.stats import norm
    return QuantileCurve(grid, loc + scale * norm.ppf(grid.levels))


@pytest.fixture(scope="module")
def toy_learning_set():
    """40 toy inputs with empirical curves at 2000 draws on 51 levels."""
    grid = ProbGrid.uniform(51)
    X = TOY_SPACE.sample(40, make_stream(7))
    curves = curves_from_batches(collect_many(ToySimulator(), X, 2000, 7), grid)
    return X, curves


@pytest.fixture(scope="module")
def toy_metamodel(toy_learning_set):
    """Metamodel with k=3 fitted on the toy learning set."""
    X, curves = toy_learning_set
    meta = fit_metamodel(X, curves, config=MetamodelConfig(k=3, n_starts=4, seed=1),
                         space=TOY_SPACE)
    return meta
