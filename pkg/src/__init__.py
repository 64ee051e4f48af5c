"""
QFEI - quantile-function metamodeling and quantile optimization

Emulates the output distribution of an expensive stochastic simulator by a
quantile-curve basis with kriged coefficients, and searches the input that
maximizes an output quantile by expected improvement.
"""

__version__ = "0.3.0"

try:
    from .errors import (QfeiError, ConfigError, DomainError, SimulatorError,
                         NumericalError, RankError, CandidatesExhausted)
    from .curves import ProbGrid, QuantileCurve, l2_distance, is_monotone, eval_at
    from .empirical import SampleBatch, empirical_quantile_curve, collect
    from .mmp import Basis, CoeffVector, select_basis, project, projection_error
    from .gp import InputSpace, GpModel, GaussianPrediction, fit, predict, neg_log_likelihood
    from .qmeta import (QuantileMetamodel, QuantileLaw, ObjectiveSpec, fit_metamodel,
                        predict_curve, predict_law, global_error, objective_error)
    from .qfei import Design, Candidate, QfeiConfig, expected_improvement, step, run
    from .simulators import Simulator, ToySimulator, ReplaySimulator, ExternalSimulator

    __all__ = [
        "QfeiError",
        "ConfigError",
        "DomainError",
        "SimulatorError",
        "NumericalError",
        "RankError",
        "CandidatesExhausted",
        "ProbGrid",
        "QuantileCurve",
        "l2_distance",
        "is_monotone",
        "eval_at",
        "SampleBatch",
        "empirical_quantile_curve",
        "collect",
        "Basis",
        "CoeffVector",
        "select_basis",
        "project",
        "projection_error",
        "InputSpace",
        "GpModel",
        "GaussianPrediction",
        "fit",
        "predict",
        "neg_log_likelihood",
        "QuantileMetamodel",
        "QuantileLaw",
        "ObjectiveSpec",
        "fit_metamodel",
        "predict_curve",
        "predict_law",
        "global_error",
        "objective_error",
        "Design",
        "Candidate",
        "QfeiConfig",
        "expected_improvement",
        "step",
        "run",
        "Simulator",
        "ToySimulator",
        "ReplaySimulator",
        "ExternalSimulator",
    ]
except ImportError as e:
    # Graceful fallback if numerical dependencies are missing
    print(f"Warning: Could not import QFEI components: {e}")
    __all__ = []
