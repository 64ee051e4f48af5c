"""
Adaptive maximization of an output quantile by expected improvement.

At each iteration the predicted p-quantile ``U_x`` of every candidate not
yet evaluated is a Gaussian law (see :mod:`src.qmeta`).  The candidate
maximizing the expected improvement over the current best ``max(U_D)`` is
simulated, appended to the design and the metamodel is refitted.  The
final estimate is the design point with the largest ``U_D``.

``U_D`` is computed from the projections of the observed curves on the
current basis, so it is recomputed whenever the basis changes.  Refits may
then lower the best-so-far value; such regressions are flagged in the
report rather than hidden.

Classes
-------
Design, Candidate, QfeiConfig, TrajectoryRow, QfeiReport

Functions
---------
expected_improvement, expected_improvements
initial_design, select_candidate, step, run
write_report_json, write_trajectory_csv
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from .curves import ProbGrid, QuantileCurve, check_probability, curve_matrix
from .empirical import collect, collect_many, curves_from_batches, empirical_quantile_curve
from .errors import CandidatesExhausted, ConfigError, DomainError, DuplicateInputError
from .gp import InputSpace, point_key
from .qmeta import (MetamodelConfig, ObjectiveSpec, QuantileLaw, QuantileMetamodel, fit_metamodel,
                    predict_laws)
from .simulators import Simulator, make_stream

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BEST_FROM = ("projected", "raw")


# ======================================================================
# Expected improvement
# ======================================================================

def expected_improvement(law: QuantileLaw, best: float) -> float:
    """Expected improvement ``E[(U - best)+]`` of a Gaussian law.

    Returns ``sigma (u Phi(u) + phi(u))`` with ``u = (mean - best) / sigma``
    and ``max(mean - best, 0)`` when the variance is zero.

    Raises
    ------
    DomainError
        If the variance is negative.
    """
    value = expected_improvements(np.array([law.mean]), np.array([law.variance]), best)
    return float(value[0])


def expected_improvements(means: np.ndarray, variances: np.ndarray, best: float) -> np.ndarray:
    """Vectorized :func:`expected_improvement`."""
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if np.any(variances < 0):
        raise DomainError(f"variance must be non-negative, got {variances.min()}")
    sigma = np.sqrt(variances)
    gain = means - best
    ei = np.maximum(gain, 0.0)
    pos = sigma > 0
    if np.any(pos):
        u = gain[pos] / sigma[pos]
        ei[pos] = sigma[pos] * (u * norm.cdf(u) + norm.pdf(u))
    return np.maximum(ei, 0.0)


# ======================================================================
# Types
# ======================================================================

@dataclass(frozen=True, eq=False)
class Design:
    """Evaluated inputs with their curves and current-basis objective values.

    Attributes
    ----------
    inputs : ndarray, shape (n, d)
    curves : tuple of QuantileCurve
        Empirical curves.
    coefficients : ndarray, shape (n, k)
        Projection coefficients on the current basis.
    observed_obj : ndarray, shape (n,)
        Projected p-quantiles ``U_D``.
    raw_obj : ndarray, shape (n,)
        Empirical p-quantiles.
    """

    inputs: np.ndarray
    curves: Tuple[QuantileCurve, ...]
    coefficients: np.ndarray
    observed_obj: np.ndarray
    raw_obj: np.ndarray

    def __post_init__(self) -> None:
        keys = [point_key(x) for x in self.inputs]
        if len(set(keys)) != len(keys):
            raise DuplicateInputError("design holds the same input twice")
        object.__setattr__(self, "_keys", frozenset(keys))

    @classmethod
    def build(cls, inputs: np.ndarray, curves: Sequence[QuantileCurve],
              meta: QuantileMetamodel, p: Union[float, ObjectiveSpec]) -> "Design":
        """Evaluate ``U_D`` under the basis of ``meta``.

        ``meta`` must have been fitted on exactly these inputs and curves.
        ``p`` is a level or the objective itself.
        """
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        objective = p if isinstance(p, ObjectiveSpec) else ObjectiveSpec(p)
        grid, values = curve_matrix(curves)
        raw = objective.of_rows(grid, values)
        return cls(inputs=inputs, curves=tuple(curves), coefficients=meta.coefficients.copy(),
                   observed_obj=meta.coefficients @ objective.on_basis(meta.basis),
                   raw_obj=raw)

    @property
    def n(self) -> int:
        return int(self.inputs.shape[0])

    def contains(self, x: Sequence[float]) -> bool:
        return point_key(x) in self._keys

    def objective(self, best_from: str = "projected") -> np.ndarray:
        return self.observed_obj if best_from == "projected" else self.raw_obj

    def best(self, best_from: str = "projected") -> Tuple[int, float]:
        """Index and value of the largest objective; ties go to the earliest entry."""
        values = self.objective(best_from)
        i = int(np.argmax(values))
        return i, float(values[i])


@dataclass(frozen=True)
class Candidate:
    """A scored candidate input."""

    x: Tuple[float, ...]
    ei: float
    law: QuantileLaw


@dataclass(frozen=True, eq=False)
class QfeiConfig:
    """Settings of an adaptive run.

    Attributes
    ----------
    p : float
        Target quantile level.
    iterations : int
        Simulator calls after the initial design.
    n_mc : int
        Replications per simulator call.
    k : int
        Basis size.
    candidate_set : ndarray, shape (N, d)
        Restricted input set scanned by the acquisition.
    seed : int
        Master seed of the simulator streams and of the initial design.
    refit_every : int
        Reselect the basis and re-estimate ``theta`` every this many
        iterations; in between the basis is frozen and ``theta`` held.
    stop_rel_tol : float, optional
        Stop once the best EI falls below this fraction of the range of
        ``U_D``.
    best_from : str
        ``"projected"`` or ``"raw"`` objective values for ``max(U_D)``.
    metamodel : MetamodelConfig
    objective : ObjectiveSpec
        Derived from ``p``; the quantity maximized.
    """

    p: float
    iterations: int
    n_mc: int
    k: int
    candidate_set: np.ndarray
    seed: int = 0
    refit_every: int = 1
    stop_rel_tol: Optional[float] = None
    best_from: str = "projected"
    metamodel: MetamodelConfig = field(default_factory=MetamodelConfig)
    n_workers: int = 1
    objective: ObjectiveSpec = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", check_probability(self.p))
        object.__setattr__(self, "objective", ObjectiveSpec(self.p))
        for name in ("n_mc", "k", "refit_every"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.iterations, (int, np.integer)) or self.iterations < 0:
            raise ConfigError(f"iterations must be a non-negative integer, got {self.iterations!r}")
        if self.best_from not in BEST_FROM:
            raise ConfigError(f"best_from must be one of {BEST_FROM}, got {self.best_from!r}")
        if self.stop_rel_tol is not None and self.stop_rel_tol <= 0:
            raise ConfigError(f"stop_rel_tol must be positive, got {self.stop_rel_tol}")
        candidates = np.atleast_2d(np.asarray(self.candidate_set, dtype=float))
        if candidates.size == 0:
            raise ConfigError("candidate set is empty")
        object.__setattr__(self, "candidate_set", candidates)

    def metamodel_config(self) -> MetamodelConfig:
        return replace(self.metamodel, k=int(self.k))


@dataclass(frozen=True)
class TrajectoryRow:
    """One iteration of a run."""

    iteration: int
    x: Tuple[float, ...]
    ei: float
    obs_q: float
    best_so_far: float
    regression: bool = False


@dataclass
class QfeiReport:
    """Outcome of :func:`run`."""

    x_hat: Tuple[float, ...]
    x_hat_curve: QuantileCurve
    x_hat_value: float
    initial_best: Tuple[float, ...]
    initial_best_value: float
    trajectory: List[TrajectoryRow]
    design: Design
    metamodel: QuantileMetamodel
    simulator_calls: int
    stop_reason: str
    p: float
    seed: int
    timings: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def regressions(self) -> List[int]:
        return [row.iteration for row in self.trajectory if row.regression]

    def to_dict(self) -> Dict:
        return {
            "p": self.p,
            "seed": self.seed,
            "x_hat": list(self.x_hat),
            "x_hat_value": self.x_hat_value,
            "x_hat_curve": {"p": self.x_hat_curve.grid.levels.tolist(),
                            "value": self.x_hat_curve.values.tolist()},
            "initial_best": list(self.initial_best),
            "initial_best_value": self.initial_best_value,
            "simulator_calls": self.simulator_calls,
            "stop_reason": self.stop_reason,
            "design_size": self.design.n,
            "regressions": self.regressions,
            "trajectory": [
                {"iter": r.iteration, "x": list(r.x), "ei": r.ei, "obs_q": r.obs_q,
                 "best_so_far": r.best_so_far, "regression": r.regression}
                for r in self.trajectory
            ],
            "timings": dict(self.timings),
            "warnings": list(self.warnings),
        }


# ======================================================================
# Algorithm
# ======================================================================

def initial_design(cfg: QfeiConfig, sim: Simulator, n: int, grid: ProbGrid,
                   inputs: Optional[np.ndarray] = None,
                   exclude: Optional[np.ndarray] = None,
                   space: Optional[InputSpace] = None) -> Tuple[Design, QuantileMetamodel]:
    """Simulate and fit the initial learning set.

    Parameters
    ----------
    cfg : QfeiConfig
    sim : Simulator
    n : int
        Learning set size, used when ``inputs`` is not given.
    grid : ProbGrid
    inputs : ndarray, optional
        Explicit learning inputs; otherwise ``n`` candidates are drawn
        uniformly without replacement.
    exclude : ndarray, optional
        Candidates that must not be drawn.
    space : InputSpace, optional
        Normalization; defaults to the simulator's input space or the
        levels of the candidate set.
    """
    if inputs is None:
        pool = cfg.candidate_set
        if exclude is not None and len(exclude):
            banned = {point_key(e) for e in np.atleast_2d(exclude)}
            pool = pool[[point_key(c) not in banned for c in pool]]
        if n > len(pool):
            raise ConfigError(f"cannot draw {n} initial points from {len(pool)} candidates")
        rng = make_stream(cfg.seed)
        inputs = pool[np.sort(rng.choice(len(pool), size=n, replace=False))]
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    space = space or sim.input_space or InputSpace.from_points(cfg.candidate_set)

    batches = collect_many(sim, inputs, cfg.n_mc, cfg.seed, n_workers=cfg.n_workers)
    curves = curves_from_batches(batches, grid)
    meta = fit_metamodel(inputs, curves, config=cfg.metamodel_config(), space=space)
    return Design.build(inputs, curves, meta, cfg.objective), meta


def _remaining(cfg: QfeiConfig, state: Design) -> np.ndarray:
    keep = [not state.contains(c) for c in cfg.candidate_set]
    remaining = cfg.candidate_set[np.asarray(keep, dtype=bool)]
    if remaining.size == 0:
        raise CandidatesExhausted("every candidate input has been evaluated")
    return remaining[np.lexsort(remaining.T[::-1])]


def select_candidate(state: Design, meta: QuantileMetamodel, cfg: QfeiConfig) -> Candidate:
    """Unevaluated candidate with the largest expected improvement.

    Candidates are scanned in lexicographic order and the first maximum
    wins.

    Raises
    ------
    CandidatesExhausted
        If every candidate is already in the design.
    """
    remaining = _remaining(cfg, state)
    _, best = state.best(cfg.best_from)
    means, variances = predict_laws(meta, remaining, cfg.p)
    variances = np.maximum(variances, 0.0)
    scores = expected_improvements(means, variances, best)
    i = int(np.argmax(scores))
    law = QuantileLaw(float(means[i]), float(variances[i]), cfg.p)
    return Candidate(tuple(float(v) for v in remaining[i]), float(scores[i]), law)


def evaluate(state: Design, meta: QuantileMetamodel, cfg: QfeiConfig, sim: Simulator,
             x: Sequence[float], iteration: int = 1) -> Tuple[Design, QuantileMetamodel]:
    """Simulate ``x``, append it to the design and refit the metamodel."""
    batch = collect(sim, x, cfg.n_mc, cfg.seed)
    curve = empirical_quantile_curve(batch, meta.grid)
    inputs = np.vstack([state.inputs, np.asarray(x, dtype=float).reshape(1, -1)])
    curves = list(state.curves) + [curve]
    if iteration % cfg.refit_every == 0:
        new_meta = fit_metamodel(inputs, curves, config=cfg.metamodel_config(), space=meta.space)
    else:
        new_meta = fit_metamodel(inputs, curves, config=cfg.metamodel_config(), space=meta.space,
                                 basis=meta.basis, thetas=meta.thetas)
    return Design.build(inputs, curves, new_meta, cfg.objective), new_meta


def step(state: Design, meta: QuantileMetamodel, cfg: QfeiConfig, sim: Simulator,
         iteration: int = 1) -> Tuple[Design, QuantileMetamodel, Candidate]:
    """One adaptive iteration: select by EI, simulate, refit.

    Raises
    ------
    CandidatesExhausted
        If no candidate is left.
    SimulatorError
        Propagated from the simulator.
    """
    candidate = select_candidate(state, meta, cfg)
    state, meta = evaluate(state, meta, cfg, sim, candidate.x, iteration)
    return state, meta, candidate


def run(cfg: QfeiConfig, sim: Simulator, initial: Design,
        meta: Optional[QuantileMetamodel] = None) -> QfeiReport:
    """Run ``cfg.iterations`` adaptive iterations from an initial design.

    Parameters
    ----------
    cfg : QfeiConfig
    sim : Simulator
    initial : Design
    meta : QuantileMetamodel, optional
        Metamodel fitted on ``initial``; refitted when omitted.

    Returns
    -------
    QfeiReport
    """
    started = time.perf_counter()
    allowed = {point_key(c) for c in cfg.candidate_set}
    for x in initial.inputs:
        if point_key(x) not in allowed:
            raise ConfigError(f"initial design point {list(x)} is not a candidate")
    if meta is None:
        meta = fit_metamodel(initial.inputs, initial.curves, config=cfg.metamodel_config(),
                             space=sim.input_space or InputSpace.from_points(cfg.candidate_set))
        initial = Design.build(initial.inputs, initial.curves, meta, cfg.objective)

    state = initial
    i0, v0 = state.best(cfg.best_from)
    initial_best = tuple(float(v) for v in state.inputs[i0])
    trajectory: List[TrajectoryRow] = []
    notes: List[str] = list(meta.warnings)
    previous_best = v0
    stop_reason = "budget"
    fit_seconds = 0.0

    for it in range(1, cfg.iterations + 1):
        try:
            candidate = select_candidate(state, meta, cfg)
        except CandidatesExhausted:
            logger.info("Candidates exhausted after %d iterations", it - 1)
            stop_reason = "exhausted"
            break
        if cfg.stop_rel_tol is not None:
            values = state.objective(cfg.best_from)
            spread = float(values.max() - values.min())
            if candidate.ei < cfg.stop_rel_tol * spread:
                logger.info("Expected improvement %.3e below tolerance, stopping at iteration %d",
                            candidate.ei, it)
                stop_reason = "stabilized"
                break

        t0 = time.perf_counter()
        state, meta = evaluate(state, meta, cfg, sim, candidate.x, it)
        fit_seconds += time.perf_counter() - t0

        _, best_now = state.best(cfg.best_from)
        new_q = float(state.objective(cfg.best_from)[-1])
        regression = best_now < previous_best - 1e-12
        if regression:
            msg = (f"iteration {it}: best-so-far fell from {previous_best:.6g} to "
                   f"{best_now:.6g} after refit")
            logger.warning(msg)
            notes.append(msg)
        logger.info("iter %d: x=%s ei=%.4g obs_q=%.4g best=%.4g", it, list(candidate.x),
                    candidate.ei, new_q, best_now)
        trajectory.append(TrajectoryRow(it, candidate.x, candidate.ei, new_q, best_now, regression))
        previous_best = best_now

    i_hat, v_hat = state.best(cfg.best_from)
    return QfeiReport(
        x_hat=tuple(float(v) for v in state.inputs[i_hat]),
        x_hat_curve=state.curves[i_hat],
        x_hat_value=v_hat,
        initial_best=initial_best,
        initial_best_value=v0,
        trajectory=trajectory,
        design=state,
        metamodel=meta,
        simulator_calls=cfg.n_mc * state.n,
        stop_reason=stop_reason,
        p=cfg.p,
        seed=cfg.seed,
        timings={"total_s": time.perf_counter() - started, "evaluate_s": fit_seconds},
        warnings=notes,
    )


# ======================================================================
# Report output
# ======================================================================

def write_report_json(report: QfeiReport, path: PathLike) -> None:
    """Write the report as indented JSON."""
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


def write_trajectory_csv(report: QfeiReport, path: PathLike) -> None:
    """Write ``iter,x1..xd,ei,obs_q,best_so_far`` rows."""
    d = len(report.x_hat)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter"] + [f"x{i + 1}" for i in range(d)] + ["ei", "obs_q", "best_so_far"])
        for row in report.trajectory:
            writer.writerow([row.iteration] + [repr(v) for v in row.x]
                            + [repr(row.ei), repr(row.obs_q), repr(row.best_so_far)])


__all__ = [
    "BEST_FROM",
    "expected_improvement",
    "expected_improvements",
    "Design",
    "Candidate",
    "QfeiConfig",
    "TrajectoryRow",
    "QfeiReport",
    "initial_design",
    "select_candidate",
    "evaluate",
    "step",
    "run",
    "write_report_json",
    "write_trajectory_csv",
]
