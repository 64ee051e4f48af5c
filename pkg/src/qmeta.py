"""
Quantile-function metamodel.

A basis ``R_1..R_k`` is selected among the learning curves, every curve
is projected on it and one kriging model is fitted per coefficient.  The
predicted curve at ``x`` is ``sum_j psi_hat_j(x) R_j`` and the predicted
p-quantile follows the Gaussian law

    N( sum_j psi_hat_j(x) R_j(p),  sum_j R_j(p)^2 MSE_j(x) )

since the coefficient processes are taken independent.

With ``transform="log-shift"`` the kriging models are fitted on
``log(1 + psi)`` and point predictions are mapped back with
``exp(phi) - 1``; variances then use the log-normal formula.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .curves import (ProbGrid, QuantileCurve, check_probability, curve_matrix, eval_at,
                     is_monotone)
from .errors import (DegenerateObjectiveError, DomainError, GridMismatchError,
                     TransformDomainError, ZeroNormError)
from .gp import N_STARTS, THETA_BOUNDS, GpModel, InputSpace, fit, load_model, save_model
from .mmp import Basis, coefficient_table, load_basis, save_basis, select_basis

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TRANSFORMS = ("identity", "log-shift")


@dataclass(frozen=True)
class MetamodelConfig:
    """Settings of a metamodel fit.

    Attributes
    ----------
    k : int
        Basis size.
    kernel : str
        Correlation family of the coefficient models.
    transform : str
        ``"identity"`` or ``"log-shift"``.
    n_starts, theta_bounds, maxiter
        Likelihood search settings passed to :func:`src.gp.fit`.
    seed : int
        Seed of the likelihood multi-start design.
    n_workers : int
        Threads used to fit the ``k`` coefficient models.
    """

    k: int = 4
    kernel: str = "matern52"
    transform: str = "identity"
    n_starts: int = N_STARTS
    theta_bounds: Tuple[float, float] = THETA_BOUNDS
    maxiter: int = 200
    seed: int = 0
    n_workers: int = 1

    def __post_init__(self) -> None:
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"transform must be one of {TRANSFORMS}, got {self.transform!r}")
        lo, hi = self.theta_bounds
        if not 0 < lo < hi:
            raise ValueError(f"theta_bounds must satisfy 0 < lower < upper, got {self.theta_bounds}")


@dataclass(frozen=True)
class QuantileLaw:
    """Gaussian law of the predicted p-quantile at one input."""

    mean: float
    variance: float
    level: float

    def __post_init__(self) -> None:
        if self.variance < 0:
            raise DomainError(f"variance must be non-negative, got {self.variance}")
        check_probability(self.level)


@dataclass(frozen=True)
class ObjectiveSpec:
    """Objective ``H(q) = q(p)``: the p-quantile of the output."""

    p: float
    kind: str = "quantile-level"

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", check_probability(self.p))
        if self.kind != "quantile-level":
            raise ValueError(f"unsupported objective kind {self.kind!r}")

    def __call__(self, curve: QuantileCurve) -> float:
        return eval_at(curve, self.p)

    def of_rows(self, grid: ProbGrid, values: np.ndarray) -> np.ndarray:
        """Objective of every row of a ``(n, m)`` array of curve values on ``grid``."""
        return np.array([np.interp(self.p, grid.levels, row) for row in np.atleast_2d(values)])

    def on_basis(self, basis: Basis) -> np.ndarray:
        """Objective of each basis function; ``H`` of a combination is linear in these."""
        return np.array([self(f) for f in basis.functions])


@dataclass(frozen=True, eq=False)
class QuantileMetamodel:
    """Basis plus one kriging model per basis coefficient.

    Attributes
    ----------
    grid : ProbGrid
    basis : Basis
    coeff_models : tuple of GpModel
        Fitted on normalized inputs, one per basis function.
    transform : str
    space : InputSpace
        Normalization of raw inputs.
    design : ndarray, shape (n, d)
        Raw learning inputs.
    coefficients : ndarray, shape (n, k)
        Projection coefficients of the learning curves.
    warnings : list of str
        Numerical warnings raised while fitting.
    """

    grid: ProbGrid
    basis: Basis
    coeff_models: Tuple[GpModel, ...]
    transform: str
    space: InputSpace
    design: np.ndarray
    coefficients: np.ndarray
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.coeff_models) != self.basis.k:
            raise ValueError(f"{len(self.coeff_models)} coefficient models for a basis of "
                             f"size {self.basis.k}")
        if self.basis.grid != self.grid:
            raise GridMismatchError("basis grid differs from metamodel grid")

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def thetas(self) -> List[np.ndarray]:
        return [m.theta for m in self.coeff_models]

    def coefficient_moments(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Predicted coefficient means and variances at raw inputs, each ``(n, k)``."""
        U = self.space.normalize(np.atleast_2d(np.asarray(X, dtype=float)))
        means = np.empty((U.shape[0], self.k))
        variances = np.empty((U.shape[0], self.k))
        for j, model in enumerate(self.coeff_models):
            means[:, j], variances[:, j] = model.predict_many(U)
        if self.transform == "log-shift":
            means, variances = (np.expm1(means),
                                np.expm1(variances) * np.exp(2.0 * means + variances))
        return means, variances


def _basis_at(basis: Basis, p: float) -> np.ndarray:
    return ObjectiveSpec(p).on_basis(basis)


def _to_log_shift(coeffs: np.ndarray) -> np.ndarray:
    negative = np.argwhere(coeffs < 0)
    if negative.size:
        i, j = negative[0]
        raise TransformDomainError(
            f"log-shift transform needs non-negative coefficients; psi_{j + 1} = "
            f"{coeffs[i, j]:.6g} at learning point {i}")
    return np.log1p(coeffs)


def fit_metamodel(designs: np.ndarray, curves: Sequence[QuantileCurve], k: Optional[int] = None,
                  config: Optional[MetamodelConfig] = None, space: Optional[InputSpace] = None,
                  basis: Optional[Basis] = None,
                  thetas: Optional[Sequence[Sequence[float]]] = None) -> QuantileMetamodel:
    """Fit the quantile-function metamodel.

    Parameters
    ----------
    designs : ndarray, shape (n, d)
        Raw learning inputs.
    curves : sequence of QuantileCurve
        Empirical quantile curve at each input.
    k : int, optional
        Basis size, overriding ``config.k``.
    config : MetamodelConfig, optional
    space : InputSpace, optional
        Normalization of the inputs; defaults to the levels seen in
        ``designs``.
    basis : Basis, optional
        Reuse a basis instead of selecting one.
    thetas : sequence, optional
        Fixed correlation lengths per coefficient model.

    Returns
    -------
    QuantileMetamodel

    Raises
    ------
    DomainError
        If the inputs and curves do not pair up or ``n <= d + 1``.
    TransformDomainError
        If ``log-shift`` is requested and a coefficient is negative.
    """
    config = config or MetamodelConfig()
    k = config.k if k is None else int(k)
    X = np.atleast_2d(np.asarray(designs, dtype=float))
    if X.shape[0] != len(curves):
        raise DomainError(f"{X.shape[0]} inputs but {len(curves)} curves")
    n, d = X.shape
    if n <= d + 1:
        raise DomainError(f"need more than d+1={d + 1} learning points, got {n}")
    grid, _ = curve_matrix(curves)
    space = space or InputSpace.from_points(X)
    notes: List[str] = []

    if basis is None:
        basis = select_basis(curves, k)
    elif basis.grid != grid:
        raise GridMismatchError("supplied basis and curves use different grids")
    coeffs = coefficient_table(curves, basis)

    negative = int(np.sum(np.any(coeffs < 0, axis=1)))
    if negative:
        msg = f"{negative} of {n} learning curves have negative projection coefficients"
        logger.warning(msg)
        notes.append(msg)

    targets = _to_log_shift(coeffs) if config.transform == "log-shift" else coeffs
    U = space.normalize(X)

    def fit_one(j: int) -> GpModel:
        theta = None if thetas is None else thetas[j]
        return fit(U, targets[:, j], kernel=config.kernel, theta_bounds=config.theta_bounds,
                   n_starts=config.n_starts, seed=config.seed + j, maxiter=config.maxiter,
                   theta=theta)

    if config.n_workers > 1 and basis.k > 1:
        with ThreadPoolExecutor(max_workers=min(config.n_workers, basis.k)) as pool:
            models = tuple(pool.map(fit_one, range(basis.k)))
    else:
        models = tuple(fit_one(j) for j in range(basis.k))

    logger.debug("metamodel fitted: n=%d, k=%d, thetas=%s", n, basis.k,
                 [np.round(m.theta, 4).tolist() for m in models])
    return QuantileMetamodel(grid=grid, basis=basis, coeff_models=models,
                             transform=config.transform, space=space, design=X,
                             coefficients=coeffs, warnings=notes)


def predict_curve(meta: QuantileMetamodel, x: Sequence[float]) -> QuantileCurve:
    """Predicted quantile curve at a raw input; a warning is logged if it dips."""
    means, _ = meta.coefficient_moments(np.asarray(x, dtype=float).reshape(1, -1))
    curve = QuantileCurve(meta.grid, means[0] @ meta.basis.matrix())
    if not is_monotone(curve, tol=1e-12):
        logger.warning("Predicted quantile curve at %s is not monotone", list(np.ravel(x)))
    return curve


def predict_laws(meta: QuantileMetamodel, X: np.ndarray, p: float) -> Tuple[np.ndarray, np.ndarray]:
    """Means and variances of the predicted p-quantile at every row of ``X``."""
    p = check_probability(p)
    r = _basis_at(meta.basis, p)
    means, variances = meta.coefficient_moments(X)
    return means @ r, variances @ (r * r)


def predict_law(meta: QuantileMetamodel, x: Sequence[float], p: float) -> QuantileLaw:
    """Gaussian law of the predicted p-quantile at a raw input.

    Raises
    ------
    DomainError
        If ``p`` is outside ]0,1[.
    """
    mean, var = predict_laws(meta, np.asarray(x, dtype=float).reshape(1, -1), p)
    return QuantileLaw(float(mean[0]), float(max(var[0], 0.0)), float(p))


def _truth_arrays(meta: QuantileMetamodel,
                  truth: Sequence[Tuple[Sequence[float], QuantileCurve]]) -> Tuple[np.ndarray, np.ndarray]:
    if len(truth) == 0:
        raise DomainError("truth set is empty")
    X = np.array([np.asarray(x, dtype=float).ravel() for x, _ in truth])
    grid, values = curve_matrix([c for _, c in truth])
    if grid != meta.grid:
        raise GridMismatchError("truth curves and metamodel use different grids")
    return X, values


def predicted_values(meta: QuantileMetamodel, X: np.ndarray) -> np.ndarray:
    """Predicted curve values at every row of ``X``, shape ``(n, m)``."""
    means, _ = meta.coefficient_moments(X)
    return means @ meta.basis.matrix()


def global_error(meta: QuantileMetamodel,
                 truth: Sequence[Tuple[Sequence[float], QuantileCurve]]) -> float:
    """Mean relative L2 prediction error over a truth set.

    Raises
    ------
    ZeroNormError
        If a truth curve has zero norm.
    """
    X, values = _truth_arrays(meta, truth)
    w = meta.grid.weights
    norms = np.sqrt(np.sum(w * values * values, axis=1))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormError(f"truth curve at {list(X[zero[0]])} has zero norm")
    diff = values - predicted_values(meta, X)
    return float(np.mean(np.sqrt(np.sum(w * diff * diff, axis=1)) / norms))


def objective_error(meta: QuantileMetamodel,
                    truth: Sequence[Tuple[Sequence[float], QuantileCurve]], p: float) -> float:
    """Mean absolute p-quantile error normalized by the range of true values.

    Raises
    ------
    DegenerateObjectiveError
        If every true p-quantile is the same.
    """
    p = check_probability(p)
    X, values = _truth_arrays(meta, truth)
    true_q = ObjectiveSpec(p).of_rows(meta.grid, values)
    spread = float(true_q.max() - true_q.min())
    if spread <= 0.0:
        raise DegenerateObjectiveError(f"true {p}-quantiles have zero range")
    pred_q, _ = predict_laws(meta, X, p)
    return float(np.mean(np.abs(true_q - pred_q)) / spread)


def _lexicographic_argmax(X: np.ndarray, scores: np.ndarray) -> int:
    order = np.lexsort(X.T[::-1])
    return int(order[np.argmax(scores[order])])


def direct_argmax(meta: QuantileMetamodel, candidates: np.ndarray, p: float) -> Tuple[np.ndarray, float]:
    """Candidate with the largest predicted p-quantile and that prediction.

    Ties go to the smallest input in lexicographic order.
    """
    X = np.atleast_2d(np.asarray(candidates, dtype=float))
    means, _ = predict_laws(meta, X, p)
    best = _lexicographic_argmax(X, means)
    return X[best].copy(), float(means[best])


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------

def save_metamodel(meta: QuantileMetamodel, directory: PathLike) -> None:
    """Write a bundle: basis CSVs, one model per coefficient and ``metamodel.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_basis(meta.basis, directory / "basis")
    for j, model in enumerate(meta.coeff_models, start=1):
        save_model(model, directory, f"gp_{j}")
    manifest = {
        "k": meta.k,
        "m": meta.grid.m,
        "transform": meta.transform,
        "space": meta.space.to_dict(),
        "design": meta.design.tolist(),
        "coefficients": meta.coefficients.tolist(),
        "warnings": list(meta.warnings),
    }
    with (directory / "metamodel.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_metamodel(directory: PathLike) -> QuantileMetamodel:
    """Reload a bundle written by :func:`save_metamodel`."""
    directory = Path(directory)
    with (directory / "metamodel.json").open("r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    basis = load_basis(directory / "basis")
    models = tuple(load_model(directory, f"gp_{j}") for j in range(1, manifest["k"] + 1))
    return QuantileMetamodel(grid=basis.grid, basis=basis, coeff_models=models,
                             transform=manifest["transform"],
                             space=InputSpace.from_dict(manifest["space"]),
                             design=np.asarray(manifest["design"], dtype=float),
                             coefficients=np.asarray(manifest["coefficients"], dtype=float),
                             warnings=list(manifest.get("warnings", [])))


__all__ = [
    "TRANSFORMS",
    "MetamodelConfig",
    "QuantileLaw",
    "ObjectiveSpec",
    "QuantileMetamodel",
    "fit_metamodel",
    "predict_curve",
    "predict_law",
    "predict_laws",
    "predicted_values",
    "global_error",
    "objective_error",
    "direct_argmax",
    "save_metamodel",
    "load_metamodel",
]
