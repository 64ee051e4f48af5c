"""
Greedy selection of a quantile-curve basis and least-squares projection.

The first basis function is the learning curve most correlated with the
others.  Each following one is the learning curve worst reproduced by the
current basis, i.e. the one with the largest L2 residual after projection.
Every curve is then represented by its projection coefficients ``psi``.

Positivity of the coefficients would guarantee monotone reconstructions
but is only checked and reported, never enforced.

Classes
-------
Basis
    Ordered, linearly independent quantile curves sharing a grid.
CoeffVector
    Projection coefficients of one curve.

Functions
---------
select_basis, project, reconstruct, projection_error, select_k
coefficient_table, save_basis, load_basis
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .curves import (ProbGrid, QuantileCurve, curve_matrix, is_monotone,
                     read_curve_csv, write_curve_csv)
from .errors import DomainError, GridMismatchError, RankError, ZeroNormError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# squared residual norms below this fraction of the largest squared norm count as zero
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Basis:
    """Ordered quantile basis functions ``R_1..R_k``.

    Parameters
    ----------
    functions : sequence of QuantileCurve
        Basis functions on a common grid.
    source_ids : sequence of int
        Index of the learning curve each function was taken from; ``-1``
        when unknown.

    Raises
    ------
    GridMismatchError
        If the functions do not share a grid.
    RankError
        If the Gram matrix is numerically singular.
    """

    functions: Tuple[QuantileCurve, ...]
    source_ids: Tuple[int, ...] = ()
    _gram_factor: Tuple = field(init=False, repr=False)

    def __post_init__(self) -> None:
        functions = tuple(self.functions)
        if not functions:
            raise DomainError("a basis needs at least one function")
        grid, values = curve_matrix(functions)
        ids = tuple(int(i) for i in self.source_ids) or tuple([-1] * len(functions))
        if len(ids) != len(functions):
            raise ValueError(f"{len(ids)} source ids for {len(functions)} basis functions")
        object.__setattr__(self, "functions", functions)
        object.__setattr__(self, "source_ids", ids)
        object.__setattr__(self, "_gram_factor", _factor_gram(grid, values))

    @property
    def k(self) -> int:
        return len(self.functions)

    @property
    def grid(self) -> ProbGrid:
        return self.functions[0].grid

    def matrix(self) -> np.ndarray:
        """Basis values as a ``(k, m)`` array."""
        return np.vstack([f.values for f in self.functions])

    def gram(self) -> np.ndarray:
        """Weighted Gram matrix ``<R_i, R_j>``."""
        R = self.matrix()
        return (R * self.grid.weights) @ R.T

    def __len__(self) -> int:
        return self.k


@dataclass(frozen=True)
class CoeffVector:
    """Projection coefficients ``psi`` of a curve on a basis."""

    psi: Tuple[float, ...]

    def __post_init__(self) -> None:
        psi = tuple(float(v) for v in np.asarray(self.psi, dtype=float).ravel())
        if not all(np.isfinite(psi)):
            raise DomainError(f"coefficients must be finite, got {list(psi)}")
        object.__setattr__(self, "psi", psi)

    @property
    def is_feasible(self) -> bool:
        """True iff every coefficient is non-negative."""
        return all(v >= 0.0 for v in self.psi)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.psi, dtype=float)

    def __len__(self) -> int:
        return len(self.psi)


def _factor_gram(grid: ProbGrid, values: np.ndarray):
    gram = (values * grid.weights) @ values.T
    scale = float(np.max(np.diag(gram)))
    if scale <= 0.0:
        raise RankError("basis functions have zero norm", achievable_k=0)
    try:
        factor = cho_factor(gram, lower=True)
    except LinAlgError:
        raise RankError("basis Gram matrix is singular")
    diag = np.diag(factor[0]) ** 2
    if diag.min() <= RANK_TOL * scale:
        raise RankError("basis Gram matrix is numerically singular",
                        achievable_k=int(np.sum(diag > RANK_TOL * scale)))
    return factor


def _project_values(basis: Basis, values: np.ndarray) -> np.ndarray:
    """Coefficients of the rows of ``values`` (n, m) on ``basis``, shape (n, k)."""
    R = basis.matrix()
    rhs = (R * basis.grid.weights) @ np.atleast_2d(values).T
    return cho_solve(basis._gram_factor, rhs).T


def _weighted_norms(grid: ProbGrid, values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(grid.weights * values * values, axis=1))


def _mean_correlation(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    if n == 1:
        return np.zeros(1)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(values)
    corr = np.nan_to_num(np.atleast_2d(corr), nan=0.0)
    np.fill_diagonal(corr, 0.0)
    return corr.sum(axis=1) / (n - 1)


def select_basis(curves: Sequence[QuantileCurve], k: int) -> Basis:
    """Greedily select ``k`` basis functions among the learning curves.

    Parameters
    ----------
    curves : sequence of QuantileCurve
        Learning curves on a common grid.
    k : int
        Basis size.

    Returns
    -------
    Basis
        Ordered basis; ``source_ids`` index into ``curves``.

    Raises
    ------
    RankError
        If fewer than ``k`` linearly independent curves are available.
    GridMismatchError
        If the curves do not share a grid.
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise DomainError(f"k must be a positive integer, got {k!r}")
    grid, values = curve_matrix(curves)
    n = values.shape[0]
    if k > n:
        raise RankError(f"cannot select {k} basis functions from {n} curves", achievable_k=n)

    norms = _weighted_norms(grid, values)
    scale = float(norms.max())
    if scale <= 0.0:
        raise RankError("every learning curve has zero norm", achievable_k=0)

    # argmax returns the smallest index among ties
    chosen = [int(np.argmax(_mean_correlation(values)))]
    if norms[chosen[0]] <= np.sqrt(RANK_TOL) * scale:
        chosen = [int(np.argmax(norms))]

    for j in range(1, k):
        basis = Basis(tuple(curves[i] for i in chosen), tuple(chosen))
        fitted = _project_values(basis, values) @ basis.matrix()
        residual = _weighted_norms(grid, values - fitted)
        residual[chosen] = -1.0
        best = int(np.argmax(residual))
        logger.debug("basis step %d: max residual %.6g at curve %d", j + 1, residual[best], best)
        if residual[best] <= np.sqrt(RANK_TOL) * scale:
            raise RankError(f"only {j} linearly independent curves among {n}", achievable_k=j)
        chosen.append(best)

    return Basis(tuple(curves[i] for i in chosen), tuple(chosen))


def project(curve: QuantileCurve, basis: Basis) -> CoeffVector:
    """L2 projection coefficients of ``curve`` on ``basis``.

    A warning is emitted when a coefficient is negative or the
    reconstruction is not monotone.
    """
    if curve.grid != basis.grid:
        raise GridMismatchError("curve and basis are defined on different probability grids")
    coeffs = CoeffVector(_project_values(basis, curve.values)[0])
    if not coeffs.is_feasible:
        logger.warning("Negative projection coefficients %s", [round(v, 6) for v in coeffs.psi])
    if not is_monotone(reconstruct(coeffs, basis), tol=1e-12):
        logger.warning("Reconstructed curve is not monotone")
    return coeffs


def reconstruct(coeffs: Union[CoeffVector, Sequence[float]], basis: Basis) -> QuantileCurve:
    """Curve ``sum_j psi_j R_j``."""
    psi = coeffs.as_array() if isinstance(coeffs, CoeffVector) else np.asarray(coeffs, dtype=float)
    if psi.size != basis.k:
        raise DomainError(f"expected {basis.k} coefficients, got {psi.size}")
    return QuantileCurve(basis.grid, psi @ basis.matrix())


def coefficient_table(curves: Sequence[QuantileCurve], basis: Basis) -> np.ndarray:
    """Projection coefficients of every curve as an ``(n, k)`` array.

    Unlike :func:`project` no per-curve warnings are logged.
    """
    grid, values = curve_matrix(curves)
    if grid != basis.grid:
        raise GridMismatchError("curves and basis are defined on different probability grids")
    return _project_values(basis, values)


def projection_error(curves: Sequence[QuantileCurve], basis: Basis) -> float:
    """Mean relative L2 reconstruction error, as a fraction.

    Raises
    ------
    ZeroNormError
        If a curve has zero norm.
    """
    grid, values = curve_matrix(curves)
    if grid != basis.grid:
        raise GridMismatchError("curves and basis are defined on different probability grids")
    norms = _weighted_norms(grid, values)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormError(f"curve {int(zero[0])} has zero norm")
    fitted = _project_values(basis, values) @ basis.matrix()
    return float(np.mean(_weighted_norms(grid, values - fitted) / norms))


def select_k(curves: Sequence[QuantileCurve], tol: float, k_max: Optional[int] = None) -> Basis:
    """Smallest basis whose projection error on ``curves`` is below ``tol``.

    If no ``k <= k_max`` reaches ``tol`` the largest attainable basis is
    returned with a warning.
    """
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")
    k_max = len(curves) if k_max is None else int(k_max)
    basis: Optional[Basis] = None
    for k in range(1, k_max + 1):
        try:
            basis = select_basis(curves, k)
        except RankError:
            break
        err = projection_error(curves, basis)
        logger.debug("k=%d projection error %.3e", k, err)
        if err < tol:
            return basis
    if basis is None:
        raise RankError("no basis could be built", achievable_k=0)
    logger.warning("Projection error tolerance %.3g not reached, using k=%d", tol, basis.k)
    return basis


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------

def save_basis(basis: Basis, directory: PathLike) -> None:
    """Write ``basis_<j>.csv`` per function and a ``basis.json`` manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files: List[str] = []
    for j, f in enumerate(basis.functions, start=1):
        name = f"basis_{j}.csv"
        write_curve_csv(directory / name, f)
        files.append(name)
    manifest = {"k": basis.k, "m": basis.grid.m, "source_ids": list(basis.source_ids),
                "files": files}
    with (directory / "basis.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_basis(directory: PathLike) -> Basis:
    """Reload a basis written by :func:`save_basis`."""
    directory = Path(directory)
    with (directory / "basis.json").open("r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    functions = [read_curve_csv(directory / name) for name in manifest["files"]]
    grid = functions[0].grid
    # share one grid object between functions read from separate files
    functions = [QuantileCurve(grid, f.values) for f in functions]
    if len(functions) != manifest["k"]:
        raise DomainError(f"basis manifest lists k={manifest['k']} but {len(functions)} files")
    return Basis(tuple(functions), tuple(manifest["source_ids"]))


__all__ = [
    "RANK_TOL",
    "Basis",
    "CoeffVector",
    "select_basis",
    "project",
    "reconstruct",
    "coefficient_table",
    "projection_error",
    "select_k",
    "save_basis",
    "load_basis",
]
