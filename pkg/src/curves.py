"""
Probability grids, discretized quantile curves and their L2 geometry.

A quantile curve is stored as its values on a fixed, strictly increasing
grid of probability levels inside ]0,1[.  The default grid is the uniform
midpoint grid ``p_i = (i - 0.5) / m`` which avoids the endpoints where the
quantile function of an unbounded output diverges.

Integrals over ]0,1[ use a rectangle rule whose weights are the widths of
the cells around each level (cell boundaries halfway between consecutive
levels, clipped to [0, 1]).  On the uniform midpoint grid every weight
equals ``1/m``.

Classes
-------
ProbGrid
    Ordered probability levels and their quadrature weights.
QuantileCurve
    Values of a quantile function on a ``ProbGrid``.

Functions
---------
l2_distance, l2_norm, inner_product
    Grid quadrature of the L2(0,1) geometry.
is_monotone
    Check that a curve is nondecreasing up to a tolerance.
eval_at
    Evaluate a curve at an arbitrary level by linear interpolation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, GridMismatchError

logger = logging.getLogger(__name__)

DEFAULT_M = 101

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class ProbGrid:
    """Strictly increasing probability levels inside ]0,1[.

    Parameters
    ----------
    levels : sequence of float
        At least two probabilities, strictly increasing, each in ]0,1[.

    Raises
    ------
    DomainError
        If a level is outside ]0,1[, the levels are not strictly increasing
        or fewer than two levels are given.
    """

    levels: np.ndarray

    def __post_init__(self) -> None:
        levels = np.array(self.levels, dtype=float).ravel()
        if levels.size < 2:
            raise DomainError(f"a probability grid needs at least 2 levels, got {levels.size}")
        if not np.all(np.isfinite(levels)) or levels[0] <= 0.0 or levels[-1] >= 1.0:
            raise DomainError("probability levels must lie in the open interval (0, 1)")
        if np.any(np.diff(levels) <= 0.0):
            raise DomainError("probability levels must be strictly increasing")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

        edges = np.concatenate(([0.0], 0.5 * (levels[1:] + levels[:-1]), [1.0]))
        weights = np.diff(edges)
        weights.setflags(write=False)
        object.__setattr__(self, "_weights", weights)

    @classmethod
    def uniform(cls, m: int = DEFAULT_M) -> "ProbGrid":
        """Build the uniform midpoint grid ``(i - 0.5) / m``, ``i = 1..m``."""
        if not isinstance(m, (int, np.integer)) or m < 2:
            raise DomainError(f"m must be an integer >= 2, got {m!r}")
        return cls((np.arange(1, m + 1) - 0.5) / m)

    @property
    def m(self) -> int:
        """Number of levels."""
        return int(self.levels.size)

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights, one per level, summing to one."""
        return self._weights

    def __len__(self) -> int:
        return self.m

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, ProbGrid):
            return NotImplemented
        return bool(np.array_equal(self.levels, other.levels))

    def __hash__(self) -> int:
        return hash(self.levels.tobytes())


@dataclass(frozen=True, eq=False)
class QuantileCurve:
    """A quantile function discretized on a probability grid.

    Monotonicity is a property checked with :func:`is_monotone`, not a
    construction requirement: reconstructed and predicted curves may dip.

    Parameters
    ----------
    grid : ProbGrid
        Levels at which the curve is known.
    values : sequence of float
        One finite value per level, in output units.
    """

    grid: ProbGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.grid, ProbGrid):
            raise TypeError(f"grid must be ProbGrid, got {type(self.grid).__name__}")
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.grid.m:
            raise GridMismatchError(
                f"curve has {values.size} values but its grid has {self.grid.m} levels")
        if not np.all(np.isfinite(values)):
            raise DomainError("quantile curve values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)

    def scaled(self, factor: float) -> "QuantileCurve":
        """Return the curve multiplied by ``factor``."""
        return QuantileCurve(self.grid, self.values * float(factor))


def _check_same_grid(f: QuantileCurve, g: QuantileCurve) -> None:
    if f.grid != g.grid:
        raise GridMismatchError("curves are defined on different probability grids")


def inner_product(f: QuantileCurve, g: QuantileCurve) -> float:
    """Grid quadrature of the L2(0,1) inner product of two curves."""
    _check_same_grid(f, g)
    return float(np.sum(f.grid.weights * f.values * g.values))


def l2_norm(f: QuantileCurve) -> float:
    """Grid quadrature of the L2(0,1) norm of a curve."""
    return float(np.sqrt(np.sum(f.grid.weights * f.values ** 2)))


def l2_distance(f: QuantileCurve, g: QuantileCurve) -> float:
    """Grid quadrature of ``||f - g||`` in L2(0,1).

    Raises
    ------
    GridMismatchError
        If the two curves do not share a grid.
    """
    _check_same_grid(f, g)
    diff = f.values - g.values
    return float(np.sqrt(np.sum(f.grid.weights * diff * diff)))


def is_monotone(f: QuantileCurve, tol: float = 0.0) -> bool:
    """Return True iff ``values[i+1] >= values[i] - tol`` for every i."""
    if tol < 0:
        raise DomainError(f"tol must be non-negative, got {tol}")
    return bool(np.all(np.diff(f.values) >= -tol))


def eval_at(f: QuantileCurve, p: float) -> float:
    """Evaluate a curve at level ``p``.

    Exact grid levels return the stored value, levels in between are
    interpolated linearly and levels beyond the grid are clamped to the
    end values.

    Raises
    ------
    DomainError
        If ``p`` is not in ]0,1[.
    """
    check_probability(p)
    return float(np.interp(p, f.grid.levels, f.values))


def check_probability(p: float) -> float:
    """Validate a probability level in ]0,1[ and return it as float."""
    try:
        value = float(p)
    except (TypeError, ValueError):
        raise DomainError(f"probability must be a real number, got {p!r}")
    if not (0.0 < value < 1.0):
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    return value


def support(f: QuantileCurve) -> Tuple[float, float]:
    """Observed support ``(min, max)`` of a curve, a diagnostic only."""
    return float(f.values.min()), float(f.values.max())


def curve_matrix(curves: Sequence[QuantileCurve]) -> Tuple[ProbGrid, np.ndarray]:
    """Stack curves sharing a grid into an ``(n, m)`` array."""
    if len(curves) == 0:
        raise DomainError("at least one curve is required")
    grid = curves[0].grid
    for c in curves[1:]:
        if c.grid != grid:
            raise GridMismatchError("curves are defined on different probability grids")
    return grid, np.vstack([c.values for c in curves])


# ----------------------------------------------------------------------
# CSV persistence
# ----------------------------------------------------------------------

def write_curve_csv(path: PathLike, curve: QuantileCurve) -> None:
    """Write a curve as ``p,value`` rows with full float precision."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["p", "value"])
        for p, v in zip(curve.grid.levels, curve.values):
            writer.writerow([repr(float(p)), repr(float(v))])


def read_curve_csv(path: PathLike) -> QuantileCurve:
    """Read a curve written by :func:`write_curve_csv`."""
    levels: List[float] = []
    values: List[float] = []
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            levels.append(float(row["p"]))
            values.append(float(row["value"]))
    return QuantileCurve(ProbGrid(levels), values)


def write_curve_table(path: PathLike, xs: np.ndarray, curves: Sequence[QuantileCurve]) -> None:
    """Write curves keyed by inputs in long format ``x1..xd,p,value``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[0] != len(curves):
        raise ValueError(f"{xs.shape[0]} inputs but {len(curves)} curves")
    d = xs.shape[1]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(d)] + ["p", "value"])
        for x, curve in zip(xs, curves):
            coords = [repr(float(v)) for v in x]
            for p, v in zip(curve.grid.levels, curve.values):
                writer.writerow(coords + [repr(float(p)), repr(float(v))])


def read_curve_table(path: PathLike) -> Tuple[np.ndarray, List[QuantileCurve]]:
    """Read a long-format curve table, preserving the row order of inputs."""
    rows: Dict[Tuple[float, ...], Tuple[List[float], List[float]]] = {}
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 2
        for row in reader:
            if not row:
                continue
            key = tuple(float(v) for v in row[:d])
            levels, values = rows.setdefault(key, ([], []))
            levels.append(float(row[d]))
            values.append(float(row[d + 1]))
    if not rows:
        raise DomainError(f"curve table {path} is empty")
    xs = np.array(list(rows.keys()), dtype=float)
    grid = ProbGrid(next(iter(rows.values()))[0])
    curves = []
    for levels, values in rows.values():
        if not np.array_equal(np.asarray(levels), grid.levels):
            raise GridMismatchError(f"curve table {path} mixes probability grids")
        curves.append(QuantileCurve(grid, values))
    return xs, curves


__all__ = [
    "DEFAULT_M",
    "ProbGrid",
    "QuantileCurve",
    "inner_product",
    "l2_norm",
    "l2_distance",
    "is_monotone",
    "eval_at",
    "check_probability",
    "support",
    "curve_matrix",
    "write_curve_csv",
    "read_curve_csv",
    "write_curve_table",
    "read_curve_table",
]
