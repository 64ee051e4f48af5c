"""
Truth tables and error reports for metamodel validation.

A truth table holds the empirical quantile curve of every point of a
finite input set.  For the toy simulator the full set has 10^3 points and
is cheap enough to enumerate; the table is cached to a ``.npz`` file keyed
by its grid, replication count and seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .curves import ProbGrid, QuantileCurve, read_curve_table, write_curve_table
from .empirical import collect_many, curves_from_batches
from .errors import DomainError
from .gp import point_key
from .mmp import Basis, projection_error
from .qmeta import (ObjectiveSpec, QuantileMetamodel, global_error, objective_error,
                    predicted_values)
from .simulators import TOY_SPACE, Simulator, ToySimulator

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# published toy-study figures, shown next to computed values
REFERENCE = {
    "err1": 0.0009,
    "err2": 0.0013,
    "err3": 0.0142,
    "err_p0.5": 0.054,
    "q_star_p0.4": 0.884,
    "second_best_q_p0.4": 0.878,
    "mean_q_p0.4": -0.277,
    "var_q_p0.4": 0.071,
    "direct_argmax_q_p0.4": 0.739,
}


@dataclass(frozen=True, eq=False)
class TruthTable:
    """Empirical quantile curves over a finite input set.

    Attributes
    ----------
    inputs : ndarray, shape (N, d)
    grid : ProbGrid
    values : ndarray, shape (N, m)
    n_mc : int
        Replications per point; 0 when unknown.
    seed : int
    """

    inputs: np.ndarray
    grid: ProbGrid
    values: np.ndarray
    n_mc: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if inputs.shape[0] != values.shape[0]:
            raise DomainError(f"{inputs.shape[0]} inputs but {values.shape[0]} curves")
        if values.shape[1] != self.grid.m:
            raise DomainError(f"curves have {values.shape[1]} values for {self.grid.m} levels")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_index", {point_key(x): i for i, x in enumerate(inputs)})

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def curves(self) -> List[QuantileCurve]:
        return [QuantileCurve(self.grid, row) for row in self.values]

    def pairs(self) -> List[Tuple[np.ndarray, QuantileCurve]]:
        return list(zip(self.inputs, self.curves()))

    def quantiles(self, p: float) -> np.ndarray:
        """True p-quantile of every point."""
        return ObjectiveSpec(p).of_rows(self.grid, self.values)

    def index_of(self, x: Sequence[float]) -> int:
        key = point_key(x)
        if key not in self._index:
            raise DomainError(f"input {list(key)} is not in the truth table")
        return self._index[key]

    def quantile_at(self, x: Sequence[float], p: float) -> float:
        return ObjectiveSpec(p)(QuantileCurve(self.grid, self.values[self.index_of(x)]))

    def rank_of(self, x: Sequence[float], p: float) -> int:
        """1-based rank of ``x`` by decreasing true p-quantile."""
        q = self.quantiles(p)
        return int(np.sum(q > q[self.index_of(x)])) + 1

    def subset(self, xs: np.ndarray) -> "TruthTable":
        rows = [self.index_of(x) for x in np.atleast_2d(xs)]
        return TruthTable(self.inputs[rows], self.grid, self.values[rows], self.n_mc, self.seed)

    def save(self, path: PathLike) -> None:
        """Cache the table as ``.npz``."""
        np.savez_compressed(Path(path), inputs=self.inputs, levels=self.grid.levels,
                            values=self.values, n_mc=self.n_mc, seed=self.seed)

    @classmethod
    def load(cls, path: PathLike) -> "TruthTable":
        with np.load(Path(path)) as data:
            return cls(data["inputs"], ProbGrid(data["levels"]), data["values"],
                       int(data["n_mc"]), int(data["seed"]))

    @classmethod
    def from_csv(cls, path: PathLike) -> "TruthTable":
        """Read a long-format curve table ``x1..xd,p,value``."""
        xs, curves = read_curve_table(path)
        return cls(xs, curves[0].grid, np.vstack([c.values for c in curves]))

    def to_csv(self, path: PathLike) -> None:
        write_curve_table(path, self.inputs, self.curves())


def build_truth_table(sim: Simulator, inputs: np.ndarray, grid: ProbGrid, n_mc: int, seed: int,
                      n_workers: int = 1) -> TruthTable:
    """Simulate every input and keep its empirical curve."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    logger.info("Building truth table: %d inputs x %d draws", len(inputs), n_mc)
    curves = curves_from_batches(collect_many(sim, inputs, n_mc, seed, n_workers), grid)
    return TruthTable(inputs, grid, np.vstack([c.values for c in curves]), n_mc, seed)


def toy_truth_table(grid: ProbGrid, n_mc: int = 10_000, seed: int = 0,
                    cache: Optional[PathLike] = None, n_workers: int = 1) -> TruthTable:
    """Truth table of the toy simulator over its full 10^3-point grid.

    When ``cache`` names an existing file built with the same grid,
    replication count and seed it is reused; otherwise the table is
    computed and written there.
    """
    if cache is not None and Path(cache).is_file():
        table = TruthTable.load(cache)
        if table.grid == grid and table.n_mc == n_mc and table.seed == seed:
            logger.info("Loaded cached truth table %s", cache)
            return table
        logger.info("Cached truth table %s does not match the request, rebuilding", cache)
    table = build_truth_table(ToySimulator(), TOY_SPACE.enumerate(), grid, n_mc, seed, n_workers)
    if cache is not None:
        Path(cache).parent.mkdir(parents=True, exist_ok=True)
        table.save(cache)
    return table


def ground_truth(table: TruthTable, p: float, top: int = 5) -> Dict:
    """Optimum, spread and top ranking of the true p-quantile over the table."""
    q = table.quantiles(p)
    order = np.lexsort((np.arange(len(q)), -q))
    return {
        "p": float(p),
        "x_star": table.inputs[order[0]].tolist(),
        "q_star": float(q[order[0]]),
        "mean": float(np.mean(q)),
        "variance": float(np.var(q)),
        "top": [{"x": table.inputs[i].tolist(), "q": float(q[i])} for i in order[:top]],
    }


@dataclass
class ValidationReport:
    """Error rates of a metamodel against a truth table."""

    err1: Optional[float]
    err2: float
    err3: float
    objective_error: Optional[float]
    p: Optional[float]
    worst: List[Dict] = field(default_factory=list)
    reference: Dict[str, float] = field(default_factory=lambda: dict(REFERENCE))

    def to_dict(self) -> Dict:
        return {
            "err1": self.err1,
            "err2": self.err2,
            "err3": self.err3,
            "objective_error": self.objective_error,
            "p": self.p,
            "worst": list(self.worst),
            "reference": dict(self.reference),
        }


def worst_points(meta: QuantileMetamodel, table: TruthTable, count: int = 10) -> List[Dict]:
    """Points with the largest relative L2 prediction error."""
    w = table.grid.weights
    diff = table.values - predicted_values(meta, table.inputs)
    norms = np.sqrt(np.sum(w * table.values ** 2, axis=1))
    rel = np.sqrt(np.sum(w * diff * diff, axis=1)) / np.where(norms > 0, norms, np.inf)
    order = np.argsort(-rel, kind="stable")[:count]
    return [{"x": table.inputs[i].tolist(), "relative_error": float(rel[i])} for i in order]


def validation_report(meta: QuantileMetamodel, table: TruthTable, p: Optional[float] = None,
                      learning_curves: Optional[Sequence[QuantileCurve]] = None,
                      basis: Optional[Basis] = None, worst: int = 10) -> ValidationReport:
    """Projection error on the learning set and on the table, prediction
    error on the table and, if ``p`` is given, the objective error."""
    basis = basis or meta.basis
    curves = table.curves()
    err1 = projection_error(learning_curves, basis) if learning_curves else None
    err2 = projection_error(curves, basis)
    pairs = list(zip(table.inputs, curves))
    err3 = global_error(meta, pairs)
    obj = objective_error(meta, pairs, p) if p is not None else None
    return ValidationReport(err1=err1, err2=err2, err3=err3, objective_error=obj, p=p,
                            worst=worst_points(meta, table, worst))


__all__ = [
    "REFERENCE",
    "TruthTable",
    "build_truth_table",
    "toy_truth_table",
    "ground_truth",
    "ValidationReport",
    "worst_points",
    "validation_report",
]
