"""
Empirical quantile curves from simulator replications.

``collect`` runs a simulator ``n_mc`` times at one input and
``empirical_quantile_curve`` turns the draws into a quantile curve.  The
Monte Carlo error of the estimate is neglected afterwards: the empirical
curve is treated as the exact quantile function of the input.

Random streams are derived from ``(master seed, input, call counter)`` by
hashing, so a batch only depends on which input it belongs to and never on
the order in which inputs are evaluated.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Sequence, Tuple, Union

import numpy as np

from .curves import ProbGrid, QuantileCurve
from .errors import DomainError, EmptySampleError, SimulatorError
from .gp import point_key

if TYPE_CHECKING:
    from .simulators import Simulator

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Draws of the simulator output at one input.

    Parameters
    ----------
    input : tuple of float
        The input point ``x``.
    draws : ndarray
        The ``N_MC`` replications of ``G(x, omega)``.
    """

    input: Tuple[float, ...]
    draws: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "input", tuple(float(v) for v in np.asarray(self.input).ravel()))
        draws = np.array(self.draws, dtype=float).ravel()
        if not np.all(np.isfinite(draws)):
            raise DomainError(f"non-finite draws at input {list(self.input)}")
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)

    @property
    def n_mc(self) -> int:
        return int(self.draws.size)


def empirical_quantile_curve(batch: SampleBatch, grid: ProbGrid) -> QuantileCurve:
    """Order-statistic quantile curve of a batch.

    The value at level ``p`` is the order statistic of rank ``ceil(p N)``
    (1-based) of the sorted draws.

    Raises
    ------
    EmptySampleError
        If the batch holds no draws.
    """
    n = batch.n_mc
    if n == 0:
        raise EmptySampleError(f"no draws at input {list(batch.input)}")
    if n < grid.m:
        logger.warning("Only %d draws for a grid of %d levels at input %s",
                       n, grid.m, list(batch.input))
    ordered = np.sort(batch.draws)
    # 1e-9 absorbs rounding of p*N onto an integer
    ranks = np.clip(np.ceil(grid.levels * n - 1e-9).astype(int), 1, n)
    return QuantileCurve(grid, ordered[ranks - 1])


def derive_seed(master_seed: int, x: Sequence[float], counter: int = 0) -> int:
    """64-bit stream seed for the ``counter``-th batch at input ``x``."""
    text = f"{int(master_seed)}|{point_key(x)}|{int(counter)}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def collect(sim: "Simulator", x: Sequence[float], n_mc: int, seed: int,
            counter: int = 0) -> SampleBatch:
    """Run ``sim`` ``n_mc`` times at ``x`` on a stream derived from ``seed``.

    Raises
    ------
    DomainError
        If ``n_mc < 1``.
    SimulatorError
        If the simulator fails; the offending input is attached.
    """
    if not isinstance(n_mc, (int, np.integer)) or n_mc < 1:
        raise DomainError(f"n_mc must be a positive integer, got {n_mc!r}")
    x = tuple(float(v) for v in np.asarray(x).ravel())
    stream_seed = derive_seed(seed, x, counter)
    try:
        draws = np.asarray(sim.draw_batch(x, int(n_mc), stream_seed), dtype=float).ravel()
    except SimulatorError as exc:
        if exc.x is None:
            raise type(exc)(exc.message, x=x, diagnostics=exc.diagnostics) from exc
        raise
    except (ValueError, ArithmeticError, OSError) as exc:
        raise SimulatorError(f"simulator failed: {exc}", x=x) from exc
    if draws.size != n_mc:
        raise SimulatorError(f"simulator returned {draws.size} draws, expected {n_mc}", x=x)
    return SampleBatch(x, draws)


def collect_many(sim: "Simulator", xs: np.ndarray, n_mc: int, seed: int,
                 n_workers: int = 1) -> List[SampleBatch]:
    """Collect one batch per row of ``xs``, optionally on a thread pool.

    The result order follows ``xs`` whatever the completion order.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if n_workers <= 1 or len(xs) <= 1:
        return [collect(sim, x, n_mc, seed) for x in xs]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(lambda x: collect(sim, x, n_mc, seed), xs))


def curves_from_batches(batches: Sequence[SampleBatch], grid: ProbGrid) -> List[QuantileCurve]:
    """Empirical quantile curve of every batch."""
    return [empirical_quantile_curve(b, grid) for b in batches]


# ----------------------------------------------------------------------
# CSV persistence (long format x1..xd,draw)
# ----------------------------------------------------------------------

def write_batches_csv(path: PathLike, batches: Sequence[SampleBatch]) -> None:
    """Write batches in long format, one row per draw."""
    if not batches:
        raise EmptySampleError("no batches to write")
    d = len(batches[0].input)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(d)] + ["draw"])
        for batch in batches:
            coords = [repr(float(v)) for v in batch.input]
            for value in batch.draws:
                writer.writerow(coords + [repr(float(value))])


def read_batches_csv(path: PathLike) -> List[SampleBatch]:
    """Read batches written by :func:`write_batches_csv` in first-seen order."""
    table: Dict[Tuple[float, ...], List[float]] = {}
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-1] != "draw":
            raise DomainError(f"{path} is not a batch table (expected header x1..xd,draw)")
        d = len(header) - 1
        for row in reader:
            if not row:
                continue
            key = tuple(float(v) for v in row[:d])
            table.setdefault(key, []).append(float(row[d]))
    return [SampleBatch(key, draws) for key, draws in table.items()]


__all__ = [
    "SampleBatch",
    "empirical_quantile_curve",
    "derive_seed",
    "collect",
    "collect_many",
    "curves_from_batches",
    "write_batches_csv",
    "read_batches_csv",
]
