"""
Repeated end-to-end runs on the toy simulator.

One repetition draws a fresh learning set that excludes the true optimum,
fits the metamodel, measures its error rates against the truth table,
records the direct-argmax estimate and runs the adaptive optimizer.
Repetitions are independent and run in a process pool.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .config import RunConfig
from .empirical import derive_seed
from .mmp import projection_error
from .qfei import initial_design, run
from .qmeta import direct_argmax, global_error, objective_error
from .simulators import TOY_SPACE, ToySimulator
from .validation import REFERENCE, TruthTable, ground_truth

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class RepetitionResult:
    """Outcome of one repetition, scored against the truth table."""

    repetition: int
    seed: int
    x_hat: List[float]
    q_hat: float
    rank_hat: int
    baseline_x: List[float]
    baseline_q: float
    direct_x: List[float]
    direct_q: float
    err1: float
    err2: float
    err3: float
    objective_error: Optional[float]
    simulator_calls: int
    regressions: int
    exact_hit: bool
    top2_hit: bool
    better_than_baseline: bool
    direct_worse: bool


@dataclass
class ToyStudySummary:
    """Aggregate counts and error distributions over repetitions."""

    p: float
    x_star: List[float]
    q_star: float
    results: List[RepetitionResult]
    ground_truth: Dict
    warnings: List[str] = field(default_factory=list)

    @property
    def repetitions(self) -> int:
        return len(self.results)

    def counts(self) -> Dict[str, int]:
        return {
            "exact_hits": sum(r.exact_hit for r in self.results),
            "top2_hits": sum(r.top2_hit for r in self.results),
            "better_than_baseline": sum(r.better_than_baseline for r in self.results),
            "direct_argmax_worse": sum(r.direct_worse for r in self.results),
        }

    def error_distribution(self, name: str) -> Dict[str, float]:
        values = np.array([getattr(r, name) for r in self.results
                           if getattr(r, name) is not None], dtype=float)
        if values.size == 0:
            return {}
        return {"mean": float(values.mean()), "median": float(np.median(values)),
                "min": float(values.min()), "max": float(values.max())}

    def to_dict(self) -> Dict:
        return {
            "p": self.p,
            "repetitions": self.repetitions,
            "x_star": self.x_star,
            "q_star": self.q_star,
            "counts": self.counts(),
            "errors": {name: self.error_distribution(name)
                       for name in ("err1", "err2", "err3", "objective_error")},
            "ground_truth": self.ground_truth,
            "reference": dict(REFERENCE),
            "warnings": list(self.warnings),
            "results": [asdict(r) for r in self.results],
        }


def repetition_seed(master_seed: int, repetition: int) -> int:
    """Seed of one repetition, independent of the others."""
    return derive_seed(master_seed, (float(repetition),), 1)


def run_repetition(config: RunConfig, repetition: int, truth: TruthTable) -> RepetitionResult:
    """Fit, score and optimize once with a fresh learning set."""
    p = float(config.p)
    seed = repetition_seed(config.seed, repetition)
    sim = ToySimulator()
    candidates = truth.inputs
    q_true = truth.quantiles(p)
    best = int(np.argmax(q_true))
    x_star = candidates[best]
    second_q = float(np.sort(q_true)[-2]) if len(q_true) > 1 else float(q_true[best])

    cfg = config.qfei_config(candidates, seed=seed)
    design, meta = initial_design(cfg, sim, config.n, truth.grid, exclude=x_star.reshape(1, -1),
                                  space=TOY_SPACE)
    err1 = projection_error(list(design.curves), meta.basis)
    pairs = truth.pairs()
    err2 = projection_error([c for _, c in pairs], meta.basis)
    err3 = global_error(meta, pairs)
    obj_err = objective_error(meta, pairs, p)
    direct_x, _ = direct_argmax(meta, candidates, p)

    report = run(cfg, sim, design, meta)
    q_hat = truth.quantile_at(report.x_hat, p)
    baseline_q = truth.quantile_at(report.initial_best, p)
    direct_q = truth.quantile_at(direct_x, p)
    logger.info("repetition %d: x_hat=%s q=%.4f baseline=%.4f direct=%.4f", repetition,
                list(report.x_hat), q_hat, baseline_q, direct_q)
    return RepetitionResult(
        repetition=repetition,
        seed=seed,
        x_hat=list(report.x_hat),
        q_hat=q_hat,
        rank_hat=truth.rank_of(report.x_hat, p),
        baseline_x=list(report.initial_best),
        baseline_q=baseline_q,
        direct_x=direct_x.tolist(),
        direct_q=direct_q,
        err1=err1,
        err2=err2,
        err3=err3,
        objective_error=obj_err,
        simulator_calls=report.simulator_calls,
        regressions=len(report.regressions),
        exact_hit=bool(np.allclose(report.x_hat, x_star)),
        top2_hit=q_hat >= second_q,
        better_than_baseline=q_hat > baseline_q,
        direct_worse=direct_q < q_hat,
    )


def _repetition_worker(args) -> RepetitionResult:
    config, repetition, truth = args
    return run_repetition(config, repetition, truth)


def run_toy_study(config: RunConfig, truth: TruthTable,
                  n_workers: Optional[int] = None) -> ToyStudySummary:
    """Run ``config.repetitions`` repetitions, in parallel if ``n_workers > 1``."""
    p = float(config.p)
    notes: List[str] = []
    levels = truth.grid.levels
    if p < levels[0] or p > levels[-1]:
        msg = (f"p={p} lies outside the probability grid [{levels[0]:.4g}, {levels[-1]:.4g}]; "
               f"quantiles are extrapolated from the end levels")
        logger.warning(msg)
        notes.append(msg)

    n_workers = config.n_workers if n_workers is None else n_workers
    jobs = [(config, r, truth) for r in range(config.repetitions)]
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_repetition_worker, jobs))
    else:
        results = [_repetition_worker(job) for job in jobs]

    gt = ground_truth(truth, p)
    return ToyStudySummary(p=p, x_star=gt["x_star"], q_star=gt["q_star"], results=results,
                           ground_truth=gt, warnings=notes)


def write_study(summary: ToyStudySummary, directory: PathLike) -> None:
    """Write ``toy_study.json`` and the per-repetition ``toy_study.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "toy_study.json").open("w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, indent=2)
        fh.write("\n")
    columns = ["repetition", "seed", "x_hat", "q_hat", "rank_hat", "baseline_q", "direct_q",
               "err1", "err2", "err3", "objective_error", "exact_hit", "top2_hit",
               "better_than_baseline", "direct_worse"]
    with (directory / "toy_study.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in summary.results:
            row = asdict(r)
            row["x_hat"] = " ".join(repr(v) for v in r.x_hat)
            writer.writerow([row[c] for c in columns])


__all__ = [
    "RepetitionResult",
    "ToyStudySummary",
    "repetition_seed",
    "run_repetition",
    "run_toy_study",
    "write_study",
]
