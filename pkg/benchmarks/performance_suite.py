"""
Performance benchmarking suite for the quantile metamodel toolkit.

Times the operations that dominate a study: toy sampling, kriging fits,
full metamodel fits and expected-improvement scoring over a candidate set.
"""

import csv
import time
from dataclasses import asdict, dataclass
from pathlib import Path
import sys
from typing import Dict, List, Optional

import numpy as np

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.curves import ProbGrid
from src.empirical import collect_many, curves_from_batches
from src.gp import fit
from src.qfei import expected_improvements
from src.qmeta import MetamodelConfig, fit_metamodel, predict_laws
from src.simulators import TOY_SPACE, ToySimulator, make_stream


@dataclass
class BenchmarkResult:
    """Container for benchmark results."""
    operation: str
    input_size: int
    execution_time: float
    iterations_per_second: float


class MetamodelBenchmarkSuite:
    """Benchmarking suite for sampling, fitting and acquisition."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.results: List[BenchmarkResult] = []

    def _record(self, operation: str, size: int, elapsed: float) -> BenchmarkResult:
        result = BenchmarkResult(
            operation=operation,
            input_size=size,
            execution_time=elapsed,
            iterations_per_second=size / elapsed if elapsed > 0 else float('inf'),
        )
        self.results.append(result)
        print(f"{operation} [{size}]: {elapsed:.4f}s")
        return result

    def benchmark_toy_sampling(self, sizes=(1_000, 10_000, 100_000)) -> List[BenchmarkResult]:
        """Benchmark toy draws per batch size.

        Parameters
        ----------
        sizes : sequence of int
            Batch sizes to time.

        Raises
        ------
        ValueError
            If a size is not positive.
        """
        if any(s <= 0 for s in sizes):
            raise ValueError(f"sizes must be positive, got {list(sizes)}")
        sim = ToySimulator()
        results = []
        for n in sizes:
            start = time.perf_counter()
            sim.draw_batch((0.5, 0.5, 0.5), int(n), self.seed)
            results.append(self._record("toy_sampling", int(n), time.perf_counter() - start))
        return results

    def benchmark_gp_fit(self, sizes=(25, 50, 100, 150)) -> List[BenchmarkResult]:
        """Benchmark a kriging fit on a smooth 3-D response."""
        rng = make_stream(self.seed)
        results = []
        for n in sizes:
            X = TOY_SPACE.normalize(TOY_SPACE.sample(int(n), rng))
            y = np.sin(3 * X[:, 0]) + np.cos(2 * X[:, 1]) + X[:, 2] ** 2
            start = time.perf_counter()
            fit(X, y, seed=self.seed)
            results.append(self._record("gp_fit", int(n), time.perf_counter() - start))
        return results

    def benchmark_metamodel(self, n: int = 100, n_mc: int = 2_000, k: int = 4,
                            candidates: int = 1000) -> List[BenchmarkResult]:
        """Benchmark a full metamodel fit and EI scoring over candidates."""
        grid = ProbGrid.uniform(101)
        rng = make_stream(self.seed)
        X = TOY_SPACE.sample(n, rng)
        curves = curves_from_batches(collect_many(ToySimulator(), X, n_mc, self.seed), grid)

        start = time.perf_counter()
        meta = fit_metamodel(X, curves, config=MetamodelConfig(k=k, seed=self.seed))
        results = [self._record("metamodel_fit", n, time.perf_counter() - start)]

        pool = TOY_SPACE.enumerate()[:candidates]
        start = time.perf_counter()
        means, variances = predict_laws(meta, pool, 0.4)
        expected_improvements(means, np.maximum(variances, 0.0), float(np.max(means)))
        results.append(self._record("ei_scoring", len(pool), time.perf_counter() - start))
        return results

    def run_comprehensive_benchmark(self, quick: bool = False) -> Dict:
        """Run all benchmarks and return summary statistics."""
        print("Quantile Metamodel Performance Benchmark Suite")
        print("=" * 50)

        print("\n1. Toy Sampling:")
        self.benchmark_toy_sampling((1_000, 10_000) if quick else (1_000, 10_000, 100_000))

        print("\n2. Kriging Fit:")
        self.benchmark_gp_fit((25, 50) if quick else (25, 50, 100, 150))

        print("\n3. Metamodel Fit and EI Scoring:")
        if quick:
            self.benchmark_metamodel(n=40, n_mc=500, candidates=200)
        else:
            self.benchmark_metamodel()

        return {
            'total_benchmarks': len(self.results),
            'fastest_operation': min(self.results, key=lambda r: r.execution_time),
            'slowest_operation': max(self.results, key=lambda r: r.execution_time),
            'avg_execution_time': float(np.mean([r.execution_time for r in self.results])),
            'total_benchmark_time': sum(r.execution_time for r in self.results),
        }

    def write_csv(self, path: Path) -> None:
        """Write results as CSV for external plotting."""
        with Path(path).open('w', newline='', encoding='utf-8') as fh:
            writer = csv.DictWriter(fh, fieldnames=list(BenchmarkResult.__dataclass_fields__),
                                    lineterminator='\n')
            writer.writeheader()
            for result in self.results:
                writer.writerow(asdict(result))


def run_benchmarks(quick: bool = False, output: Optional[Path] = None) -> Dict:
    """Main function to run all benchmarks."""
    suite = MetamodelBenchmarkSuite()
    summary = suite.run_comprehensive_benchmark(quick=quick)
    if output is not None:
        suite.write_csv(output)

    print(f"\n{'='*50}")
    print("BENCHMARK SUMMARY")
    print(f"{'='*50}")
    print(f"Total benchmarks run: {summary['total_benchmarks']}")
    print(f"Average execution time: {summary['avg_execution_time']:.6f}s")
    print(f"Fastest operation: {summary['fastest_operation'].operation} "
          f"({summary['fastest_operation'].execution_time:.6f}s)")
    print(f"Slowest operation: {summary['slowest_operation'].operation} "
          f"({summary['slowest_operation'].execution_time:.6f}s)")
    print(f"Total benchmark time: {summary['total_benchmark_time']:.3f}s")

    return summary


if __name__ == "__main__":
    run_benchmarks()
