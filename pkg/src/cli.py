"""
Command-line interface for the quantile metamodel toolkit.

Commands fit a metamodel, validate it against a truth table, run the
adaptive quantile optimizer and reproduce the toy study end to end.
Data outputs are deterministic given the configuration and seed; wall
times and timestamps go to a separate ``metadata.json``.
"""

import argparse
import csv
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .config import RunConfig, build_simulator, load_config
from .curves import read_curve_table, write_curve_table
from .errors import ConfigError, QfeiError, exit_code_for
from .mmp import projection_error
from .qfei import Design, initial_design, run, write_trajectory_csv
from .qmeta import load_metamodel, save_metamodel
from .simulators import Simulator, make_stream
from .toy_study import run_toy_study, write_study
from .validation import TruthTable, ground_truth, toy_truth_table, validation_report

logger = logging.getLogger(__name__)

LEARNING_CURVES = "learning_curves.csv"


# ----------------------------------------------------------------------
# Helpers
# ----------------------------------------------------------------------

def _configure_logging(args) -> None:
    level = logging.INFO
    if getattr(args, 'verbose', False):
        level = logging.DEBUG
    elif getattr(args, 'quiet', False):
        level = logging.WARNING
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s',
                        datefmt='%H:%M:%S')


def _resolve_config(args) -> RunConfig:
    """Defaults, then the JSON file, then command-line flags."""
    config = load_config(args.config) if args.config else RunConfig()
    return config.copy_with_overrides({
        'seed': args.seed,
        'out': args.out,
        'sim': args.sim,
        'p': args.p,
        'iterations': args.iters,
        'repetitions': args.reps,
        'n': args.n,
        'k': args.k,
        'm': args.m,
        'n_mc': args.n_mc,
        'n_workers': args.workers,
    })


def _read_design(path: str, label: str = "design") -> np.ndarray:
    """Read a CSV of inputs with header ``x1..xd``."""
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigError(f"{label} file not found: {file_path}")
    with file_path.open('r', newline='', encoding='utf-8') as fh:
        reader = csv.reader(fh)
        next(reader, None)
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ConfigError(f"{label} file {file_path} holds no inputs")
    return np.array(rows, dtype=float)


def _dimension(sim: Simulator, design: Optional[np.ndarray],
               listed: Optional[np.ndarray] = None) -> int:
    for points in (design, listed):
        if points is not None:
            return int(points.shape[1])
    if sim.input_space is None:
        raise ConfigError("the simulator has no input space; supply --design, "
                          "--candidate-file or input_levels")
    return sim.input_space.d


def candidate_set(sim: Simulator, config: RunConfig, design: Optional[np.ndarray] = None,
                  listed: Optional[np.ndarray] = None) -> np.ndarray:
    """Restricted input set scanned by the optimizer.

    An explicit ``listed`` set (from ``--candidate-file``) wins, merged with
    the design.  Otherwise the simulator's own points or input space are
    used; a simulator with neither falls back to the design alone, which
    leaves the optimizer nothing to add.
    """
    if listed is not None:
        if design is not None and design.shape[1] != listed.shape[1]:
            raise ConfigError(f"candidate file has {listed.shape[1]} columns, the design has "
                              f"{design.shape[1]}")
        points = listed if design is None else np.vstack([design, listed])
        points = np.unique(points, axis=0)
        return points[np.lexsort(points.T[::-1])]
    points = sim.candidate_points()
    if points is not None:
        return points
    if sim.input_space is None:
        if design is None:
            raise ConfigError("the simulator has no input space; supply --design "
                              "with --candidate-file or input_levels")
        logger.warning("No input space for simulator %r: the candidate set is the design; "
                       "supply --candidate-file or input_levels to optimize", sim.name)
        return design
    space = sim.input_space
    if space.size <= config.candidates:
        return space.enumerate()
    sample = space.sample(config.candidates, make_stream(config.seed), exclude=design)
    if design is not None:
        sample = np.vstack([design, sample])
    return sample[np.lexsort(sample.T[::-1])]


def _write_json(path: Path, payload: Dict) -> None:
    with path.open('w', encoding='utf-8') as fh:
        json.dump(payload, fh, indent=2)
        fh.write('\n')


def _write_metadata(out: Path, command: str, config: RunConfig, started: float,
                    extra: Optional[Dict] = None) -> None:
    payload = {
        'command': command,
        'version': __version__,
        'finished_at': datetime.now(timezone.utc).isoformat(),
        'wall_seconds': time.perf_counter() - started,
        'config': config.snapshot(),
    }
    if extra:
        payload.update(extra)
    _write_json(out / 'metadata.json', payload)


def _fail(e: Exception) -> int:
    print(f"Error: {e}", file=sys.stderr)
    return exit_code_for(e) if isinstance(e, QfeiError) else 1


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------

def cmd_fit(args):
    """Fit a metamodel and write its bundle."""
    started = time.perf_counter()
    try:
        config = _resolve_config(args)
        design = _read_design(args.design) if args.design else None
        listed = _read_design(args.candidate_file, "candidate") if args.candidate_file else None
        with build_simulator(config.sim, config) as sim:
            d = _dimension(sim, design, listed)
            config.validate(d=d, check_output=True)
            candidates = candidate_set(sim, config, design, listed)
            cfg = config.qfei_config(candidates)
            state, meta = initial_design(cfg, sim, config.n, config.grid(), inputs=design,
                                         space=sim.input_space)

        out = Path(config.out)
        bundle = Path(args.bundle) if args.bundle else out / 'bundle'
        save_metamodel(meta, bundle)
        write_curve_table(bundle / LEARNING_CURVES, state.inputs, state.curves)
        err1 = projection_error(list(state.curves), meta.basis)
        report = {
            'n': state.n,
            'k': meta.k,
            'm': meta.grid.m,
            'err1': err1,
            'basis_sources': list(meta.basis.source_ids),
            'thetas': [t.tolist() for t in meta.thetas],
            'warnings': list(meta.warnings),
        }
        _write_json(out / 'fit_report.json', report)
        _write_metadata(out, 'fit', config, started)

        print(f"Metamodel fitted on {state.n} inputs with k={meta.k}")
        print(f"Projection error on the learning set (err1): {err1:.4%}")
        print(f"Bundle saved to {bundle}")
    except Exception as e:
        return _fail(e)

    return 0


def cmd_validate(args):
    """Validate a metamodel bundle against a truth table."""
    started = time.perf_counter()
    try:
        config = _resolve_config(args).validate(check_output=True)
        out = Path(config.out)
        bundle = Path(args.bundle) if args.bundle else out / 'bundle'
        meta = load_metamodel(bundle)
        if args.truth:
            truth = TruthTable.from_csv(args.truth)
        elif config.sim == 'toy':
            truth = toy_truth_table(meta.grid, config.n_mc, config.seed,
                                    cache=out / 'toy_truth.npz', n_workers=config.n_workers)
        else:
            raise ConfigError("validation needs --truth unless the simulator is toy")

        learning = None
        if (bundle / LEARNING_CURVES).is_file():
            _, learning = read_curve_table(bundle / LEARNING_CURVES)
        report = validation_report(meta, truth, p=float(config.p), learning_curves=learning)
        payload = report.to_dict()
        payload['ground_truth'] = ground_truth(truth, float(config.p))
        _write_json(out / 'validation.json', payload)
        _write_metadata(out, 'validate', config, started)

        print("Validation Results:")
        print("=" * 40)
        if report.err1 is not None:
            print(f"err1 (projection, learning set): {report.err1:.4%}")
        print(f"err2 (projection, truth set):    {report.err2:.4%}")
        print(f"err3 (metamodel, truth set):     {report.err3:.4%}")
        print(f"objective error at p={config.p}:  {report.objective_error:.4%}")
    except Exception as e:
        return _fail(e)

    return 0


def cmd_optimize(args):
    """Run the adaptive quantile optimizer."""
    started = time.perf_counter()
    try:
        config = _resolve_config(args)
        design = _read_design(args.design) if args.design else None
        listed = _read_design(args.candidate_file, "candidate") if args.candidate_file else None
        with build_simulator(config.sim, config) as sim:
            if args.bundle:
                meta = load_metamodel(args.bundle)
                xs, curves = read_curve_table(Path(args.bundle) / LEARNING_CURVES)
                config.validate(d=xs.shape[1], check_output=True)
                cfg = config.qfei_config(candidate_set(sim, config, xs, listed))
                state = Design.build(xs, curves, meta, cfg.objective)
            else:
                config.validate(d=_dimension(sim, design, listed), check_output=True)
                cfg = config.qfei_config(candidate_set(sim, config, design, listed))
                state, meta = initial_design(cfg, sim, config.n, config.grid(), inputs=design,
                                             space=sim.input_space)
            report = run(cfg, sim, state, meta)

        out = Path(config.out)
        payload = report.to_dict()
        timings = payload.pop('timings')
        _write_json(out / 'qfei_report.json', payload)
        write_trajectory_csv(report, out / 'trajectory.csv')
        _write_metadata(out, 'optimize', config, started, {'timings': timings})

        print(f"Estimated optimum x_hat: {list(report.x_hat)}")
        print(f"Projected {cfg.p}-quantile at x_hat: {report.x_hat_value:.6g}")
        print(f"Iterations run: {len(report.trajectory)} ({report.stop_reason})")
        print(f"Simulator calls: {report.simulator_calls}")
        if report.regressions:
            print(f"Best-so-far regressions at iterations: {report.regressions}")
    except Exception as e:
        return _fail(e)

    return 0


def cmd_toy_experiment(args):
    """Repeat fit and optimization on the toy simulator."""
    started = time.perf_counter()
    try:
        config = _resolve_config(args).copy_with_overrides({'sim': 'toy'})
        config.validate(d=3, check_output=True)
        out = Path(config.out)
        truth = toy_truth_table(config.grid(), config.n_mc, config.seed,
                                cache=out / 'toy_truth.npz', n_workers=config.n_workers)
        summary = run_toy_study(config, truth)
        write_study(summary, out)
        _write_metadata(out, 'toy-experiment', config, started)

        counts = summary.counts()
        reps = summary.repetitions
        print(f"Toy study: {reps} repetitions, p={summary.p}")
        print(f"True optimum {summary.x_star} with quantile {summary.q_star:.4f}")
        print(f"Exact hits: {counts['exact_hits']}/{reps}")
        print(f"Top-2 hits: {counts['top2_hits']}/{reps}")
        print(f"Better than initial design: {counts['better_than_baseline']}/{reps}")
        print(f"Direct metamodel argmax worse: {counts['direct_argmax_worse']}/{reps}")
        for name in ('err1', 'err2', 'err3'):
            dist = summary.error_distribution(name)
            if dist:
                print(f"Median {name}: {dist['median']:.4%}")
        for warning in summary.warnings:
            print(f"Warning: {warning}")
    except Exception as e:
        return _fail(e)

    return 0


def cmd_benchmark(args):
    """Run performance benchmarks."""
    try:
        sys.path.insert(0, str(Path(__file__).resolve().parent.parent))
        from benchmarks.performance_suite import run_benchmarks

        print("Running performance benchmarks...")
        run_benchmarks(quick=args.quick, output=Path(args.output) if args.output else None)
    except Exception as e:
        return _fail(e)

    return 0


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='JSON configuration file')
    common.add_argument('--seed', type=int, help='Master seed')
    common.add_argument('--out', type=str, help='Output directory')
    common.add_argument('--sim', type=str,
                        help='Simulator: toy, replay:<csv> or external:<command>')
    common.add_argument('--p', type=float, help='Target quantile level')
    common.add_argument('--iters', type=int, help='Optimizer iterations')
    common.add_argument('--reps', type=int, help='Toy study repetitions')
    common.add_argument('--n', type=int, help='Learning set size')
    common.add_argument('--k', type=int, help='Basis size')
    common.add_argument('--m', type=int, help='Number of probability levels')
    common.add_argument('--n-mc', dest='n_mc', type=int, help='Replications per input')
    common.add_argument('--workers', type=int, help='Parallel workers')
    common.add_argument('--design', type=str, help='CSV of learning inputs (x1..xd)')
    common.add_argument('--candidate-file', dest='candidate_file', type=str,
                        help='CSV of candidate inputs (x1..xd) for the optimizer')
    common.add_argument('--truth', type=str, help='Truth curve table (x1..xd,p,value)')
    common.add_argument('--bundle', type=str, help='Metamodel bundle directory')
    common.add_argument('--verbose', action='store_true', help='Debug logging')
    common.add_argument('--quiet', action='store_true', help='Warnings only')
    return common


def main(argv: Optional[List[str]] = None):
    """Main CLI entry point."""
    parser = argparse.ArgumentParser(
        description="Quantile-function metamodel and expected-improvement quantile optimizer",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  qfei fit --n 150 --k 4 --out results
  qfei validate --bundle results/bundle --p 0.5
  qfei optimize --p 0.4 --iters 20 --seed 7
  qfei optimize --sim replay:draws.csv --design design.csv --iters 5
  qfei optimize --sim "external:./my_sim" --candidate-file grid.csv --n 20 --iters 5
  qfei toy-experiment --reps 30 --workers 4
  qfei benchmark --quick
        """
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')
    common = _common_parser()

    fit_parser = subparsers.add_parser('fit', parents=[common], help='Fit a metamodel bundle')
    fit_parser.set_defaults(func=cmd_fit)

    val_parser = subparsers.add_parser('validate', parents=[common],
                                       help='Validate a bundle against a truth table')
    val_parser.set_defaults(func=cmd_validate)

    opt_parser = subparsers.add_parser('optimize', parents=[common],
                                       help='Run the adaptive quantile optimizer')
    opt_parser.set_defaults(func=cmd_optimize)

    toy_parser = subparsers.add_parser('toy-experiment', parents=[common],
                                       help='Repeat the toy study')
    toy_parser.set_defaults(func=cmd_toy_experiment)

    bench_parser = subparsers.add_parser('benchmark', help='Run performance benchmarks')
    bench_parser.add_argument('--quick', action='store_true', help='Smaller problem sizes')
    bench_parser.add_argument('--output', type=str, help='CSV file for results')
    bench_parser.set_defaults(func=cmd_benchmark)

    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 1

    _configure_logging(args)

    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("\nOperation cancelled by user.", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"Unexpected error: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
