"""
Tests for repeated end-to-end runs on the toy simulator.

The full study reproduces the published hit counts and is marked slow;
run it with ``pytest -m slow``.
"""

import json
import os

import numpy as np
import pytest

from src.config import RunConfig
from src.curves import ProbGrid
from src.qfei import initial_design
from src.simulators import TOY_SPACE, ToySimulator
from src.toy_study import repetition_seed, run_repetition, run_toy_study, write_study
from src.validation import toy_truth_table, validation_report


@pytest.fixture(scope="module")
def quick_setup():
    config = RunConfig(n=12, k=2, m=21, n_mc=300, iterations=2, repetitions=2, n_starts=2,
                       maxiter=100, seed=4)
    truth = toy_truth_table(ProbGrid.uniform(21), n_mc=300, seed=4)
    return config, truth


class TestRepetition:
    """Test one repetition and its scoring."""

    def test_seeds_are_distinct(self):
        seeds = {repetition_seed(0, r) for r in range(30)}
        assert len(seeds) == 30
        assert repetition_seed(0, 3) == repetition_seed(0, 3)

    def test_scoring(self, quick_setup):
        config, truth = quick_setup
        result = run_repetition(config, 0, truth)
        assert result.q_hat == truth.quantile_at(result.x_hat, 0.4)
        assert result.rank_hat == truth.rank_of(result.x_hat, 0.4)
        assert result.better_than_baseline == (result.q_hat > result.baseline_q)
        assert result.direct_worse == (result.direct_q < result.q_hat)
        assert result.simulator_calls == 300 * (12 + 2)
        assert 0.0 < result.err2 <= result.err3

    def test_optimum_never_in_initial_design(self, quick_setup):
        config, truth = quick_setup
        q = truth.quantiles(0.4)
        x_star = truth.inputs[int(np.argmax(q))]
        for rep in range(3):
            cfg = config.qfei_config(truth.inputs, seed=repetition_seed(config.seed, rep))
            design, _ = initial_design(cfg, ToySimulator(), config.n, truth.grid,
                                       exclude=x_star.reshape(1, -1), space=TOY_SPACE)
            assert not design.contains(x_star)


class TestStudy:
    """Test study aggregation and output."""

    def test_summary_and_files(self, tmp_path, quick_setup):
        config, truth = quick_setup
        summary = run_toy_study(config, truth, n_workers=1)
        assert summary.repetitions == 2
        counts = summary.counts()
        assert set(counts) == {"exact_hits", "top2_hits", "better_than_baseline",
                               "direct_argmax_worse"}
        assert all(0 <= v <= 2 for v in counts.values())
        assert summary.error_distribution("err3")["min"] > 0.0

        write_study(summary, tmp_path)
        payload = json.loads((tmp_path / "toy_study.json").read_text())
        assert payload["repetitions"] == 2
        lines = (tmp_path / "toy_study.csv").read_text().splitlines()
        assert lines[0].startswith("repetition,seed,x_hat,q_hat")
        assert len(lines) == 3

    def test_process_pool_matches_serial(self, quick_setup):
        config, truth = quick_setup
        serial = run_toy_study(config, truth, n_workers=1)
        parallel = run_toy_study(config, truth, n_workers=2)
        assert [r.x_hat for r in serial.results] == [r.x_hat for r in parallel.results]

    def test_level_outside_grid_is_reported(self, quick_setup):
        config, truth = quick_setup
        config = config.copy_with_overrides({"p": 0.01, "repetitions": 1, "iterations": 0})
        summary = run_toy_study(config, truth, n_workers=1)
        assert summary.warnings and "outside the probability grid" in summary.warnings[0]


@pytest.mark.slow
class TestPublishedToyStudy:
    """Full-size study: 150 learning points, k=4, 10^4 draws, p=0.4."""

    @pytest.fixture(scope="class")
    def truth(self):
        return toy_truth_table(ProbGrid.uniform(101), n_mc=10_000, seed=0)

    def test_metamodel_accuracy(self, truth):
        config = RunConfig()
        cfg = config.qfei_config(truth.inputs, seed=1)
        design, meta = initial_design(cfg, ToySimulator(), config.n, truth.grid,
                                      space=TOY_SPACE)
        report = validation_report(meta, truth, p=0.5, learning_curves=list(design.curves))
        assert report.err1 <= 0.01
        assert report.err2 <= 0.02
        assert report.err3 <= 0.05
        assert 0.02 <= report.objective_error <= 0.10

    def test_hit_counts(self, truth):
        config = RunConfig(n_workers=max(1, min(8, os.cpu_count() or 1)))
        summary = run_toy_study(config, truth)
        counts = summary.counts()
        assert counts["top2_hits"] >= 24
        assert counts["better_than_baseline"] >= 27
        assert counts["direct_argmax_worse"] >= 25
