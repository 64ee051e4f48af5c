"""
Tests for expected improvement and the adaptive quantile maximization loop.
"""

import json

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from src.curves import ProbGrid
from src.errors import CandidatesExhausted, ConfigError, DomainError, DuplicateInputError
from src.qfei import (Design, QfeiConfig, evaluate, expected_improvement, expected_improvements,
                      initial_design, run, select_candidate, step, write_report_json,
                      write_trajectory_csv)
from src.qmeta import MetamodelConfig, QuantileLaw, predict_laws
from src.simulators import TOY_SPACE, ToySimulator

GRID = ProbGrid.uniform(21)
FAST = MetamodelConfig(n_starts=2, maxiter=100)


def small_config(candidates, **overrides):
    settings = dict(p=0.4, iterations=3, n_mc=300, k=2, candidate_set=candidates, seed=17,
                    metamodel=FAST)
    settings.update(overrides)
    return QfeiConfig(**settings)


@pytest.fixture(scope="module")
def candidates():
    return TOY_SPACE.enumerate()[::13]


class TestExpectedImprovement:
    """Test the closed-form expected improvement."""

    def test_zero_variance(self):
        assert expected_improvement(QuantileLaw(1.5, 0.0, 0.5), 1.0) == pytest.approx(0.5)
        assert expected_improvement(QuantileLaw(0.5, 0.0, 0.5), 1.0) == 0.0

    def test_at_the_best_value(self):
        # u = 0 gives sigma * phi(0)
        ei = expected_improvement(QuantileLaw(2.0, 4.0, 0.5), 2.0)
        assert ei == pytest.approx(2.0 * norm.pdf(0.0))

    @pytest.mark.parametrize("mean,variance,best", [(0.3, 0.04, 0.5), (1.0, 0.25, 0.2),
                                                    (-1.0, 2.0, 0.0)])
    def test_matches_quadrature(self, mean, variance, best):
        sigma = np.sqrt(variance)
        expected, _ = integrate.quad(lambda u: (u - best) * norm.pdf(u, mean, sigma),
                                     best, mean + 12 * sigma)
        assert expected_improvement(QuantileLaw(mean, variance, 0.5), best) == pytest.approx(
            expected, rel=1e-6, abs=1e-12)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_monte_carlo(self, seed):
        rng = np.random.default_rng(500 + seed)
        mean = rng.normal()
        sigma = np.sqrt(rng.uniform(0.01, 2.0))
        best = mean + sigma * rng.uniform(-2.0, 2.0)
        gains = np.maximum(rng.normal(mean, sigma, 200_000) - best, 0.0)
        standard_error = gains.std() / np.sqrt(gains.size)
        ei = expected_improvement(QuantileLaw(mean, sigma ** 2, 0.5), best)
        assert abs(ei - gains.mean()) <= 4 * standard_error

    def test_monotone_in_mean_and_variance(self):
        means = np.array([0.0, 0.5, 1.0])
        assert np.all(np.diff(expected_improvements(means, np.full(3, 0.1), 0.7)) > 0)
        variances = np.array([0.01, 0.1, 1.0])
        assert np.all(np.diff(expected_improvements(np.zeros(3), variances, 0.7)) > 0)

    def test_non_negative_far_below(self):
        assert expected_improvements(np.array([-50.0]), np.array([1e-4]), 0.0)[0] >= 0.0

    def test_negative_variance(self):
        with pytest.raises(DomainError):
            expected_improvements(np.array([0.0]), np.array([-1e-3]), 0.0)


class TestQfeiConfig:
    """Test run settings validation."""

    @pytest.mark.parametrize("overrides", [{"p": 1.2}, {"n_mc": 0}, {"k": 0},
                                           {"iterations": -1}, {"best_from": "median"},
                                           {"stop_rel_tol": 0.0}, {"refit_every": 0}])
    def test_invalid(self, candidates, overrides):
        with pytest.raises((ConfigError, DomainError)):
            small_config(candidates, **overrides)

    def test_empty_candidates(self):
        with pytest.raises(ConfigError):
            small_config(np.empty((0, 3)))

    def test_objective_follows_level(self, candidates):
        cfg = small_config(candidates, p=0.7)
        assert cfg.objective.p == 0.7
        assert cfg.objective.kind == "quantile-level"

    def test_metamodel_config_takes_k(self, candidates):
        assert small_config(candidates, k=3).metamodel_config().k == 3


class TestDesign:
    """Test the evaluated design."""

    def test_build_and_best(self, candidates):
        cfg = small_config(candidates)
        design, meta = initial_design(cfg, ToySimulator(), 10, GRID)
        assert design.n == 10
        r = np.array([np.interp(0.4, f.grid.levels, f.values) for f in meta.basis.functions])
        assert np.allclose(design.observed_obj, meta.coefficients @ r)
        i, value = design.best()
        assert value == design.observed_obj.max()
        assert design.contains(design.inputs[i])
        assert design.best("raw")[1] == design.raw_obj.max()
        rebuilt = Design.build(design.inputs, design.curves, meta, cfg.objective)
        assert np.array_equal(rebuilt.observed_obj, design.observed_obj)
        assert np.allclose(rebuilt.raw_obj, [cfg.objective(c) for c in design.curves])

    def test_initial_points_are_candidates(self, candidates):
        cfg = small_config(candidates)
        design, _ = initial_design(cfg, ToySimulator(), 8, GRID)
        keys = {tuple(c) for c in candidates}
        assert all(tuple(x) in keys for x in design.inputs)

    def test_exclusion(self, candidates):
        cfg = small_config(candidates)
        design, _ = initial_design(cfg, ToySimulator(), 8, GRID, exclude=candidates[:40])
        assert not any(design.contains(c) for c in candidates[:40])

    def test_duplicate_inputs(self, candidates):
        cfg = small_config(candidates)
        design, meta = initial_design(cfg, ToySimulator(), 8, GRID)
        with pytest.raises(DuplicateInputError):
            Design(np.vstack([design.inputs, design.inputs[:1]]),
                   design.curves + design.curves[:1],
                   np.vstack([design.coefficients, design.coefficients[:1]]),
                   np.append(design.observed_obj, 0.0), np.append(design.raw_obj, 0.0))


class TestStep:
    """Test single iterations."""

    def test_selects_the_ei_maximizer(self, candidates):
        cfg = small_config(candidates)
        design, meta = initial_design(cfg, ToySimulator(), 10, GRID)
        chosen = select_candidate(design, meta, cfg)
        remaining = np.array([c for c in candidates if not design.contains(c)])
        means, variances = predict_laws(meta, remaining, 0.4)
        scores = expected_improvements(means, np.maximum(variances, 0.0), design.best()[1])
        assert chosen.ei == pytest.approx(scores.max())
        assert not design.contains(chosen.x)

    def test_step_grows_design(self, candidates):
        cfg = small_config(candidates)
        design, meta = initial_design(cfg, ToySimulator(), 10, GRID)
        new_design, new_meta, chosen = step(design, meta, cfg, ToySimulator())
        assert new_design.n == 11
        assert new_design.contains(chosen.x)
        assert new_meta.design.shape[0] == 11

    def test_frozen_basis_between_refits(self, candidates):
        cfg = small_config(candidates, refit_every=2)
        design, meta = initial_design(cfg, ToySimulator(), 10, GRID)
        x = select_candidate(design, meta, cfg).x
        _, frozen = evaluate(design, meta, cfg, ToySimulator(), x, iteration=1)
        assert frozen.basis is meta.basis
        for a, b in zip(frozen.thetas, meta.thetas):
            assert np.array_equal(a, b)

    def test_exhausted(self):
        few = TOY_SPACE.enumerate()[:6]
        cfg = small_config(few)
        design, meta = initial_design(cfg, ToySimulator(), 6, GRID)
        with pytest.raises(CandidatesExhausted):
            select_candidate(design, meta, cfg)


class TestRun:
    """Test complete adaptive runs."""

    def test_budget(self, candidates):
        cfg = small_config(candidates)
        design, meta = initial_design(cfg, ToySimulator(), 10, GRID)
        report = run(cfg, ToySimulator(), design, meta)
        assert report.stop_reason == "budget"
        assert len(report.trajectory) == 3
        assert report.design.n == 13
        assert report.simulator_calls == 13 * 300
        assert report.design.contains(report.x_hat)
        assert report.x_hat_value == pytest.approx(report.design.best()[1])
        chosen = [row.x for row in report.trajectory]
        assert len(set(chosen)) == 3
        assert not any(design.contains(x) for x in chosen)

    def test_reproducible(self, candidates):
        cfg = small_config(candidates, iterations=2)
        first = run(cfg, ToySimulator(), *initial_design(cfg, ToySimulator(), 10, GRID))
        second = run(cfg, ToySimulator(), *initial_design(cfg, ToySimulator(), 10, GRID))
        assert [r.x for r in first.trajectory] == [r.x for r in second.trajectory]
        assert first.x_hat == second.x_hat

    def test_zero_iterations_returns_initial_best(self, candidates):
        cfg = small_config(candidates, iterations=0)
        design, meta = initial_design(cfg, ToySimulator(), 10, GRID)
        report = run(cfg, ToySimulator(), design, meta)
        assert report.trajectory == []
        assert report.x_hat == report.initial_best
        assert report.simulator_calls == 10 * 300

    def test_exhaustion_stops_early(self):
        few = TOY_SPACE.enumerate()[:12]
        cfg = small_config(few, iterations=5)
        design, meta = initial_design(cfg, ToySimulator(), 10, GRID)
        report = run(cfg, ToySimulator(), design, meta)
        assert report.stop_reason == "exhausted"
        assert len(report.trajectory) == 2
        assert report.design.n == 12

    def test_stabilized(self, candidates):
        cfg = small_config(candidates, stop_rel_tol=1e6)
        design, meta = initial_design(cfg, ToySimulator(), 10, GRID)
        report = run(cfg, ToySimulator(), design, meta)
        assert report.stop_reason == "stabilized"
        assert report.design.n == 10

    def test_refits_when_metamodel_missing(self, candidates):
        cfg = small_config(candidates, iterations=1)
        design, _ = initial_design(cfg, ToySimulator(), 10, GRID)
        report = run(cfg, ToySimulator(), design)
        assert report.design.n == 11

    def test_initial_point_outside_candidates(self, candidates):
        cfg = small_config(candidates)
        design, meta = initial_design(cfg, ToySimulator(), 10, GRID)
        narrow = small_config(candidates[:5])
        with pytest.raises(ConfigError):
            run(narrow, ToySimulator(), design, meta)

    def test_outputs(self, tmp_path, candidates):
        cfg = small_config(candidates, iterations=2)
        design, meta = initial_design(cfg, ToySimulator(), 10, GRID)
        report = run(cfg, ToySimulator(), design, meta)
        write_report_json(report, tmp_path / "report.json")
        write_trajectory_csv(report, tmp_path / "trajectory.csv")
        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["x_hat"] == list(report.x_hat)
        assert payload["stop_reason"] == "budget"
        assert len(payload["trajectory"]) == 2
        lines = (tmp_path / "trajectory.csv").read_text().splitlines()
        assert lines[0] == "iter,x1,x2,x3,ei,obs_q,best_so_far"
        assert len(lines) == 3
