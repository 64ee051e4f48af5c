"""
Tests for the quantile-function metamodel.
"""

import numpy as np
import pytest

from src.curves import ProbGrid, QuantileCurve, eval_at
from src.errors import (DegenerateObjectiveError, DomainError, GridMismatchError,
                        TransformDomainError)
from src.qmeta import (MetamodelConfig, ObjectiveSpec, QuantileLaw, direct_argmax, fit_metamodel,
                       global_error, load_metamodel, objective_error, predict_curve, predict_law,
                       predict_laws, save_metamodel)
from src.mmp import Basis
from src.simulators import TOY_SPACE


def shifted_curves(grid, X):
    """Curves psi_1(x) * 1 + psi_2(x) * p with smooth positive coefficients."""
    ones, ramp = np.ones(grid.m), grid.levels
    return [QuantileCurve(grid, (1.0 + x[0] + x[1] ** 2) * ones + (0.5 + x[0] * x[1]) * ramp)
            for x in X]


@pytest.fixture
def smooth_set():
    grid = ProbGrid.uniform(21)
    X = TOY_SPACE.sample(25, np.random.default_rng(5))
    return grid, X, shifted_curves(grid, X)


class TestConfig:
    """Test metamodel settings validation."""

    def test_defaults(self):
        cfg = MetamodelConfig()
        assert cfg.k == 4
        assert cfg.kernel == "matern52"
        assert cfg.transform == "identity"

    @pytest.mark.parametrize("kwargs", [{"k": 0}, {"transform": "log"},
                                        {"theta_bounds": (1.0, 0.5)}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            MetamodelConfig(**kwargs)

    def test_objective_spec(self, grid):
        curve = QuantileCurve(grid, grid.levels * 2)
        assert ObjectiveSpec(0.5)(curve) == pytest.approx(1.0)
        with pytest.raises(DomainError):
            ObjectiveSpec(1.0)

    def test_objective_on_rows_and_basis(self, grid):
        objective = ObjectiveSpec(0.3)
        curves = [QuantileCurve(grid, grid.levels * s + s) for s in (1.0, 2.0, 3.0)]
        rows = objective.of_rows(grid, np.vstack([c.values for c in curves]))
        assert np.allclose(rows, [eval_at(c, 0.3) for c in curves])
        basis = Basis((QuantileCurve(grid, np.ones(grid.m)), QuantileCurve(grid, grid.levels)))
        assert np.allclose(objective.on_basis(basis), [1.0, 0.3])


class TestFit:
    """Test fitting and prediction."""

    def test_reproduces_learning_curves(self, smooth_set):
        grid, X, curves = smooth_set
        meta = fit_metamodel(X, curves, config=MetamodelConfig(k=2, n_starts=3), space=TOY_SPACE)
        assert meta.k == 2
        assert meta.coefficients.shape == (25, 2)
        for x, curve in list(zip(X, curves))[:5]:
            assert np.allclose(predict_curve(meta, x).values, curve.values, atol=1e-4)

    def test_generalizes_on_smooth_family(self, smooth_set):
        grid, X, curves = smooth_set
        meta = fit_metamodel(X, curves, config=MetamodelConfig(k=2, n_starts=3), space=TOY_SPACE)
        probe = TOY_SPACE.sample(20, np.random.default_rng(6), exclude=X)
        truth = list(zip(probe, shifted_curves(grid, probe)))
        assert global_error(meta, truth) < 0.02

    def test_law_mean_equals_curve_value(self, toy_metamodel):
        x = (0.7, 0.2, 0.9)
        for p in (0.1, 0.4, 0.73):
            law = predict_law(toy_metamodel, x, p)
            assert law.mean == pytest.approx(eval_at(predict_curve(toy_metamodel, x), p), abs=1e-12)
            assert law.variance >= 0.0
            assert law.level == p

    def test_law_composes_coefficient_moments(self, toy_metamodel):
        x = np.array([[0.3, 0.6, 0.2]])
        p = 0.4
        means, variances = toy_metamodel.coefficient_moments(x)
        r = np.array([eval_at(f, p) for f in toy_metamodel.basis.functions])
        law = predict_law(toy_metamodel, x[0], p)
        assert law.mean == pytest.approx(float(means[0] @ r), abs=1e-12)
        assert law.variance == pytest.approx(float(variances[0] @ (r * r)), abs=1e-12)

    def test_variance_vanishes_at_design_points(self, toy_metamodel):
        _, var = predict_laws(toy_metamodel, toy_metamodel.design[:5], 0.5)
        assert np.all(var < 1e-3)

    def test_invalid_level(self, toy_metamodel):
        with pytest.raises(DomainError):
            predict_law(toy_metamodel, (0.1, 0.1, 0.1), 0.0)

    def test_mismatched_inputs(self, smooth_set):
        grid, X, curves = smooth_set
        with pytest.raises(DomainError):
            fit_metamodel(X[:-1], curves)

    def test_too_few_points(self, smooth_set):
        grid, X, curves = smooth_set
        with pytest.raises(DomainError):
            fit_metamodel(X[:4], curves[:4], config=MetamodelConfig(k=2))

    def test_fixed_basis_and_thetas(self, smooth_set):
        grid, X, curves = smooth_set
        meta = fit_metamodel(X, curves, config=MetamodelConfig(k=2, n_starts=2), space=TOY_SPACE)
        again = fit_metamodel(X, curves, config=MetamodelConfig(k=2), space=TOY_SPACE,
                              basis=meta.basis, thetas=meta.thetas)
        for a, b in zip(meta.thetas, again.thetas):
            assert np.array_equal(a, b)
        assert again.basis is meta.basis

    @pytest.mark.parametrize("c", [0.5, 3.0, 4.0])
    def test_scaling_curves_scales_predictions(self, smooth_set, c):
        grid, X, curves = smooth_set
        cfg = MetamodelConfig(k=2, n_starts=3, seed=0)
        meta = fit_metamodel(X, curves, config=cfg, space=TOY_SPACE)
        scaled = fit_metamodel(X, [f.scaled(c) for f in curves], config=cfg, space=TOY_SPACE,
                               thetas=meta.thetas)
        assert scaled.basis.source_ids == meta.basis.source_ids
        for x in TOY_SPACE.sample(5, np.random.default_rng(3)):
            expected = c * predict_curve(meta, x).values
            assert np.allclose(predict_curve(scaled, x).values, expected, rtol=1e-8, atol=1e-10)

    def test_threaded_fit_matches_serial(self, smooth_set):
        grid, X, curves = smooth_set
        serial = fit_metamodel(X, curves, config=MetamodelConfig(k=2, n_starts=2), space=TOY_SPACE)
        threaded = fit_metamodel(X, curves, config=MetamodelConfig(k=2, n_starts=2, n_workers=2),
                                 space=TOY_SPACE)
        for a, b in zip(serial.thetas, threaded.thetas):
            assert np.allclose(a, b)


class TestLogShift:
    """Test the log-shift coefficient transform."""

    def test_positive_coefficients(self, smooth_set):
        grid, X, curves = smooth_set
        basis = Basis((QuantileCurve(grid, np.ones(grid.m)), QuantileCurve(grid, grid.levels)))
        meta = fit_metamodel(X, curves, config=MetamodelConfig(k=2, n_starts=2,
                                                               transform="log-shift"),
                             space=TOY_SPACE, basis=basis)
        assert meta.transform == "log-shift"
        assert np.allclose(predict_curve(meta, X[3]).values, curves[3].values, atol=1e-3)
        x = (0.55, 0.45, 0.35)
        law = predict_law(meta, x, 0.5)
        assert law.mean == pytest.approx(eval_at(predict_curve(meta, x), 0.5))
        assert law.variance >= 0.0

    def test_rejects_negative_coefficients(self, grid):
        X = TOY_SPACE.sample(8, np.random.default_rng(1))
        z = np.linspace(-1.0, 1.0, grid.m)
        basis = Basis((QuantileCurve(grid, np.ones(grid.m)), QuantileCurve(grid, z)))
        curves = [QuantileCurve(grid, -x[0] * np.ones(grid.m) + x[1] * z) for x in X]
        with pytest.raises(TransformDomainError):
            fit_metamodel(X, curves, config=MetamodelConfig(k=2, transform="log-shift"),
                          basis=basis)


class TestErrors:
    """Test accuracy measures."""

    def test_zero_error_on_learning_set(self, smooth_set):
        grid, X, curves = smooth_set
        meta = fit_metamodel(X, curves, config=MetamodelConfig(k=2, n_starts=2), space=TOY_SPACE)
        truth = list(zip(X, curves))
        assert global_error(meta, truth) < 1e-4
        assert objective_error(meta, truth, 0.4) < 1e-4

    def test_objective_error_degenerate(self, smooth_set):
        grid, X, curves = smooth_set
        meta = fit_metamodel(X, curves, config=MetamodelConfig(k=2, n_starts=2), space=TOY_SPACE)
        flat = [(X[0], curves[0]), (X[1], curves[0])]
        with pytest.raises(DegenerateObjectiveError):
            objective_error(meta, flat, 0.5)

    def test_grid_mismatch(self, toy_metamodel):
        other = QuantileCurve(ProbGrid.uniform(5), np.arange(5.0))
        with pytest.raises(GridMismatchError):
            global_error(toy_metamodel, [((0.1, 0.1, 0.1), other)])


class TestDirectArgmax:
    """Test maximization of the predicted quantile."""

    def test_matches_exhaustive_scan(self, toy_metamodel):
        candidates = TOY_SPACE.enumerate()[::7]
        x, value = direct_argmax(toy_metamodel, candidates, 0.4)
        means, _ = predict_laws(toy_metamodel, candidates, 0.4)
        assert value == pytest.approx(means.max())
        assert any(np.array_equal(x, c) for c in candidates)

    def test_ties_go_to_smallest_input(self, smooth_set):
        grid, X, curves = smooth_set
        meta = fit_metamodel(X, curves, config=MetamodelConfig(k=2, n_starts=2), space=TOY_SPACE)
        x, _ = direct_argmax(meta, np.array([X[0], X[0]]), 0.5)
        assert np.array_equal(x, X[0])


class TestPersistence:
    """Test metamodel bundles."""

    def test_save_and_load(self, tmp_path, toy_metamodel):
        save_metamodel(toy_metamodel, tmp_path / "bundle")
        assert (tmp_path / "bundle" / "metamodel.json").exists()
        assert (tmp_path / "bundle" / "basis" / "basis.json").exists()
        loaded = load_metamodel(tmp_path / "bundle")
        assert loaded.k == toy_metamodel.k
        probe = TOY_SPACE.enumerate()[:30]
        a = predict_laws(toy_metamodel, probe, 0.4)
        b = predict_laws(loaded, probe, 0.4)
        assert np.allclose(a[0], b[0], atol=1e-9)
        assert np.allclose(a[1], b[1], atol=1e-9)

    def test_quantile_law_rejects_negative_variance(self):
        with pytest.raises(DomainError):
            QuantileLaw(0.0, -1.0, 0.5)
