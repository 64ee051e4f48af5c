"""
Tests for probability grids, quantile curves and their L2 geometry.
"""

import numpy as np
import pytest

from src.curves import (ProbGrid, QuantileCurve, curve_matrix, eval_at, inner_product,
                        is_monotone, l2_distance, l2_norm, read_curve_csv, read_curve_table,
                        write_curve_csv, write_curve_table)
from src.errors import DomainError, GridMismatchError


class TestProbGrid:
    """Test grid construction and quadrature weights."""

    def test_uniform_midpoints(self):
        grid = ProbGrid.uniform(4)
        assert np.allclose(grid.levels, [0.125, 0.375, 0.625, 0.875])
        assert grid.m == 4
        assert len(grid) == 4

    def test_uniform_weights_equal_one_over_m(self):
        grid = ProbGrid.uniform(101)
        assert np.allclose(grid.weights, 1.0 / 101)
        assert grid.weights.sum() == pytest.approx(1.0)

    def test_nonuniform_weights_are_cell_widths(self):
        grid = ProbGrid([0.1, 0.5, 0.7])
        # edges 0, 0.3, 0.6, 1
        assert np.allclose(grid.weights, [0.3, 0.3, 0.4])

    def test_invalid_levels(self):
        with pytest.raises(DomainError):
            ProbGrid([0.0, 0.5])
        with pytest.raises(DomainError):
            ProbGrid([0.5, 1.0])
        with pytest.raises(DomainError):
            ProbGrid([0.5, 0.4])
        with pytest.raises(DomainError):
            ProbGrid([0.5])
        with pytest.raises(DomainError):
            ProbGrid.uniform(1)

    def test_value_equality(self):
        assert ProbGrid.uniform(11) == ProbGrid.uniform(11)
        assert ProbGrid.uniform(11) != ProbGrid.uniform(12)
        assert hash(ProbGrid.uniform(11)) == hash(ProbGrid.uniform(11))

    def test_levels_are_read_only(self):
        grid = ProbGrid.uniform(5)
        with pytest.raises(ValueError):
            grid.levels[0] = 0.3


class TestQuantileCurve:
    """Test curve validation and geometry."""

    def test_wrong_length(self, grid):
        with pytest.raises(GridMismatchError):
            QuantileCurve(grid, np.zeros(grid.m + 1))

    def test_non_finite_values(self, grid):
        values = np.zeros(grid.m)
        values[3] = np.nan
        with pytest.raises(DomainError):
            QuantileCurve(grid, values)

    def test_norm_of_identity_curve(self):
        # integral of p^2 over (0,1) is 1/3, midpoint rule error O(1/m^2)
        grid = ProbGrid.uniform(1000)
        f = QuantileCurve(grid, grid.levels)
        assert l2_norm(f) ** 2 == pytest.approx(1.0 / 3.0, abs=1e-6)

    def test_distance_properties(self, grid):
        f = QuantileCurve(grid, grid.levels)
        g = QuantileCurve(grid, 2.0 * grid.levels + 1.0)
        assert l2_distance(f, f) == 0.0
        assert l2_distance(f, g) == pytest.approx(l2_distance(g, f))
        assert l2_distance(f, g) == pytest.approx(l2_norm(QuantileCurve(grid, g.values - f.values)))

    def test_triangle_inequality(self, grid, rng):
        for _ in range(100):
            f, g, h = (QuantileCurve(grid, np.sort(rng.normal(size=grid.m))) for _ in range(3))
            assert l2_distance(f, h) <= l2_distance(f, g) + l2_distance(g, h) + 1e-12

    def test_inner_product_matches_norm(self, grid):
        f = QuantileCurve(grid, np.linspace(-1, 2, grid.m))
        assert inner_product(f, f) == pytest.approx(l2_norm(f) ** 2)

    def test_mismatched_grids(self):
        f = QuantileCurve(ProbGrid.uniform(5), np.arange(5.0))
        g = QuantileCurve(ProbGrid.uniform(6), np.arange(6.0))
        with pytest.raises(GridMismatchError):
            l2_distance(f, g)
        with pytest.raises(GridMismatchError):
            curve_matrix([f, g])

    def test_scaled(self, grid):
        f = QuantileCurve(grid, grid.levels)
        assert np.allclose(f.scaled(3.0).values, 3.0 * grid.levels)


class TestMonotoneAndEval:
    """Test monotonicity checks and level evaluation."""

    def test_is_monotone(self, grid):
        assert is_monotone(QuantileCurve(grid, np.arange(grid.m, dtype=float)))
        assert is_monotone(QuantileCurve(grid, np.ones(grid.m)))
        dip = np.arange(grid.m, dtype=float)
        dip[5] = dip[4] - 1e-6
        curve = QuantileCurve(grid, dip)
        assert not is_monotone(curve)
        assert is_monotone(curve, tol=1e-3)

    def test_negative_tolerance(self, grid):
        with pytest.raises(DomainError):
            is_monotone(QuantileCurve(grid, grid.levels), tol=-1.0)

    def test_eval_at_grid_level_is_exact(self):
        grid = ProbGrid.uniform(10)
        curve = QuantileCurve(grid, np.arange(10.0) ** 2)
        assert eval_at(curve, 0.35) == 9.0

    def test_eval_at_interpolates_and_clamps(self):
        grid = ProbGrid.uniform(10)
        curve = QuantileCurve(grid, np.arange(10.0))
        assert eval_at(curve, 0.4) == pytest.approx(3.5)
        assert eval_at(curve, 0.01) == 0.0
        assert eval_at(curve, 0.99) == 9.0

    def test_eval_at_rejects_out_of_range(self, grid):
        curve = QuantileCurve(grid, grid.levels)
        for p in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(DomainError):
                eval_at(curve, p)


class TestCurvePersistence:
    """Test CSV output of curves."""

    def test_curve_csv(self, tmp_path, grid):
        curve = QuantileCurve(grid, np.sin(grid.levels) / 3.0)
        path = tmp_path / "curve.csv"
        write_curve_csv(path, curve)
        assert path.read_text().splitlines()[0] == "p,value"
        loaded = read_curve_csv(path)
        assert loaded.grid == grid
        assert np.array_equal(loaded.values, curve.values)

    def test_curve_table_keeps_input_order(self, tmp_path, grid):
        xs = np.array([[0.3, 0.1], [0.1, 0.2]])
        curves = [QuantileCurve(grid, grid.levels), QuantileCurve(grid, 2 * grid.levels)]
        path = tmp_path / "table.csv"
        write_curve_table(path, xs, curves)
        assert path.read_text().splitlines()[0] == "x1,x2,p,value"
        loaded_x, loaded = read_curve_table(path)
        assert np.array_equal(loaded_x, xs)
        assert np.array_equal(loaded[1].values, curves[1].values)
