import pytest

import numpy as np

from src.envelope import (
    BeliefGrid,
    ProductGrid,
    ValueField,
    cav,
    concavify_line,
    concavify_lines,
    is_concave,
    is_convex,
    vex,
)
from src.game_model import UnsupportedDimensionError


def brute_force_cav(y):
    """Concave majorant on 0..n-1 as the best chord over every bracketing pair."""
    n = len(y)
    out = np.array(y, dtype=float)
    for i in range(n):
        for a in range(i + 1):
            for b in range(i, n):
                if a < b:
                    out[i] = max(out[i], (y[a] * (b - i) + y[b] * (i - a)) / (b - a))
    return out


@pytest.mark.dependency()
class TestBeliefGrid:
    """Layout, indexing and interpolation of the simplex grid."""

    @pytest.mark.dependency()
    def test_sizes_and_layout(self):
        grid = BeliefGrid(2, 4)
        assert grid.size == 5
        assert np.allclose(grid.points[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])
        grid3 = BeliefGrid(3, 4)
        assert grid3.size == 15
        assert np.array_equal(grid3.index_of(grid3.counts), np.arange(15))
        assert len(grid3.lines) == 9
        with pytest.raises(ValueError):
            BeliefGrid(2, 0)

    @pytest.mark.dependency(depends=["TestBeliefGrid::test_sizes_and_layout"])
    def test_shift(self):
        grid = BeliefGrid(2, 4)
        valid, target = grid.shift(0, 1)
        assert not valid[0]
        assert np.array_equal(target[1:], [0, 1, 2, 3])

    @pytest.mark.dependency(depends=["TestBeliefGrid::test_sizes_and_layout"])
    def test_stencil_reproduces_affine_functions(self):
        rng = np.random.default_rng(0)
        for n_states, m in ((2, 7), (3, 6)):
            grid = BeliefGrid(n_states, m)
            slope = rng.normal(size=n_states)
            field = ValueField(grid, grid.points @ slope)
            beliefs = rng.dirichlet(np.ones(n_states), size=50)
            assert np.allclose(field.evaluate(beliefs), beliefs @ slope, atol=1e-12)
            assert isinstance(field.evaluate(beliefs[0]), float)

    @pytest.mark.dependency(depends=["TestBeliefGrid::test_sizes_and_layout"])
    def test_stencil_at_grid_points(self):
        grid = BeliefGrid(2, 4)
        idx, w = grid.stencil([[0.25, 0.75], [1.0, 0.0]])
        assert idx[0, np.argmax(w[0])] == 1
        assert idx[1, np.argmax(w[1])] == 4
        assert np.allclose(w.sum(axis=1), 1.0)

    @pytest.mark.dependency(depends=["TestBeliefGrid::test_sizes_and_layout"])
    def test_stencil_errors(self):
        grid = BeliefGrid(2, 4)
        with pytest.raises(ValueError, match="outside the simplex"):
            grid.stencil([[0.7, 0.5]])
        with pytest.raises(ValueError, match="coordinates"):
            grid.stencil([[0.2, 0.3, 0.5]])
        with pytest.raises(UnsupportedDimensionError):
            BeliefGrid(4, 3).stencil([[0.25, 0.25, 0.25, 0.25]])


@pytest.mark.dependency()
class TestEnvelopes:
    """cav and vex of sampled functions."""

    @pytest.mark.dependency()
    def test_line_against_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            y = rng.normal(size=int(rng.integers(3, 15)))
            assert np.allclose(concavify_line(y), brute_force_cav(y), atol=1e-12)

    @pytest.mark.dependency(depends=["TestEnvelopes::test_line_against_brute_force"])
    def test_batched_lines_match_single(self):
        rng = np.random.default_rng(2)
        Y = rng.normal(size=(20, 11))
        batched = concavify_lines(Y)
        for k in range(len(Y)):
            assert np.allclose(batched[k], concavify_line(Y[k]), atol=1e-12)

    @pytest.mark.dependency(depends=["TestEnvelopes::test_line_against_brute_force"])
    def test_concave_rows_untouched(self):
        y = -np.linspace(-1.0, 1.0, 9) ** 2
        assert np.array_equal(concavify_line(y), y)

    @pytest.mark.dependency(depends=["TestEnvelopes::test_line_against_brute_force"])
    def test_two_state_properties(self):
        """Dominance, concavity and idempotence"""
        rng = np.random.default_rng(3)
        grid = BeliefGrid(2, 40)
        field = ValueField(grid, rng.normal(size=grid.size))
        hull = cav(field)
        assert np.all(hull.values >= field.values)
        assert is_concave(hull).ok
        assert cav(hull).sup_distance(hull) <= 1e-12
        assert np.allclose(vex(field).values, -cav(field.with_values(-field.values)).values)
        assert is_convex(vex(field)).ok

    @pytest.mark.dependency(depends=["TestEnvelopes::test_two_state_properties"])
    def test_three_state_vertex_spikes(self):
        """cav of a function living on the vertices is the affine interpolant"""
        grid = BeliefGrid(3, 6)
        corners = np.array([1.0, 2.0, 3.0])
        values = np.zeros(grid.size)
        for s in range(3):
            values[np.flatnonzero(grid.counts[:, s] == 6)] = corners[s]
        hull = cav(ValueField(grid, values))
        assert np.allclose(hull.values, grid.points @ corners, atol=1e-10)

    @pytest.mark.dependency(depends=["TestEnvelopes::test_two_state_properties"])
    def test_three_state_random(self):
        rng = np.random.default_rng(4)
        grid = BeliefGrid(3, 5)
        field = ValueField(grid, rng.uniform(size=grid.size))
        hull = cav(field)
        assert np.all(hull.values >= field.values - 1e-15)
        assert is_concave(hull, tol=1e-8).ok
        assert cav(hull).sup_distance(hull) <= 1e-8

    @pytest.mark.dependency(depends=["TestEnvelopes::test_two_state_properties"])
    def test_four_states_rejected(self):
        grid = BeliefGrid(4, 2)
        with pytest.raises(UnsupportedDimensionError):
            cav(ValueField(grid, np.zeros(grid.size)))


def test_is_concave_reports_worst_point():
    grid = BeliefGrid(2, 4)
    check = is_concave(ValueField(grid, grid.points[:, 0] ** 2))
    assert not check.ok
    assert check.worst_violation == pytest.approx(0.125)
    assert np.allclose(check.worst_point, [0.25, 0.75])
    assert is_concave(ValueField(BeliefGrid(2, 1), [0.0, 1.0])).ok


def test_value_field_validation():
    grid = BeliefGrid(2, 4)
    with pytest.raises(ValueError, match="grid has 5 points"):
        ValueField(grid, np.zeros(4))
    with pytest.raises(ValueError, match="finite"):
        ValueField(grid, [0.0, np.nan, 0.0, 0.0, 0.0])
    frame = ValueField(grid, np.arange(5.0)).to_frame()
    assert list(frame.columns) == ['p_s1', 'p_s2', 'value']


def test_product_grid():
    grid = ProductGrid(10, 8)
    x1, x2 = grid.mesh
    V = np.sin(6.0 * x1) * np.cos(5.0 * x2)
    hull = grid.cav_p1(V)
    assert np.all(hull >= V - 1e-15)
    assert grid.concavity_violation_p1(hull) <= 1e-12
    assert grid.convexity_violation_p2(grid.vex_p2(V)) <= 1e-12
    assert grid.concavity_violation_p1(V) > 0.0
    assert grid.evaluate(V, 0.3, 0.25)[0] == pytest.approx(V[3, 2])
    bilinear = x1 + 2.0 * x2
    assert grid.evaluate(bilinear, 0.33, 0.61)[0] == pytest.approx(0.33 + 1.22)
    with pytest.raises(ValueError, match="outside"):
        grid.evaluate(V, 1.5, 0.0)
    assert list(grid.to_frame(V).columns) == ['p1', 'p2', 'value']
