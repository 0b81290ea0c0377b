import numpy as np
import pytest
from hypothesis import given, strategies as st

from droc.control import ControlGrid, direction_index, eval_control, flat_index, project_to_box, uniform_grid
from droc.dynamics import ControlBox
from droc.errors import OutOfDomain

BOX = ControlBox([0.0], [0.04])


def test_table1_value_at_half(table1_grid):
    assert eval_control(table1_grid, 0.5)[0] == pytest.approx(0.0041)


def test_single_piece_is_constant():
    grid = uniform_grid(1, BOX, [[0.02]])
    for t in (0.0, 0.3, 1.0):
        assert eval_control(grid, t)[0] == 0.02


def test_right_continuous_at_breakpoints(table1_grid):
    t_k = table1_grid.breakpoints[4]
    assert eval_control(table1_grid, t_k)[0] == table1_grid.values[4, 0]
    assert eval_control(table1_grid, 1.0)[0] == table1_grid.values[-1, 0]


def test_time_outside_unit_interval():
    with pytest.raises(OutOfDomain):
        eval_control(uniform_grid(3, BOX), 1.5)


@pytest.mark.parametrize("j,n_u,expected", [(7, 1, (7, 1)), (3, 2, (2, 1)), (4, 2, (2, 2))])
def test_direction_index_examples(j, n_u, expected):
    assert direction_index(j, n_u) == expected


@pytest.mark.parametrize("n_u", [1, 2, 3])
def test_direction_index_inverts_flattening(n_u):
    # brute-force oracle: label every entry of v = [v^1_1, ..., v^1_nu, v^2_1, ...]
    labels = [(k, l) for k in range(1, 11) for l in range(1, n_u + 1)]
    for j, label in enumerate(labels, start=1):
        assert direction_index(j, n_u) == label
        assert flat_index(*label, n_u) == j


def test_projection_clamps():
    grid = uniform_grid(3, BOX)
    out = project_to_box(grid, [[-0.1], [0.02], [0.05]])
    np.testing.assert_array_equal(out.values[:, 0], [0.0, 0.02, 0.04])


@given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=12))
def test_projection_is_idempotent_and_feasible(raw):
    grid = uniform_grid(len(raw), BOX)
    once = project_to_box(grid, np.array(raw)[:, None])
    twice = project_to_box(grid, once.values)
    assert BOX.contains(once.values)
    np.testing.assert_array_equal(once.values, twice.values)


def test_grid_invariants():
    with pytest.raises(ValueError):
        ControlGrid(np.array([0.0, 0.6, 0.5, 1.0]), np.zeros((3, 1)), BOX)
    with pytest.raises(OutOfDomain):
        uniform_grid(2, BOX, [[0.0], [0.05]])
