import math

import numpy as np
import pytest

from conftest import scalar_grid
from droc.control import uniform_grid
from droc.dynamics import ControlBox, linear_toy
from droc.errors import MissingSensitivities
from droc.integrator import (
    build_mesh,
    cost_gradient,
    integrate,
    integrate_batch,
    integrate_many_controls,
    integrate_with_sensitivities,
)


def test_exponential_growth_100_steps():
    traj = integrate(linear_toy(a=1.0, x0=1.0), scalar_grid(1, values=[[0.0]]), 0.0, steps_per_piece=100)
    assert traj.terminal_states[0, 0] == pytest.approx(math.e, abs=1e-8)


def test_constant_rate_is_exact():
    traj = integrate(linear_toy(), scalar_grid(1, values=[[0.3]]), 0.0)
    assert traj.terminal_states[0, 0] == pytest.approx(0.3, abs=1e-15)


def test_rk4_fourth_order_ratio():
    model = linear_toy(a=1.0, x0=1.0)
    grid = scalar_grid(1, values=[[0.0]])
    e1 = abs(integrate(model, grid, 0.0, 10).terminal_states[0, 0] - math.e)
    e2 = abs(integrate(model, grid, 0.0, 20).terminal_states[0, 0] - math.e)
    assert 12.0 <= e1 / e2 <= 20.0


def test_table1_first_scenario(fb_model, table1_grid):
    traj = integrate(fb_model, table1_grid, 1.76)
    assert traj.terminal_states[0, 0] == pytest.approx(4.1605, abs=2e-3)


def test_mesh_contains_breakpoints():
    bp = np.array([0.0, 0.1, 0.55, 1.0])
    mesh, piece = build_mesh(bp, 4)
    assert set(bp) <= set(mesh)
    assert mesh.size == 13 and piece.size == 12
    assert np.all(np.diff(piece) >= 0)


def test_initial_state_and_zero_initial_sensitivity(fb_model, table1_grid, fb_support):
    traj = integrate_batch(fb_model, table1_grid, fb_support.points, sensitivities=True, store_sensitivities=True)
    np.testing.assert_array_equal(traj.states[:, 0], np.tile(fb_model.x0, (10, 1)))
    assert np.all(traj.sensitivities[:, 0] == 0.0)


def test_single_piece_sensitivity_is_one():
    traj = integrate_with_sensitivities(linear_toy(), scalar_grid(1, values=[[0.2]]), 0.0)
    assert traj.terminal_sensitivity[0, 0, 0] == pytest.approx(1.0, abs=1e-15)


def test_two_piece_sensitivities_are_half():
    traj = integrate_with_sensitivities(linear_toy(), scalar_grid(2, values=[[0.2], [0.1]]), 0.0)
    np.testing.assert_allclose(traj.terminal_sensitivity[0, 0], [0.5, 0.5], atol=1e-15)


def test_cost_gradient_toys():
    grid = scalar_grid(1, values=[[0.2]])
    traj = integrate_with_sensitivities(linear_toy(cost="neg"), grid, 0.0)
    assert cost_gradient(linear_toy(cost="neg"), traj) == pytest.approx([-1.0])
    traj = integrate_with_sensitivities(linear_toy(cost="zero"), grid, 0.0)
    np.testing.assert_array_equal(cost_gradient(linear_toy(cost="zero"), traj), [0.0])


def test_cost_gradient_needs_sensitivities():
    traj = integrate(linear_toy(), scalar_grid(1, values=[[0.2]]), 0.0)
    with pytest.raises(MissingSensitivities):
        cost_gradient(linear_toy(), traj)


def _fd_terminal(model, grid, p, j, step):
    v = grid.flat()
    out = []
    for sign in (1.0, -1.0):
        w = v.copy()
        w[j] += sign * step
        out.append(integrate(model, grid.with_values(w), p).terminal_states[0])
    return (out[0] - out[1]) / (2.0 * step)


@pytest.mark.parametrize("p", [1.76, 2.2, 2.64])
def test_fedbatch_sensitivities_match_fd(fb_model, table1_grid, p):
    traj = integrate_with_sensitivities(fb_model, table1_grid, p)
    S = traj.terminal_sensitivity[0]
    grad = cost_gradient(fb_model, traj)
    for j in range(table1_grid.n_v):
        fd = _fd_terminal(fb_model, table1_grid, p, j, 1e-5)
        assert np.linalg.norm(fd - S[:, j]) <= 1e-4 * np.linalg.norm(S[:, j])
        assert abs(-fd[0] - grad[j]) <= 1e-4 * abs(grad[j])


def test_threads_do_not_change_results(fb_model, table1_grid, fb_support):
    a = integrate_batch(fb_model, table1_grid, fb_support.points, sensitivities=True)
    b = integrate_batch(fb_model, table1_grid, fb_support.points, sensitivities=True, threads=3)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.terminal_sensitivity, b.terminal_sensitivity)


def test_many_controls_matches_one_at_a_time(fb_model, case, fb_support, rng):
    grid = case.grid()
    values = rng.uniform(0.0, 0.04, (3, 25, 1))
    batch = integrate_many_controls(fb_model, grid, values, fb_support.points)
    for i in range(3):
        one = integrate_batch(fb_model, grid.with_values(values[i].ravel()), fb_support.points)
        np.testing.assert_allclose(batch[i], one.terminal_states, rtol=1e-13)


def test_volume_tracks_feed_exactly(fb_model, case, fb_support):
    values = np.full((25, 1), 0.02)
    traj = integrate_batch(fb_model, case.grid(values), fb_support.points)
    np.testing.assert_allclose(traj.terminal_states[:, 2], 3.0 + 25.0 * 0.02, rtol=0, atol=1e-13)
    box = ControlBox([0.0], [0.04])
    none = integrate_batch(fb_model, uniform_grid(25, box, np.zeros((25, 1))), fb_support.points)
    assert np.all(none.terminal_states[:, 2] == 3.0)
