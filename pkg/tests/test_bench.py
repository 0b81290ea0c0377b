import numpy as np
import pytest

from droc.bench import (
    FIGURE_COLUMNS,
    constant_control_baseline,
    figure_rows,
    format_table,
    load_case,
    reference_consistency,
    reproduce_trajectories,
    reproduce_worst_case,
    run_checks,
)


@pytest.fixture(scope="module")
def biomass(case):
    return reproduce_trajectories(case)


def test_case_loads_reference_data(case):
    assert case.name == "fedbatch"
    assert case.params.S_star == 100.0
    assert case.reference_control.shape == (25,)
    assert case.reference_biomass.shape == (10,) and case.reference_q.shape == (10,)
    assert (case.J_star, case.J_tilde_star) == (-4.0232, -4.1217)
    assert case.spec.p_lower == pytest.approx(0.8 * 2.2) and case.spec.p_upper == pytest.approx(1.2 * 2.2)


def test_printed_numbers_are_consistent(case):
    cons = reference_consistency(case)
    assert cons["expected_cost"] == pytest.approx(-4.1217, abs=1e-3)
    assert cons["mean"] == pytest.approx(2.2, abs=1e-3)
    assert cons["second_moment"] == pytest.approx(4.88, abs=1e-3)


def test_reference_control_in_box(case):
    assert np.all((case.reference_control >= 0.0) & (case.reference_control <= 0.04))


def test_terminal_biomass_reproduced(case, biomass):
    assert biomass[0] == pytest.approx(4.1605, abs=2e-3)
    assert biomass[-1] == pytest.approx(3.8637, abs=2e-3)
    np.testing.assert_allclose(biomass, case.reference_biomass, atol=2e-3)


def test_biomass_decreases_past_the_peak(biomass):
    assert np.all(np.diff(biomass[2:]) < 0)


def test_worst_case_is_three_point_mirror_of_printed(case, biomass):
    q, obj = reproduce_worst_case(case, biomass)
    assert np.count_nonzero(q > 1e-10) == 3
    # the LP optimum is the printed q* with the support order reversed
    np.testing.assert_allclose(q, case.reference_q[::-1], atol=1e-3)
    assert obj == pytest.approx(-4.1107, abs=1e-3)


def test_constant_feed_baseline(case, biomass):
    _, ref_obj = reproduce_worst_case(case, biomass)
    base = constant_control_baseline(case, 0.01)
    assert base.objective > ref_obj
    assert base.spread > biomass.max() - biomass.min()


def test_no_feed_keeps_volume(case):
    base = constant_control_baseline(case, 0.0)
    assert np.all(base.terminal_states[:, 2] == 3.0)


def test_figure_rows(case):
    rows = figure_rows(case, case.reference_grid(), steps_per_piece=2)
    assert len(FIGURE_COLUMNS) == 6
    assert len(rows) == 10 * 51
    assert rows[0] == (0.0, 1, 1.76, 0.1, 20.0, 3.0)
    assert rows[50][0] == pytest.approx(25.0)


def test_check_table_flags_printed_lp_rows(case):
    checks = {c.name: c.passed for c in run_checks(case)}
    assert checks["terminal biomass"] and checks["constant 0.01 worse than reference"]
    assert not checks["LP on printed biomass: objective"]
    table = format_table(run_checks(case, solve_fn=lambda: (-4.2, -4.25)))
    assert "PASS  solve objective <= -4.0" in table


def test_load_case_from_path(tmp_path, case):
    from importlib import resources
    text = resources.files("droc").joinpath("data/fedbatch.json").read_text()
    path = tmp_path / "case.json"
    path.write_text(text)
    assert load_case(path).reference_biomass.tolist() == case.reference_biomass.tolist()
