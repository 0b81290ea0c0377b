import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as quad

from droc.ambiguity import (
    AmbiguitySpec,
    DiscreteSupport,
    build_moment_lp,
    characteristic_grid,
    discretize_density,
    mesh_width,
    moment_discretization_error,
    table_density,
    truncnorm_density,
    uniform_density,
)
from droc.errors import DimensionMismatch, InvalidDensity, MassMismatch, TooFewPoints

UNIT = AmbiguitySpec(0.5, 0.25, 0.0, 1.0)


def density_spec(psi, lo, hi):
    """Ambiguity set whose mean and variance are those of ``psi`` itself."""
    m1 = quad.quad(lambda p: p * psi(np.array([p]))[0], lo, hi, epsabs=1e-14)[0]
    m2 = quad.quad(lambda p: p * p * psi(np.array([p]))[0], lo, hi, epsabs=1e-14)[0]
    return AmbiguitySpec(m1, float(np.sqrt(m2 - m1**2)), lo, hi)


def test_benchmark_characteristic_grid(fb_spec):
    pts = characteristic_grid(fb_spec, 10).points
    expected = [1.76, 1.8578, 1.9556, 2.0533, 2.1511, 2.2489, 2.3467, 2.4444, 2.5422, 2.64]
    np.testing.assert_allclose(pts, expected, atol=5e-5)


@pytest.mark.parametrize("m,expected", [(2, [0.25, 0.75]), (4, [0.125, 0.375, 0.625, 0.875])])
def test_midpoint_grid(m, expected):
    np.testing.assert_allclose(characteristic_grid(UNIT, m, "midpoint").points, expected)


def test_each_point_in_its_cell(fb_spec):
    for m in (3, 10, 37):
        pts = characteristic_grid(fb_spec, m).points
        edges = np.linspace(fb_spec.p_lower, fb_spec.p_upper, m + 1)
        assert np.all(pts >= edges[:-1] - 1e-12) and np.all(pts <= edges[1:] + 1e-12)


def test_endpoint_grid_needs_three_points(fb_spec):
    with pytest.raises(TooFewPoints):
        characteristic_grid(fb_spec, 2)


def test_moment_vector_and_columns(fb_spec):
    data = build_moment_lp(fb_spec, DiscreteSupport([1.76, 2.2]), [0.0, 0.0])
    np.testing.assert_allclose(data.b, [1.0, 2.2, 4.88])
    spec = AmbiguitySpec(0.0, 1.0, -2.0, 2.0)
    data = build_moment_lp(spec, DiscreteSupport([0.0, 1.0]), [1.0, 2.0])
    np.testing.assert_array_equal(data.b, [1.0, 0.0, 1.0])
    np.testing.assert_array_equal(data.column(0), [1.0, 0.0, 0.0])


def test_cost_length_mismatch(fb_spec, fb_support):
    with pytest.raises(DimensionMismatch):
        build_moment_lp(fb_spec, fb_support, np.zeros(9))


def test_infeasible_moments_rejected():
    with pytest.raises(ValueError):
        AmbiguitySpec(0.5, 0.6, 0.0, 1.0)


@pytest.mark.parametrize("m", [2, 4])
def test_uniform_weights(m):
    _, w = discretize_density(UNIT, uniform_density(UNIT), m, mode="midpoint")
    np.testing.assert_allclose(w, np.full(m, 1.0 / m), atol=1e-14)


def test_truncnorm_weights_match_monte_carlo(fb_spec):
    _, w = discretize_density(fb_spec, truncnorm_density(fb_spec, 2.2, 0.2), 10)
    # independent oracle: rejection sampling from the untruncated normal
    rng = np.random.default_rng(7)
    draws = rng.normal(2.2, 0.2, 1_200_000)
    draws = draws[(draws >= 1.76) & (draws <= 2.64)][:1_000_000]
    hist, _ = np.histogram(draws, bins=np.linspace(1.76, 2.64, 11))
    np.testing.assert_allclose(w, hist / draws.size, atol=1e-3)


def test_uniform_midpoint_mean_is_exact():
    support, w = discretize_density(UNIT, uniform_density(UNIT), 2, mode="midpoint")
    assert moment_discretization_error(UNIT, support, w)[0] == pytest.approx(0.0, abs=1e-15)


def test_left_endpoint_error_within_bound():
    e1, _ = moment_discretization_error(UNIT, DiscreteSupport([0.0, 0.5]), [0.5, 0.5])
    assert e1 == pytest.approx(0.25)
    assert e1 <= mesh_width(UNIT, 2)


@pytest.mark.parametrize("mode", ["endpoints", "midpoint"])
@pytest.mark.parametrize("mu", [2.0, 2.2, 2.4])
def test_truncnorm_moment_errors_within_bounds(mode, mu):
    base = AmbiguitySpec(2.2, 0.2, 1.76, 2.64)
    psi = truncnorm_density(base, mu, 0.2)
    spec = density_spec(psi, 1.76, 2.64)
    for m in (10, 20, 40, 80):
        support, w = discretize_density(spec, psi, m, mode=mode)
        e1, e2 = moment_discretization_error(spec, support, w)
        dp = mesh_width(spec, m)
        assert e1 <= dp and e2 <= 2 * spec.p_upper * dp


@pytest.mark.parametrize("mode", ["endpoints", "midpoint"])
def test_asymmetric_first_moment_error_halves(mode):
    base = AmbiguitySpec(2.2, 0.2, 1.76, 2.64)
    psi = truncnorm_density(base, 2.4, 0.2)
    spec = density_spec(psi, 1.76, 2.64)
    errors = []
    for m in (10, 20, 40, 80):
        support, w = discretize_density(spec, psi, m, mode=mode)
        errors.append(moment_discretization_error(spec, support, w)[0])
    assert all(a >= 2.0 * b for a, b in zip(errors, errors[1:]))


def test_table_density(tmp_path):
    path = tmp_path / "psi.csv"
    path.write_text("p,psi\n0,1\n1,1\n")
    support, w = discretize_density(UNIT, table_density(path), 4, mode="midpoint")
    np.testing.assert_allclose(w, 0.25, atol=1e-12)


def test_negative_table_entry(tmp_path):
    path = tmp_path / "psi.csv"
    path.write_text("0,1\n0.5,-0.2\n1,1\n")
    with pytest.raises(InvalidDensity):
        table_density(path)


def test_unnormalized_density():
    with pytest.raises(MassMismatch):
        discretize_density(UNIT, lambda p: np.full(np.shape(p), 2.0), 4)


@given(st.integers(3, 60))
def test_weights_are_a_distribution(m):
    spec = AmbiguitySpec(2.2, 0.2, 1.76, 2.64)
    _, w = discretize_density(spec, truncnorm_density(spec, 2.2, 0.2), m)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0, abs=1e-12)
