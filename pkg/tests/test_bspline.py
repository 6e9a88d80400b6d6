import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from homog.bspline import SplineBasis, default_K, design_matrix, eval, eval_deriv
from homog.exceptions import InvalidBasis


def naive_basis(knots, k, order, u):
    """Textbook Cox-de Boor recursion for one function at one point."""
    if order == 1:
        last = k == len(knots) - 2 or knots[k + 1] == knots[-1] and knots[k] < knots[k + 1]
        if knots[k] <= u < knots[k + 1] or (u == knots[-1] and last and knots[k] < knots[k + 1]):
            return 1.0
        return 0.0
    out = 0.0
    d1 = knots[k + order - 1] - knots[k]
    d2 = knots[k + order] - knots[k + 1]
    if d1 > 0:
        out += (u - knots[k]) / d1 * naive_basis(knots, k, order - 1, u)
    if d2 > 0:
        out += (knots[k + order] - u) / d2 * naive_basis(knots, k + 1, order - 1, u)
    return out


def test_knot_vector_layout():
    b = SplineBasis(0.0, 1.0, 6, 4)
    assert b.knots.tolist() == [0, 0, 0, 0, 1 / 3, 2 / 3, 1, 1, 1, 1]
    assert b.n_spans == 3
    assert b.spacing == pytest.approx(1 / 3)


@pytest.mark.parametrize("a,b,K,s", [(0, 1, 3, 4), (1, 1, 5, 4), (2, 1, 5, 4), (0, 1, 5, 0)])
def test_invalid_bases(a, b, K, s):
    with pytest.raises(InvalidBasis):
        SplineBasis(a, b, K, s)


def test_endpoint_interpolation():
    b = SplineBasis(-2.0, 3.0, 9, 4)
    assert np.array_equal(eval(b, -2.0), np.eye(9)[0])
    assert np.array_equal(eval(b, 3.0), np.eye(9)[-1])


@pytest.mark.parametrize("s", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("K_extra", [0, 1, 6])
def test_matches_naive_recursion_and_scipy(s, K_extra):
    basis = SplineBasis(-1.3, 2.1, s + K_extra, s)
    u = np.linspace(-1.3, 2.1, 57)
    B = design_matrix(basis, u)
    naive = np.array([[naive_basis(basis.knots, k, s, x) for k in range(basis.K)] for x in u])
    assert np.abs(B - naive).max() < 1e-13
    ref = BSpline.design_matrix(u, basis.knots, s - 1).toarray()
    assert np.abs(B - ref).max() < 1e-13


def test_partition_of_unity_10000_points(rng):
    basis = SplineBasis(-2.4, 2.2, 11, 4)
    u = rng.uniform(-2.4, 2.2, 10_000)
    B = basis.design_matrix(u)
    assert np.abs(B.sum(axis=1) - 1).max() < 1e-12
    assert B.min() >= 0


@given(st.floats(-5, 5), st.floats(0.1, 10), st.integers(1, 6), st.integers(0, 8),
       st.lists(st.floats(0, 1), min_size=1, max_size=20))
@settings(max_examples=60, deadline=None)
def test_partition_of_unity_property(a, width, s, extra, fracs):
    basis = SplineBasis(a, a + width, s + extra, s)
    u = a + width * np.array(fracs)
    B = basis.design_matrix(u)
    assert np.abs(B.sum(axis=1) - 1).max() < 1e-12
    assert (B >= -1e-15).all()
    assert ((B > 0).sum(axis=1) <= s).all()


def test_derivative_matches_central_differences(rng):
    basis = SplineBasis(-1.0, 2.0, 10, 4)
    u = rng.uniform(-0.99, 1.99, 500)
    h = 1e-6
    fd = (basis.design_matrix(u + h) - basis.design_matrix(u - h)) / (2 * h)
    assert np.abs(basis.deriv_matrix(u) - fd).max() < 1e-6


def test_derivative_rows_sum_to_zero(rng):
    basis = SplineBasis(0.0, 1.0, 8, 4)
    D = basis.deriv_matrix(rng.uniform(0, 1, 200))
    assert np.abs(D.sum(axis=1)).max() < 1e-10


def test_derivative_against_scipy_spline(rng):
    basis = SplineBasis(-1.0, 1.0, 7, 4)
    theta = rng.normal(size=7)
    spl = BSpline(basis.knots, theta, 3)
    u = np.linspace(-1, 1, 41)
    assert np.allclose(basis.deriv_matrix(u) @ theta, spl.derivative()(u), atol=1e-12)
    assert np.allclose(eval_deriv(basis, 0.3) @ theta, spl.derivative()(0.3), atol=1e-12)


def test_clamping_outside_range():
    basis = SplineBasis(0.0, 1.0, 6, 4)
    assert np.array_equal(basis.design_matrix([-3.0]), basis.design_matrix([0.0]))
    assert np.array_equal(basis.design_matrix([7.0]), basis.design_matrix([1.0]))
    assert np.array_equal(basis.deriv_matrix([7.0]), basis.deriv_matrix([1.0]))


def test_empty_input_shapes():
    basis = SplineBasis(0.0, 1.0, 6, 4)
    assert basis.design_matrix([]).shape == (0, 6)
    assert basis.deriv_matrix([]).shape == (0, 6)


def test_reproduces_cubic_polynomials_exactly():
    basis = SplineBasis(-1.0, 2.0, 9, 4)
    u = np.linspace(-1, 2, 301)
    B = basis.design_matrix(u)
    target = 0.5 - u + 2 * u ** 2 - 0.3 * u ** 3
    coef, *_ = np.linalg.lstsq(B, target, rcond=None)
    assert np.abs(B @ coef - target).max() < 1e-10


def test_default_knot_count():
    assert default_K(30, 400) == 11
    assert default_K(1, 1) == 5
    assert default_K(90, 800, 3) == 3 + round((72000) ** 0.2)
