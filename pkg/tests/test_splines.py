import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from tivac.errors import ConfigError
from tivac.splines import (
    SplineSpec,
    basis_matrix,
    difference_matrix,
    difference_penalty,
    eval_basis,
    make_spec,
)


def test_bezier_knots():
    spec = make_spec(0, 10, 0, 4)
    assert spec.knots == (0, 0, 0, 0, 10, 10, 10, 10)
    assert spec.q == 4


def test_interior_knots_equally_spaced():
    spec = make_spec(0, 10, 4, 4)
    np.testing.assert_allclose(spec.interior_knots, [2, 4, 6, 8])
    assert spec.q == 8


def test_too_few_functions():
    with pytest.raises(ConfigError):
        make_spec(0, 10, 0, 2)


def test_spec_round_trip():
    spec = make_spec(1.5, 9.0, 3, 3)
    assert SplineSpec.from_dict(spec.to_dict()) == spec


def test_clamped_left_end():
    np.testing.assert_array_equal(eval_basis(make_spec(0, 1, 0, 4), 0.0), [1, 0, 0, 0])


def test_bernstein_midpoint():
    # cubic Bernstein polynomials at 1/2: C(3,k)/8
    np.testing.assert_allclose(eval_basis(make_spec(0, 1, 0, 4), 0.5), [0.125, 0.375, 0.375, 0.125], atol=1e-15)


def test_endpoints_rows():
    spec = make_spec(0, 7, 5, 4)
    B = basis_matrix(spec, [0.0, 7.0])
    expected = np.zeros((2, spec.q))
    expected[0, 0] = 1
    expected[1, -1] = 1
    np.testing.assert_array_equal(B, expected)


def test_rows_match_pointwise():
    spec = make_spec(0, 1, 2, 4)
    t = np.random.default_rng(0).uniform(0, 1, 5)
    B = basis_matrix(spec, t)
    for j in range(5):
        np.testing.assert_array_equal(B[j], eval_basis(spec, t[j]))


def test_out_of_range():
    spec = make_spec(0, 1, 2, 4)
    with pytest.raises(ConfigError):
        eval_basis(spec, 1.0 + 1e-9)
    with pytest.raises(ConfigError):
        basis_matrix(spec, [-0.1, 0.5])


@pytest.mark.parametrize("order, nknots", [(2, 1), (3, 4), (4, 10), (5, 7)])
def test_matches_scipy_design_matrix(order, nknots):
    spec = make_spec(-3.0, 11.0, nknots, order)
    t = np.random.default_rng(order).uniform(-3.0, 11.0, 200)
    t = np.append(t, [-3.0])
    oracle = BSpline.design_matrix(t, np.asarray(spec.knots), order - 1).toarray()
    np.testing.assert_allclose(basis_matrix(spec, t), oracle, atol=1e-13)


def test_partition_of_unity_1000_times():
    spec = make_spec(0, 500, 10, 4)
    t = np.random.default_rng(1).uniform(0, 500, 1000)
    B = basis_matrix(spec, t)
    assert np.max(np.abs(B.sum(axis=1) - 1)) < 1e-12
    assert B.min() >= 0


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 12),
    st.integers(2, 5),
    st.floats(0, 1),
    st.floats(-50, 50),
    st.floats(0.5, 100),
)
def test_basis_properties(nknots, order, frac, lo, width):
    if nknots + order < 3:
        return
    spec = make_spec(lo, lo + width, nknots, order)
    t = lo + frac * width
    b = eval_basis(spec, min(t, lo + width))
    assert abs(b.sum() - 1) < 1e-12
    assert b.min() >= 0
    nz = np.flatnonzero(b > 0)
    assert nz.size <= order
    assert nz.size == 0 or nz[-1] - nz[0] + 1 == nz.size


def test_penalty_q3():
    np.testing.assert_array_equal(difference_penalty(3, 2).matrix, [[1, -2, 1], [-2, 4, -2], [1, -2, 1]])


def test_difference_rows():
    np.testing.assert_array_equal(difference_matrix(4, 2), [[1, -2, 1, 0], [0, 1, -2, 1]])


@pytest.mark.parametrize("q", [3, 5, 14, 20])
def test_penalty_null_space(q):
    P = difference_penalty(q, 2).matrix
    c = np.full(q, 3.7)
    ramp = np.arange(1.0, q + 1)
    pen = difference_penalty(q, 2)
    assert pen.quadratic_form(c) == 0
    assert pen.quadratic_form(ramp) == 0
    # the explicit matrix agrees up to rounding
    assert abs(c @ P @ c) < 1e-12 and abs(ramp @ P @ ramp) < 1e-9


@pytest.mark.parametrize("q, d", [(5, 1), (14, 2), (9, 3)])
def test_penalty_spectrum(q, d):
    P = difference_penalty(q, d).matrix
    assert np.array_equal(P, P.T)
    ev = np.linalg.eigvalsh(P)
    assert ev.min() >= -1e-12
    assert int(np.sum(np.abs(ev) < 1e-10)) == d


def test_penalty_needs_q_above_order():
    with pytest.raises(ConfigError):
        difference_penalty(2, 2)
    with pytest.raises(ConfigError):
        difference_penalty(5, 4)
