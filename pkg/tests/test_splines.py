import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ufpfts.splines import (SplineDomainError, basis_matrix, bin_basis, eval_basis,
                            make_basis)


def cox_de_boor(knots, i, p, x, right_end):
    """Textbook recursion, written independently of the package kernels."""
    if p == 0:
        if knots[i] <= x < knots[i + 1]:
            return 1.0
        # right endpoint belongs to the last non-empty span
        if x == right_end and knots[i] < knots[i + 1] == right_end:
            return 1.0
        return 0.0
    left = right = 0.0
    d1 = knots[i + p] - knots[i]
    if d1 > 0:
        left = (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x, right_end)
    d2 = knots[i + p + 1] - knots[i + 1]
    if d2 > 0:
        right = (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x, right_end)
    return left + right


@pytest.mark.parametrize("degree,n_int,expected", [(3, 3, 7), (2, 3, 6), (3, 0, 4)])
def test_make_basis_sizes(degree, n_int, expected):
    b = make_basis(degree, (1, 102), n_int)
    assert b.n_basis == expected
    assert np.all(b.knots[:degree + 1] == 1) and np.all(b.knots[-degree - 1:] == 102)
    if n_int == 0:
        assert b.interior_knots.size == 0


def test_make_basis_errors():
    with pytest.raises(ValueError):
        make_basis(-1, (1, 10), 2)
    with pytest.raises(ValueError):
        make_basis(3, (5, 5), 2)
    with pytest.raises(ValueError):
        make_basis(3, (1, 10), -1)


def test_endpoints():
    b = make_basis(3, (1, 102), 3)
    left = eval_basis(b, 1.0)
    right = eval_basis(b, 102.0)
    np.testing.assert_array_equal(left, np.eye(7)[0])
    np.testing.assert_array_equal(right, np.eye(7)[-1])
    np.testing.assert_array_equal(basis_matrix(b, [1, 102]), np.eye(7)[[0, -1]])


def test_linear_hat_midpoint():
    b = make_basis(1, (0, 4), 3)          # knots at 0,1,2,3,4
    v = eval_basis(b, 1.5)
    assert v[1] == pytest.approx(0.5) and v[2] == pytest.approx(0.5)
    assert np.count_nonzero(v) == 2


def test_partition_of_unity_and_support():
    b = make_basis(3, (1, 102), 3)
    x = np.random.default_rng(0).uniform(1, 102, 1000)
    M = basis_matrix(b, x)
    assert np.max(np.abs(M.sum(axis=1) - 1)) < 1e-12
    assert np.all(M >= 0)
    assert np.all((M > 0).sum(axis=1) <= 4)


def test_full_grid_matrix():
    b = bin_basis(102, 7, 3)
    M = basis_matrix(b, np.arange(1, 103))
    assert M.shape == (102, 7)
    np.testing.assert_allclose(M.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_array_equal(basis_matrix(b, [37.3])[0], eval_basis(b, 37.3))


@pytest.mark.parametrize("degree,n_int", [(3, 3), (2, 3), (3, 0), (1, 4), (2, 7)])
def test_matches_naive_recursion(degree, n_int):
    b = make_basis(degree, (1, 40), n_int)
    xs = np.concatenate([np.linspace(1, 40, 157), b.interior_knots])
    M = basis_matrix(b, xs)
    ref = np.array([[cox_de_boor(b.knots, i, degree, x, 40.0) for i in range(b.n_basis)]
                    for x in xs])
    np.testing.assert_allclose(M, ref, atol=1e-12, rtol=0)


def _second_diff_jump(b, k, h=1e-4):
    def d2(x):
        m = basis_matrix(b, [x - h, x, x + h])
        return (m[2] - 2 * m[1] + m[0]) / h ** 2
    return np.abs(d2(k + 2 * h) - d2(k - 2 * h))


def test_cubic_is_c2_across_knots():
    b = make_basis(3, (1, 102), 3)
    for k in b.interior_knots:
        assert np.all(_second_diff_jump(b, k) < 1e-6)
        v_l, v_r = basis_matrix(b, [k - 1e-9, k + 1e-9])
        np.testing.assert_allclose(v_l, v_r, atol=1e-8)


def test_quadratic_second_derivative_jumps():
    # control: the same check must detect the C1-only quadratic basis
    b = make_basis(2, (1, 102), 3)
    assert max(_second_diff_jump(b, k).max() for k in b.interior_knots) > 1e-4


def test_domain_errors():
    b = make_basis(3, (1, 102), 3)
    with pytest.raises(SplineDomainError):
        eval_basis(b, 0.5)
    with pytest.raises(SplineDomainError):
        basis_matrix(b, [1, 50, 102.0001])
    with pytest.raises(SplineDomainError):
        eval_basis(b, np.nan)


def test_explicit_knots_and_roundtrip():
    b = bin_basis(40, 6, 2, knots=[10, 20, 30])
    np.testing.assert_array_equal(b.interior_knots, [10, 20, 30])
    b2 = type(b).from_dict(b.to_dict())
    np.testing.assert_array_equal(b.knots, b2.knots)
    with pytest.raises(ValueError):
        bin_basis(40, 7, 2, knots=[10, 20, 30])


@settings(max_examples=60, deadline=None)
@given(degree=st.integers(0, 4), n_int=st.integers(0, 8),
       x=st.floats(0, 1, allow_nan=False))
def test_partition_of_unity_property(degree, n_int, x):
    b = make_basis(degree, (1, 50), n_int)
    v = eval_basis(b, 1 + 49 * x)
    assert abs(v.sum() - 1) < 1e-12
    assert np.count_nonzero(v) <= degree + 1
