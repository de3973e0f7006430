import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ncs_stability.matrix_core import (
    check_matrix,
    check_symmetric,
    elementwise_abs,
    is_definite,
    jacobi_eigenvalues,
    max_eigenvalue,
    min_eigenvalue,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def random_symmetric(rng, n):
    A = rng.normal(size=(n, n))
    return A + A.T


def test_jacobi_diagonal_and_2x2():
    assert np.allclose(jacobi_eigenvalues(np.diag([3.0, -1.0, 2.0])), [-1.0, 2.0, 3.0])
    # [[2, 1], [1, 2]] -> 1, 3
    assert np.allclose(jacobi_eigenvalues([[2.0, 1.0], [1.0, 2.0]]), [1.0, 3.0], atol=1e-13)


def test_jacobi_matches_characteristic_polynomial_roots():
    rng = np.random.default_rng(7)
    for n in (2, 3, 4):
        S = np.round(random_symmetric(rng, n), 1)
        roots = np.sort(np.roots(np.poly(S)).real)
        assert np.allclose(jacobi_eigenvalues(S), roots, atol=1e-8)


@pytest.mark.parametrize("n", [1, 5, 8, 12])
def test_jacobi_agrees_with_lapack(n):
    rng = np.random.default_rng(n)
    S = random_symmetric(rng, n)
    assert np.allclose(jacobi_eigenvalues(S), np.linalg.eigvalsh(S), atol=1e-10)


def test_jacobi_handles_tiny_off_diagonals():
    S = np.diag([1.0, 2.0, 3.0])
    S[0, 1] = S[1, 0] = 1e-200
    assert np.allclose(jacobi_eigenvalues(S), [1.0, 2.0, 3.0])


def test_min_max_eigenvalue():
    S = np.diag([-2.0, 0.5, 4.0])
    assert min_eigenvalue(S) == pytest.approx(-2.0)
    assert max_eigenvalue(S) == pytest.approx(4.0)


def test_is_definite():
    assert is_definite(np.eye(3), "positive", 0.5)
    assert not is_definite(np.eye(3), "positive", 1.5)
    assert is_definite(-np.eye(2), "negative", 1.0)
    assert not is_definite(np.diag([1.0, -1.0]), "negative")
    with pytest.raises(ValueError):
        is_definite(np.eye(2), "positive", -1.0)
    with pytest.raises(ValueError):
        is_definite(np.eye(2), "sideways")


def test_check_symmetric_tolerance():
    S = np.array([[1.0, 2.0], [2.0 + 1e-14, 1.0]])
    out = check_symmetric(S)
    assert np.array_equal(out, out.T)
    with pytest.raises(ValueError, match="not symmetric"):
        check_symmetric([[1.0, 2.0], [2.1, 1.0]])


def test_check_matrix_rejects_bad_input():
    with pytest.raises(ValueError):
        check_matrix([1.0, 2.0])
    with pytest.raises(ValueError):
        check_matrix([[np.nan]])
    with pytest.raises(ValueError):
        check_matrix(np.zeros((2, 3)), square=True)


@given(arrays(float, (3, 4), elements=finite))
def test_abs_idempotent(A):
    once = elementwise_abs(A)
    assert np.array_equal(elementwise_abs(once), once)
    assert np.all(once >= 0)


@given(arrays(float, (3, 3), elements=finite), arrays(float, 3, elements=finite), arrays(float, 3, elements=finite))
def test_bar_bound_of_bilinear_form(M, a, b):
    lhs = a @ M @ b
    rhs = elementwise_abs(a) @ elementwise_abs(M) @ elementwise_abs(b)
    assert lhs <= rhs + 1e-9 * (1 + abs(rhs))


@settings(max_examples=50)
@given(arrays(float, (4, 4), elements=finite))
def test_jacobi_trace_and_ordering(A):
    S = A + A.T
    ev = jacobi_eigenvalues(S)
    assert np.all(np.diff(ev) >= 0)
    assert ev.sum() == pytest.approx(np.trace(S), abs=1e-9)
