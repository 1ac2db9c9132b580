
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stocon.core import NonFiniteError
from stocon.spectral import (
    SingularMetricError,
    generalized_jacobian_continuous,
    generalized_jacobian_discrete,
    invert,
    jacobi_eigenvalues,
    jacobian_fd,
    lambda_max_symmetric,
    largest_singular_value,
    spectral_radius_symmetric,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def square(n):
    return arrays(np.float64, (n, n), elements=finite)


@given(st.integers(1, 6).flatmap(square))
def test_jacobi_matches_lapack_eigenvalues(a):
    s = 0.5 * (a + a.T)
    ref = np.linalg.eigvalsh(s)
    scale = max(1.0, float(np.abs(s).max()))
    assert np.allclose(jacobi_eigenvalues(s), ref, atol=1e-10 * scale)


@given(st.integers(1, 5).flatmap(square))
def test_lambda_max_of_symmetric_part(F):
    ref = np.linalg.eigvalsh(0.5 * (F + F.T))[-1]
    assert lambda_max_symmetric(F) == pytest.approx(ref, abs=1e-9 * max(1.0, np.abs(F).max()))


@given(st.integers(1, 5).flatmap(square))
def test_largest_singular_value_matches_svd(F):
    ref = np.linalg.svd(F, compute_uv=False)[0]
    assert largest_singular_value(F) == pytest.approx(ref, abs=1e-7 * max(1.0, ref))


@given(st.integers(1, 5).flatmap(square))
def test_singular_value_bounds_action(F):
    # ||F v|| <= sigma_max ||v|| for every v
    v = np.ones(F.shape[0])
    assert np.linalg.norm(F @ v) <= largest_singular_value(F) * np.linalg.norm(v) * (1 + 1e-9) + 1e-12


def test_spectral_radius_of_gradient_factor():
    assert spectral_radius_symmetric(np.diag([0.6, -0.6])) == pytest.approx(0.6)
    assert spectral_radius_symmetric(np.eye(2) - 0.6 * np.diag([1.0, 4.0])) == pytest.approx(1.4)


def test_jacobian_fd_against_analytic():
    f = lambda x, t, xi: np.array([np.sin(x[0]) * x[1], x[0] ** 2 + xi[0] * x[1]])
    x = np.array([0.3, -1.2])
    ref = np.array([[np.cos(0.3) * -1.2, np.sin(0.3)], [0.6, 2.0]])
    assert np.allclose(jacobian_fd(f, x, 0.0, np.array([2.0])), ref, atol=1e-8)


def test_jacobian_fd_raises_on_non_finite():
    with pytest.raises(NonFiniteError):
        jacobian_fd(lambda x, t, xi: np.log(x), np.array([0.0]), 0.0, None)


@given(st.integers(1, 5).flatmap(square), st.integers(0, 10 ** 6))
def test_generalized_jacobians_against_solve(J, seed):
    n = J.shape[0]
    rng = np.random.default_rng(seed)
    th0 = np.eye(n) + 0.3 * rng.standard_normal((n, n))
    th1 = np.eye(n) + 0.3 * rng.standard_normal((n, n))
    thd = rng.standard_normal((n, n))
    if np.linalg.cond(th0) > 1e6:
        return
    ref_d = np.linalg.solve(th0.T, (th1 @ J).T).T
    ref_c = np.linalg.solve(th0.T, (thd + th0 @ J).T).T
    tol = 1e-7 * max(1.0, np.abs(ref_d).max(), np.abs(ref_c).max())
    assert np.allclose(generalized_jacobian_discrete(J, th0, th1), ref_d, atol=tol)
    assert np.allclose(generalized_jacobian_continuous(J, th0, thd), ref_c, atol=tol)


def test_identity_metric_leaves_jacobian_unchanged():
    J = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(generalized_jacobian_discrete(J, np.eye(2), np.eye(2)), J)
    assert np.allclose(generalized_jacobian_continuous(J, np.eye(2), np.zeros((2, 2))), J)


def test_singular_metric_is_rejected():
    with pytest.raises(SingularMetricError):
        invert(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMetricError):
        generalized_jacobian_discrete(np.eye(2), np.zeros((2, 2)), np.eye(2))


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_invert_small_matrices(n):
    a = np.eye(n) + 0.1 * np.arange(n * n).reshape(n, n) / n
    assert np.allclose(invert(a) @ a, np.eye(n), atol=1e-12)
