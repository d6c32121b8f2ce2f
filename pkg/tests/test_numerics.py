import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zidefect.errors import ConfigError, DomainError, NonFiniteObjective, SingularMatrix
from zidefect.numerics import (
    OptimizerConfig,
    clamp_eta,
    finite_diff_gradient,
    minimize,
    solve_linear,
    zip_zero_logprob,
)


def test_solve_identity_and_diagonal():
    np.testing.assert_allclose(solve_linear(np.eye(2), [3, 4]), [3, 4])
    np.testing.assert_allclose(solve_linear([[2, 0], [0, 4]], [2, 8]), [1, 2])


def test_solve_singular():
    with pytest.raises(SingularMatrix):
        solve_linear([[1, 1], [1, 1]], [1, 2])
    with pytest.raises(SingularMatrix):
        solve_linear([[1.0, 0.0], [0.0, 1e-14]], [1, 1])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_solve_residual(k, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((k, k))
    A = B @ B.T + k * np.eye(k)
    b = rng.standard_normal(k)
    x = solve_linear(A, b)
    assert np.max(np.abs(A @ x - b)) <= 1e-8 * (1 + np.max(np.abs(b)))


def quad(a, c):
    def f(x):
        r = x - c
        return float(r @ a @ r), 2 * a @ r
    return f


def test_minimize_scalar_quadratic():
    x, fx, ok = minimize(lambda x: ((x[0] - 3) ** 2, np.array([2 * (x[0] - 3)])), [0.0])
    assert ok
    assert x[0] == pytest.approx(3, abs=1e-8)


def test_minimize_rosenbrock():
    def rosen(x):
        a, b = x
        f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
        g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
        return f, g

    res = minimize(rosen, [-1.2, 1.0], OptimizerConfig(max_iterations=2000))
    assert res.converged
    np.testing.assert_allclose(res.x, [1, 1], atol=1e-5)
    assert res.fun <= rosen([-1.2, 1.0])[0]


def test_minimize_poisson_intercept():
    y = np.array([1.0, 2.0, 3.0])

    def nll(b):
        return float(np.sum(np.exp(b[0]) - y * b[0])), np.array([np.sum(np.exp(b[0]) - y)])

    x, _, ok = minimize(nll, [0.0])
    assert ok
    assert x[0] == pytest.approx(math.log(2), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_minimize_spd_quadratic(k, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((k, k))
    A = B @ B.T + 0.5 * np.eye(k)
    c = rng.standard_normal(k)
    res = minimize(quad(A, c), np.zeros(k))
    assert res.converged
    # gradient tolerance 1e-8 bounds the error by that over the smallest eigenvalue
    err = np.max(np.abs(res.x - c))
    assert err <= 1e-8 / np.linalg.eigvalsh(2 * A).min() * math.sqrt(k) + 1e-12


def test_minimize_nonfinite_start():
    with pytest.raises(NonFiniteObjective):
        minimize(lambda x: (math.nan, np.zeros(1)), [0.0])


def test_minimize_iteration_limit_returns_best():
    f = quad(np.array([[1.0, 0.0], [0.0, 1e4]]), np.array([1.0, 1.0]))
    res = minimize(f, [10.0, -10.0], OptimizerConfig(max_iterations=2))
    assert not res.converged
    assert res.fun < f(np.array([10.0, -10.0]))[0]


def test_optimizer_config_validation():
    with pytest.raises(ConfigError):
        OptimizerConfig(gradient_tolerance=0)
    with pytest.raises(ConfigError):
        OptimizerConfig(max_iterations=0)
    with pytest.raises(ConfigError):
        OptimizerConfig(step_shrink_factor=1.0)


def test_zip_zero_logprob_examples():
    assert zip_zero_logprob(5.0, 0.0) == pytest.approx(-5.0, abs=1e-15)
    assert zip_zero_logprob(3.0, 1.0) == 0.0
    assert zip_zero_logprob(0.0, 0.3) == pytest.approx(0.0, abs=1e-15)
    # mpmath reference at 30 digits
    assert zip_zero_logprob(1.0, 0.5) == pytest.approx(-0.37988549304172247, abs=1e-12)


def test_zip_zero_logprob_large_lambda():
    v = zip_zero_logprob(700.0, 0.0)
    assert v == pytest.approx(-700.0)
    assert math.isfinite(zip_zero_logprob(700.0, 1e-300))


@pytest.mark.parametrize("lam, pi", [(-1.0, 0.5), (1.0, -0.1), (1.0, 1.5), (math.nan, 0.5)])
def test_zip_zero_logprob_domain(lam, pi):
    with pytest.raises(DomainError):
        zip_zero_logprob(lam, pi)


def test_zip_zero_logprob_grid():
    for lam in (0.01, 0.1, 1, 10, 100):
        for pi in (0, 0.25, 0.5, 0.9, 1):
            p = math.exp(zip_zero_logprob(lam, pi))
            assert 0 <= p <= 1
            assert p == pytest.approx(pi + (1 - pi) * math.exp(-lam), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 700), st.floats(0, 700), st.floats(0, 1))
def test_zip_zero_logprob_monotone(l1, l2, pi):
    lo, hi = sorted((l1, l2))
    assert zip_zero_logprob(hi, pi) <= zip_zero_logprob(lo, pi) + 1e-15


def test_finite_diff_examples():
    assert finite_diff_gradient(lambda x: x[0] ** 2, [2.0])[0] == pytest.approx(4, rel=1e-8)
    np.testing.assert_allclose(finite_diff_gradient(lambda x: x[0] + 2 * x[1], [0.3, -7.0]), [1, 2], rtol=1e-8)


def test_finite_diff_nonfinite():
    with pytest.raises(NonFiniteObjective):
        finite_diff_gradient(lambda x: np.log(x[0]) if x[0] > 0 else math.nan, [0.0])


def test_clamp():
    eta, flag = clamp_eta(np.array([-600.0, 0.0, 10.0]))
    assert flag and eta[0] == -500
    assert not clamp_eta(np.array([1.0]))[1]
