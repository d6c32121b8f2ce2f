"""Small dense numerical kernel shared by the fitters."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.special

from .errors import ConfigError, DomainError, NonFiniteObjective, SingularMatrix

log = logging.getLogger(__name__)

ETA_CLAMP = 500.0
PIVOT_RTOL = 1e-12
# relative band within which f counts as flat for the approximate Wolfe test
_FLAT_EPS = 1e-12


@dataclass(frozen=True)
class OptimizerConfig:
    gradient_tolerance: float = 1e-8
    max_iterations: int = 500
    step_shrink_factor: float = 0.5
    rel_f_tolerance: float = 1e-10
    armijo_c1: float = 1e-4

    def __post_init__(self):
        if not self.gradient_tolerance > 0:
            raise ConfigError("gradient_tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if not 0 < self.step_shrink_factor < 1:
            raise ConfigError("step_shrink_factor must lie in (0, 1)")


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    converged: bool
    iterations: int
    grad_norm: float

    def __iter__(self):
        # allows ``x, f, ok = minimize(...)``
        return iter((self.x, self.fun, self.converged))


def solve_linear(A, b) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive-definite ``A`` by Cholesky.

    Raises SingularMatrix when a pivot falls below ``1e-12`` times the
    largest diagonal entry.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError("A must be a non-empty square matrix")
    scale = max(float(np.max(np.abs(np.diag(A)))), np.finfo(float).tiny)
    try:
        c, lower = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        raise SingularMatrix("matrix is not positive definite") from None
    pivots = np.diag(c) ** 2
    if np.min(pivots) < PIVOT_RTOL * scale:
        raise SingularMatrix(
            f"pivot {np.min(pivots):.3g} below relative threshold (scale {scale:.3g})"
        )
    return scipy.linalg.cho_solve((c, lower), b)


def clamp_eta(eta: np.ndarray) -> tuple[np.ndarray, bool]:
    """Clip a linear predictor to [-500, 500]; the flag reports clipping."""
    clipped = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    return clipped, bool(np.any(clipped != eta))


def minimize(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    cfg: OptimizerConfig | None = None,
) -> MinimizeResult:
    """BFGS with backtracking Armijo line search.

    ``f`` returns ``(value, gradient)``. Converged means the gradient
    max-norm is at most ``cfg.gradient_tolerance`` and the last relative
    decrease in ``f`` is at most ``cfg.rel_f_tolerance``. Hitting the
    iteration limit returns the best point with ``converged=False``.
    """
    cfg = cfg or OptimizerConfig()
    x = np.array(x0, dtype=float)
    fx, g = f(x)
    fx = float(fx)
    g = np.asarray(g, dtype=float)
    if not (math.isfinite(fx) and np.all(np.isfinite(g))):
        raise NonFiniteObjective("objective or gradient not finite at the starting point")

    d = x.size
    H = np.eye(d)
    fresh = True
    last_rel = 0.0
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        gnorm = float(np.max(np.abs(g))) if d else 0.0
        if gnorm <= cfg.gradient_tolerance and last_rel <= cfg.rel_f_tolerance:
            return MinimizeResult(x, fx, True, it - 1, gnorm)

        p = -H @ g
        slope = float(g @ p)
        if not slope < 0:
            H, fresh = np.eye(d), True
            p, slope = -g, -float(g @ g)

        t = 1.0
        accepted = False
        for _ in range(80):
            x_new = x + t * p
            f_new, g_new = f(x_new)
            f_new = float(f_new)
            if math.isfinite(f_new) and np.all(np.isfinite(g_new)):
                if f_new <= fx + cfg.armijo_c1 * t * slope:
                    accepted = True
                    break
                # approximate Wolfe: f flat to rounding, directional derivative shows progress
                dg = float(np.dot(g_new, p))
                if (f_new <= fx + _FLAT_EPS * abs(fx)
                        and 0.9 * slope <= dg <= (2 * cfg.armijo_c1 - 1) * slope):
                    accepted = True
                    break
            t *= cfg.step_shrink_factor
        if not accepted:
            if not fresh:
                H, fresh = np.eye(d), True
                continue
            if gnorm <= cfg.gradient_tolerance:
                # numerically at the optimum, decrease is below rounding
                return MinimizeResult(x, fx, True, it, gnorm)
            if not math.isfinite(f_new):
                raise NonFiniteObjective("line search could not find a finite point")
            log.debug("line search stalled at gradient norm %.3g", gnorm)
            return MinimizeResult(x, fx, False, it, gnorm)

        g_new = np.asarray(g_new, dtype=float)
        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        last_rel = abs(fx - f_new) / max(1.0, abs(fx))
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if fresh:
                H = np.eye(d) * (sy / float(yv @ yv))
            rho = 1.0 / sy
            Hy = H @ yv
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(yv @ Hy) + rho) * np.outer(s, s)
            fresh = False
        x, fx, g = x_new, f_new, g_new

    gnorm = float(np.max(np.abs(g))) if d else 0.0
    ok = gnorm <= cfg.gradient_tolerance and last_rel <= cfg.rel_f_tolerance
    if not ok:
        log.warning("minimize: iteration limit reached (gradient norm %.3g)", gnorm)
    return MinimizeResult(x, fx, ok, it, gnorm)


def zip_zero_logprob(lam, pi):
    """log(pi + (1 - pi) exp(-lam)), the log-probability of a zero count.

    Computed as a log-sum-exp of the structural-zero and Poisson-zero
    branches so it stays finite for large ``lam``. Vectorised.
    """
    lam = np.asarray(lam, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if np.any(np.isnan(lam)) or np.any(lam < 0):
        raise DomainError("lambda must be non-negative")
    if np.any(np.isnan(pi)) or np.any((pi < 0) | (pi > 1)):
        raise DomainError("pi must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        out = np.logaddexp(np.log(pi), np.log1p(-pi) - lam)
    return out[()] if out.ndim == 0 else out


def log_softplus(z):
    """log(1 + exp(z)) without overflow."""
    return np.logaddexp(0.0, z)


def expit(z):
    return scipy.special.expit(z)


def finite_diff_gradient(fun: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient with step ``h * max(1, |x_i|)``."""
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        fp, fm = float(fun(xp)), float(fun(xm))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteObjective(f"objective not finite near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * step)
    return g


def finite_diff_jacobian(grad: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector function, symmetrised."""
    x = np.array(x, dtype=float)
    J = np.empty((x.size, x.size))
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        J[:, i] = (np.asarray(grad(xp)) - np.asarray(grad(xm))) / (2.0 * step)
    return 0.5 * (J + J.T)

