"""Maximum-likelihood count regression: linear, Poisson, NB2, ZIP and ZINB.

Every family is parameterised by one packed vector::

    [beta (count component), gamma (zero component, zip/zinb only),
     log dispersion (log sigma for linear, log theta for negbin/zinb)]

Count means use a log link, the structural-zero probability a logit link.
Optimisation runs on centred and scaled covariates; results are mapped
back so reported coefficients refer to the raw metrics.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from . import numerics
from .criteria import aic as _aic, bic as _bic
from .errors import (
    DataError,
    DegenerateResponse,
    DomainError,
    FitError,
    NoZerosForZIP,
    NonFiniteLikelihood,
    ShapeMismatch,
    SingularDesign,
    SingularMatrix,
)
from .ingest import DesignMatrices, ModelSpec
from .numerics import OptimizerConfig, clamp_eta, log_softplus, minimize, solve_linear

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
IRLS_TOL = 1e-10
NB_PROFILE_TOL = 1e-8
EM_TOL = 1e-10


def has_dispersion(family: str) -> bool:
    return family in ("linear", "negbin", "zinb")


def param_names(spec: ModelSpec) -> list[str]:
    names = ["count:intercept"] + [f"count:{c}" for c in spec.count_covariates]
    if spec.zero_inflated:
        names += ["zero:intercept"] + [f"zero:{c}" for c in spec.zero_covariates]
    if spec.family == "linear":
        names.append("log_sigma")
    elif has_dispersion(spec.family):
        names.append("log_theta")
    return names


def n_params(spec: ModelSpec) -> int:
    return len(param_names(spec))


@dataclass(frozen=True, eq=False)
class FittedModel:
    family: str
    beta_count: np.ndarray
    gamma_zero: np.ndarray | None
    dispersion: float | None
    loglik: float
    k: int
    n: int
    converged: bool
    count_names: tuple[str, ...]
    zero_names: tuple[str, ...] = ()
    fitted_lambda: np.ndarray | None = None
    fitted_pi: np.ndarray | None = None
    clamped: bool = False
    history: tuple[float, ...] = field(default=())

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(
            self.family,
            tuple(self.count_names[1:]),
            tuple(self.zero_names[1:]) if self.gamma_zero is not None else (),
        )

    @property
    def params(self) -> np.ndarray:
        parts = [self.beta_count]
        if self.gamma_zero is not None:
            parts.append(self.gamma_zero)
        if has_dispersion(self.family):
            parts.append([math.log(self.dispersion)])
        return np.concatenate(parts)

    @property
    def aic(self) -> float:
        return _aic(self.loglik, self.k)

    @property
    def bic(self) -> float:
        return _bic(self.loglik, self.k, self.n)

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "coef_count": {n: float(v) for n, v in zip(self.count_names, self.beta_count)},
        }
        if self.gamma_zero is not None:
            d["coef_zero"] = {n: float(v) for n, v in zip(self.zero_names, self.gamma_zero)}
        if self.dispersion is not None:
            d["dispersion"] = float(self.dispersion)
        d.update(
            loglik=float(self.loglik),
            k=int(self.k),
            n=int(self.n),
            aic=float(self.aic),
            bic=float(self.bic),
            converged=bool(self.converged),
        )
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        try:
            family = d["family"]
            coef_count = d["coef_count"]
            coef_zero = d.get("coef_zero")
            model = cls(
                family=family,
                beta_count=np.array(list(coef_count.values()), dtype=float),
                gamma_zero=None if coef_zero is None else np.array(list(coef_zero.values()), dtype=float),
                dispersion=d.get("dispersion"),
                loglik=float(d["loglik"]),
                k=int(d["k"]),
                n=int(d["n"]),
                converged=bool(d["converged"]),
                count_names=tuple(coef_count),
                zero_names=tuple(coef_zero) if coef_zero is not None else (),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataError(f"malformed model document: {exc}") from None
        if model.count_names[:1] != ("intercept",):
            raise DataError("model document: coef_count must start with 'intercept'")
        if (family in ("zip", "zinb")) != (coef_zero is not None):
            raise DataError("model document: coef_zero must be present exactly for zip/zinb")
        if has_dispersion(family) and model.dispersion is None:
            raise DataError(f"model document: {family} requires a dispersion")
        return model

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"model document is not valid JSON: {exc}") from None


# -- probability mass function ---------------------------------------------

def zip_logpmf(h, lam, pi):
    """Log probability of count ``h`` under a zero-inflated Poisson."""
    h = np.asarray(h)
    lam = np.asarray(lam, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if np.any(h < 0) or np.any(h != np.floor(h)):
        raise DomainError("h must be a non-negative integer")
    if np.any(np.isnan(lam)) or np.any(lam < 0):
        raise DomainError("lambda must be non-negative")
    if np.any(np.isnan(pi)) or np.any((pi < 0) | (pi > 1)):
        raise DomainError("pi must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = np.log1p(-pi) + h * np.log(lam) - lam - gammaln(h + 1.0)
        pos = np.where((h > 0) & (lam == 0), -np.inf, pos)
        zero = numerics.zip_zero_logprob(np.broadcast_to(lam, np.broadcast(h, lam, pi).shape),
                                         np.broadcast_to(pi, np.broadcast(h, lam, pi).shape))
    out = np.where(h == 0, zero, pos)
    return out[()] if out.ndim == 0 else out


def zip_pmf(h, lam, pi):
    """P(y = h) for a zero-inflated Poisson with rate ``lam`` and zero mass ``pi``."""
    return np.exp(zip_logpmf(h, lam, pi))


# -- log-likelihoods and analytic gradients ------------------------------------

def _split(spec: ModelSpec, params, dm: DesignMatrices):
    params = np.asarray(params, dtype=float)
    p = dm.X.shape[1]
    q = dm.Z.shape[1] if spec.zero_inflated else 0
    expected = p + q + (1 if has_dispersion(spec.family) else 0)
    if params.shape != (expected,):
        raise ShapeMismatch(f"expected {expected} parameters for {spec.describe()}, got {params.size}")
    beta = params[:p]
    gamma = params[p:p + q] if q else None
    logd = params[p + q] if has_dispersion(spec.family) else None
    return beta, gamma, logd


def _nb_ratios(y: np.ndarray, theta: float):
    """log Gamma(y+theta)/Gamma(theta) and digamma(y+theta) - digamma(theta).

    Both are finite sums over k < y for integer y; summing them directly
    avoids the cancellation of the gamma-function differences at large theta.
    """
    yi = y.astype(np.int64)
    top = int(yi.max()) if yi.size else 0
    k = theta + np.arange(top, dtype=float)
    lg = np.concatenate([[0.0], np.cumsum(np.log(k))])
    dg = np.concatenate([[0.0], np.cumsum(1.0 / k)])
    return lg[yi], dg[yi]


def _evaluate(spec: ModelSpec, params, dm: DesignMatrices, want_grad: bool = True):
    """Return ``(loglik, gradient, clamped)``; may return a non-finite loglik."""
    beta, gamma, logd = _split(spec, params, dm)
    X, Z, y = dm.X, dm.Z, dm.y.astype(float)
    fam = spec.family
    lgy = gammaln(y + 1.0)
    grads = []

    if fam == "linear":
        r = y - X @ beta
        rss = float(r @ r)
        sigma2 = math.exp(2.0 * logd)
        n = y.size
        ll = -0.5 * n * LOG_2PI - n * logd - rss / (2.0 * sigma2)
        if want_grad:
            grads = [X.T @ r / sigma2, np.array([-n + rss / sigma2])]
        return ll, (np.concatenate(grads) if want_grad else None), False

    eta, c1 = clamp_eta(X @ beta)
    mu = np.exp(eta)
    clamped = c1
    if spec.zero_inflated:
        zeta, c2 = clamp_eta(Z @ gamma)
        clamped = clamped or c2
        sp = log_softplus(zeta)
        pi = expit(zeta)
    if logd is not None:
        logt = float(np.clip(logd, -numerics.ETA_CLAMP, numerics.ETA_CLAMP))
        theta = math.exp(logt)
        log_tm = np.logaddexp(logt, eta)  # log(theta + mu)
        log_share = -np.log1p(np.exp(eta - logt))  # log(theta / (theta + mu))
        lg_ratio, dg_ratio = _nb_ratios(y, theta)

    if fam == "poisson":
        ll = float(np.sum(y * eta - mu - lgy))
        if want_grad:
            grads = [X.T @ (y - mu)]

    elif fam == "negbin":
        terms = lg_ratio - lgy + theta * log_share + y * (eta - log_tm)
        ll = float(np.sum(terms))
        if want_grad:
            ratio = theta / (theta + mu)
            g_eta = (y - mu) * ratio
            g_lt = theta * (dg_ratio + log_share + (mu - y) / (theta + mu))
            grads = [X.T @ g_eta, np.array([np.sum(g_lt)])]

    elif fam == "zip":
        zero = y == 0
        lse = np.logaddexp(zeta, -mu)
        ll_terms = np.where(zero, lse - sp, -sp + y * eta - mu - lgy)
        ll = float(np.sum(ll_terms))
        if want_grad:
            r = np.where(zero, np.exp(zeta - lse), 0.0)
            g_eta = np.where(zero, -mu * (1.0 - r), y - mu)
            g_zeta = np.where(zero, r - pi, -pi)
            grads = [X.T @ g_eta, Z.T @ g_zeta]

    elif fam == "zinb":
        zero = y == 0
        log_f0 = theta * log_share
        lse = np.logaddexp(zeta, log_f0)
        nb = lg_ratio - lgy + log_f0 + y * (eta - log_tm)
        ll_terms = np.where(zero, lse - sp, nb - sp)
        ll = float(np.sum(ll_terms))
        if want_grad:
            share = np.where(zero, np.exp(log_f0 - lse), 1.0)  # weight of the NB branch
            ratio = theta / (theta + mu)
            g_eta = np.where(zero, -share * mu * ratio, (y - mu) * ratio)
            g_zeta = np.where(zero, (1.0 - share) - pi, -pi)
            g_lt_nb = theta * (dg_ratio + log_share + (mu - y) / (theta + mu))
            g_lt_zero = share * theta * (log_share + mu / (theta + mu))
            g_lt = np.where(zero, g_lt_zero, g_lt_nb)
            grads = [X.T @ g_eta, Z.T @ g_zeta, np.array([np.sum(g_lt)])]
    else:  # pragma: no cover - ModelSpec validates the family
        raise ValueError(fam)

    return ll, (np.concatenate(grads) if want_grad else None), clamped


def loglik(spec: ModelSpec, params, dm: DesignMatrices) -> float:
    """Log-likelihood of ``params`` (packed, raw-covariate scale)."""
    ll, _, _ = _evaluate(spec, params, dm, want_grad=False)
    if not math.isfinite(ll):
        raise NonFiniteLikelihood(f"log-likelihood is not finite for {spec.describe()}")
    return ll


def loglik_gradient(spec: ModelSpec, params, dm: DesignMatrices) -> np.ndarray:
    _, g, _ = _evaluate(spec, params, dm)
    return g


# -- reparameterisation to centred/scaled covariates --------------------------

def _scaling(A: np.ndarray) -> np.ndarray:
    """M such that ``A @ M`` has centred, unit-variance non-intercept columns."""
    k = A.shape[1]
    M = np.eye(k)
    if k > 1:
        m = A[:, 1:].mean(axis=0)
        s = A[:, 1:].std(axis=0)
        s[s == 0] = 1.0
        M[0, 1:] = -m / s
        M[1:, 1:] = np.diag(1.0 / s)
    return M


class _Problem:
    """Negative log-likelihood on the scaled parameterisation ``raw = T @ u``."""

    def __init__(self, spec: ModelSpec, dm: DesignMatrices):
        self.spec, self.dm = spec, dm
        blocks = [_scaling(dm.X)]
        if spec.zero_inflated:
            blocks.append(_scaling(dm.Z))
        if has_dispersion(spec.family):
            blocks.append(np.eye(1))
        d = sum(b.shape[0] for b in blocks)
        T = np.zeros((d, d))
        i = 0
        for b in blocks:
            T[i:i + b.shape[0], i:i + b.shape[0]] = b
            i += b.shape[0]
        self.T = T
        self.T_inv = np.linalg.inv(T)
        self.clamped = False

    def to_raw(self, u):
        return self.T @ u

    def to_scaled(self, raw):
        return self.T_inv @ np.asarray(raw, dtype=float)

    def __call__(self, u):
        ll, g, clamped = _evaluate(self.spec, self.T @ u, self.dm)
        self.clamped = clamped
        if not math.isfinite(ll):
            return math.inf, np.full(u.shape, np.nan)
        return -ll, -(self.T.T @ g)

    def gradient(self, u):
        return self(u)[1]


def _check_design(dm: DesignMatrices) -> None:
    for label, A in (("count", dm.X), ("zero", dm.Z)):
        if A is None:
            continue
        As = A @ _scaling(A)
        try:
            solve_linear(As.T @ As / A.shape[0], np.ones(A.shape[1]))
        except SingularMatrix:
            raise SingularDesign(f"{label} design matrix is collinear") from None


def _check_response(spec: ModelSpec, dm: DesignMatrices) -> None:
    y = dm.y
    if spec.family == "linear":
        if np.all(y == y[0]):
            raise DegenerateResponse("response is constant; Gaussian variance MLE is zero")
        return
    if np.all(y == 0):
        raise DegenerateResponse("all bug counts are zero; the rate MLE is on the boundary")
    if spec.zero_inflated and not np.any(y == 0):
        raise NoZerosForZIP("zero-inflated model requested on data without zeros")


def _check_shapes(spec: ModelSpec, dm: DesignMatrices) -> None:
    if dm.X.shape[1] != 1 + len(spec.count_covariates):
        raise ShapeMismatch("count design width does not match the spec")
    if spec.zero_inflated:
        if dm.Z is None or dm.Z.shape[1] != 1 + len(spec.zero_covariates):
            raise ShapeMismatch("zero design width does not match the spec")
    if dm.X.shape[0] <= n_params(spec):
        raise DataError(f"need more rows than parameters ({dm.X.shape[0]} <= {n_params(spec)})")


def _build_model(spec: ModelSpec, dm: DesignMatrices, params, converged: bool,
                 clamped: bool = False, history=()) -> FittedModel:
    beta, gamma, logd = _split(spec, params, dm)
    ll = loglik(spec, params, dm)
    if spec.family == "linear":
        lam = dm.X @ beta
    else:
        lam = np.exp(clamp_eta(dm.X @ beta)[0])
    pi = expit(clamp_eta(dm.Z @ gamma)[0]) if gamma is not None else None
    for a in (lam, pi):
        if a is not None:
            a.setflags(write=False)
    return FittedModel(
        family=spec.family,
        beta_count=np.array(beta),
        gamma_zero=None if gamma is None else np.array(gamma),
        dispersion=None if logd is None else math.exp(logd),
        loglik=ll,
        k=len(params),
        n=dm.n,
        converged=converged,
        count_names=dm.count_names or ("intercept",) + spec.count_covariates,
        zero_names=(dm.zero_names or ("intercept",) + spec.zero_covariates) if gamma is not None else (),
        fitted_lambda=lam,
        fitted_pi=pi,
        clamped=clamped,
        history=tuple(history),
    )


def _prepare(spec: ModelSpec, dm: DesignMatrices) -> None:
    _check_shapes(spec, dm)
    _check_response(spec, dm)
    _check_design(dm)


# -- IRLS kernels (used by the Poisson fast path and the EM M-steps) -----------

def _irls_poisson(X: np.ndarray, y: np.ndarray, w: np.ndarray, beta0=None,
                  tol: float = IRLS_TOL, max_iter: int = 100):
    """Weighted Poisson regression by IRLS. Returns (beta, converged)."""
    M = _scaling(X)
    Xs = X @ M
    wy = w * y
    if beta0 is None:
        mu = (y + np.sum(wy) / max(np.sum(w), 1e-300)) / 2.0 + 1e-3
        eta = np.log(mu)
    else:
        eta = clamp_eta(X @ beta0)[0]
        mu = np.exp(eta)

    def deviance(mu):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(y > 0, y * np.log(y / mu), 0.0)
        return 2.0 * float(np.sum(w * (t - (y - mu))))

    dev = deviance(mu)
    u = None if beta0 is None else np.linalg.solve(M, beta0)
    for _ in range(max_iter):
        W = w * mu
        z = eta + (y - mu) / mu
        u_new = solve_linear(Xs.T @ (W[:, None] * Xs), Xs.T @ (W * z))
        for _half in range(30):
            eta_new = clamp_eta(Xs @ u_new)[0]
            mu_new = np.exp(eta_new)
            dev_new = deviance(mu_new)
            if math.isfinite(dev_new) and (u is None or dev_new <= dev + 1e-12 * (abs(dev) + 1.0)):
                break
            u_new = 0.5 * (u_new + u)
        done = abs(dev_new - dev) < tol * (abs(dev_new) + 0.1)
        u, eta, mu, dev = u_new, eta_new, mu_new, dev_new
        if done:
            return M @ u, True
    return M @ u, False


def _irls_logistic(Z: np.ndarray, r: np.ndarray, gamma0=None,
                   tol: float = IRLS_TOL, max_iter: int = 100):
    """Logistic regression of fractional responses ``r`` in [0, 1] by IRLS."""
    M = _scaling(Z)
    Zs = Z @ M
    u = np.zeros(Z.shape[1]) if gamma0 is None else np.linalg.solve(M, gamma0)

    def objective(u):
        zeta = Zs @ u
        return float(np.sum(r * zeta - log_softplus(zeta)))

    obj = objective(u)
    for _ in range(max_iter):
        zeta = Zs @ u
        pi = expit(zeta)
        W = np.maximum(pi * (1.0 - pi), 1e-12)
        u_new = solve_linear(Zs.T @ (W[:, None] * Zs), Zs.T @ (W * zeta + (r - pi)))
        for _half in range(30):
            obj_new = objective(u_new)
            if math.isfinite(obj_new) and obj_new >= obj - 1e-12 * (abs(obj) + 1.0):
                break
            u_new = 0.5 * (u_new + u)
        done = abs(obj_new - obj) < tol * (abs(obj_new) + 0.1)
        u, obj = u_new, obj_new
        if done:
            return M @ u, True
    return M @ u, False


# -- fitters ----------------------------------------------------------------

def _fit_linear(spec, dm):
    y = dm.y.astype(float)
    M = _scaling(dm.X)
    Xs = dm.X @ M
    u = solve_linear(Xs.T @ Xs, Xs.T @ y)
    beta = M @ u
    r = y - dm.X @ beta
    sigma = math.sqrt(float(r @ r) / y.size)
    return _build_model(spec, dm, np.append(beta, math.log(sigma)), True)


def fit_poisson_irls(dm: DesignMatrices) -> FittedModel:
    """Poisson regression by iteratively reweighted least squares."""
    spec = ModelSpec("poisson", dm.spec.count_covariates)
    _prepare(spec, dm)
    y = dm.y.astype(float)
    beta, ok = _irls_poisson(dm.X, y, np.ones_like(y))
    return _build_model(spec, dm, beta, ok)


def _direct(spec, dm, start_raw, cfg):
    prob = _Problem(spec, dm)
    res = minimize(prob, prob.to_scaled(start_raw), cfg)
    prob(res.x)
    return prob.to_raw(res.x), res, prob.clamped


def _fit_direct_poisson(spec, dm, cfg):
    y = dm.y.astype(float)
    start = np.zeros(dm.X.shape[1])
    start[0] = math.log(y.mean())
    raw, res, clamped = _direct(spec, dm, start, cfg)
    return _build_model(spec, dm, raw, res.converged, clamped)


def _theta_moments(y, mu):
    excess = np.mean((y - mu) ** 2 - mu)
    if excess <= 0:
        return 10.0
    return float(np.clip(np.mean(mu ** 2) / excess, 1e-2, 1e4))


def _fit_negbin(spec, dm, cfg):
    y = dm.y.astype(float)
    beta, _ = _irls_poisson(dm.X, y, np.ones_like(y))
    logt = math.log(_theta_moments(y, np.exp(dm.X @ beta)))
    full = _Problem(spec, dm)
    p = dm.X.shape[1]
    u = full.to_scaled(np.append(beta, logt))
    prev = -full(u)[0]
    # profile: alternate the beta block and the theta block
    for _ in range(200):
        def f_beta(ub):
            f, g = full(np.append(ub, u[p]))
            return f, g[:p]
        u[:p] = minimize(f_beta, u[:p], cfg).x

        def f_theta(ut):
            f, g = full(np.append(u[:p], ut))
            return f, g[p:]
        u[p:] = minimize(f_theta, u[p:], cfg).x
        cur = -full(u)[0]
        if abs(cur - prev) < NB_PROFILE_TOL:
            break
        prev = cur
    res = minimize(full, u, cfg)
    full(res.x)
    return _build_model(spec, dm, full.to_raw(res.x), res.converged, full.clamped)


def _excess_zero_start(y, p0_model):
    """Logit of the zero fraction a count model fails to explain, clipped."""
    p0_obs = float(np.mean(y == 0))
    p0 = float(np.mean(p0_model))
    frac = (p0_obs - p0) / (1.0 - p0) if p0 < 1 else 0.5
    frac = min(0.95, max(0.05, frac))
    return math.log(frac / (1.0 - frac))


def _zip_start(dm):
    y = dm.y.astype(float)
    beta, _ = _irls_poisson(dm.X, y, np.ones_like(y))
    gamma = np.zeros(dm.Z.shape[1])
    gamma[0] = _excess_zero_start(y, np.exp(-np.exp(clamp_eta(dm.X @ beta)[0])))
    return beta, gamma


def _em_step(dm, beta, gamma):
    y = dm.y.astype(float)
    lam = np.exp(clamp_eta(dm.X @ beta)[0])
    zeta = clamp_eta(dm.Z @ gamma)[0]
    r = np.where(y == 0, np.exp(zeta - np.logaddexp(zeta, -lam)), 0.0)
    beta, ok1 = _irls_poisson(dm.X, y, 1.0 - r, beta)
    gamma, ok2 = _irls_logistic(dm.Z, r, gamma)
    return beta, gamma, ok1 and ok2


def _zip_spec(dm) -> ModelSpec:
    return ModelSpec("zip", dm.spec.count_covariates, dm.spec.zero_covariates)


def fit_zip_em(dm: DesignMatrices, max_iter: int = 20000, tol: float = EM_TOL) -> FittedModel:
    """ZIP by expectation-maximisation over latent structural-zero indicators.

    The E-step computes each zero row's posterior probability of being a
    structural zero; the M-step refits a weighted Poisson and a
    fractional-response logistic regression. ``history`` on the result holds
    the observed-data log-likelihood after each iteration.
    """
    spec = _zip_spec(dm)
    _prepare(spec, dm)
    beta, gamma = _zip_start(dm)
    ll = loglik(spec, np.concatenate([beta, gamma]), dm)
    history = [ll]
    converged = False
    for _ in range(max_iter):
        beta, gamma, _ok = _em_step(dm, beta, gamma)
        ll_new = loglik(spec, np.concatenate([beta, gamma]), dm)
        history.append(ll_new)
        if abs(ll_new - ll) < tol:
            converged = True
            break
        ll = ll_new
    if not converged:
        log.warning("fit_zip_em: no convergence after %d iterations", max_iter)
    return _build_model(spec, dm, np.concatenate([beta, gamma]), converged, history=history)


def _fit_zip(spec, dm, cfg):
    beta, gamma = _zip_start(dm)
    beta, gamma, _ = _em_step(dm, beta, gamma)
    raw, res, clamped = _direct(spec, dm, np.concatenate([beta, gamma]), cfg)
    return _build_model(spec, dm, raw, res.converged, clamped)


def _fit_zinb(spec, dm, cfg):
    y = dm.y.astype(float)
    nb = _fit_negbin(ModelSpec("negbin", spec.count_covariates), dm, cfg)
    theta = nb.dispersion
    f0 = np.exp(theta * (math.log(theta) - np.logaddexp(math.log(theta), np.log(nb.fitted_lambda))))
    gamma = np.zeros(dm.Z.shape[1])
    gamma[0] = _excess_zero_start(y, f0)
    starts = [np.concatenate([nb.beta_count, gamma, [math.log(theta)]])]
    # second start from the ZIP optimum with negligible overdispersion
    zip_m = _fit_zip(ModelSpec("zip", spec.count_covariates, spec.zero_covariates), dm, cfg)
    starts.append(np.concatenate([zip_m.beta_count, zip_m.gamma_zero, [math.log(1e4)]]))
    best = None
    for s in starts:
        try:
            raw, res, clamped = _direct(spec, dm, s, cfg)
        except FitError:
            continue
        cand = (-res.fun, raw, res.converged, clamped)
        if best is None or cand[0] > best[0] + 1e-9:
            best = cand
    if best is None:
        raise FitError("ZINB optimisation failed from every starting point")
    return _build_model(spec, dm, best[1], best[2], best[3])


def fit(spec: ModelSpec, dm: DesignMatrices, cfg: OptimizerConfig | None = None,
        method: str = "auto") -> FittedModel:
    """Maximum-likelihood fit of ``spec`` on ``dm``.

    ``method="auto"`` uses the closed form for linear and quasi-Newton on the
    joint likelihood for the other families (ZIP started from one EM pass,
    negative binomial from alternating beta/theta profiling). ``"irls"``
    selects the Poisson IRLS path and ``"em"`` the full ZIP EM path.
    A fit that stops before convergence is returned with
    ``converged=False`` and a warning.
    """
    cfg = cfg or OptimizerConfig()
    _prepare(spec, dm)
    fam = spec.family
    if method == "irls" and fam == "poisson":
        m = fit_poisson_irls(dm)
    elif method == "em" and fam == "zip":
        m = fit_zip_em(dm)
    elif method != "auto":
        raise DataError(f"method {method!r} is not available for {fam}")
    elif fam == "linear":
        m = _fit_linear(spec, dm)
    elif fam == "poisson":
        m = _fit_direct_poisson(spec, dm, cfg)
    elif fam == "negbin":
        m = _fit_negbin(spec, dm, cfg)
    elif fam == "zip":
        m = _fit_zip(spec, dm, cfg)
    else:
        m = _fit_zinb(spec, dm, cfg)
    if not m.converged:
        warnings.warn(f"{spec.describe()} did not converge", RuntimeWarning, stacklevel=2)
    if m.clamped:
        log.warning("%s: linear predictor clamped to [-500, 500]", spec.describe())
    return m


# -- inference and prediction -------------------------------------------------

def standard_errors(m: FittedModel, dm: DesignMatrices) -> np.ndarray:
    """Standard errors from the inverse observed information (packed order).

    The Hessian is a central difference of the analytic gradient taken on
    the scaled parameterisation, then mapped back to raw coefficients.
    """
    spec = m.spec
    prob = _Problem(spec, dm)
    u = prob.to_scaled(m.params)
    H = numerics.finite_diff_jacobian(prob.gradient, u)
    cov_u = np.linalg.inv(H)
    cov = prob.T @ cov_u @ prob.T.T
    return np.sqrt(np.diag(cov))


def _check_predict_shapes(m: FittedModel, dm: DesignMatrices) -> None:
    if dm.X.shape[1] != m.beta_count.size:
        raise ShapeMismatch(f"count design has {dm.X.shape[1]} columns, model has {m.beta_count.size}")
    if m.gamma_zero is not None and (dm.Z is None or dm.Z.shape[1] != m.gamma_zero.size):
        raise ShapeMismatch("zero design does not match the model's zero component")


def predict_expected(m: FittedModel, dm: DesignMatrices) -> np.ndarray:
    """Per-module expected bug count under the fitted model."""
    _check_predict_shapes(m, dm)
    eta = dm.X @ m.beta_count
    if m.family == "linear":
        return eta
    lam = np.exp(clamp_eta(eta)[0])
    if m.gamma_zero is None:
        return lam
    pi = expit(clamp_eta(dm.Z @ m.gamma_zero)[0])
    return (1.0 - pi) * lam


def predict_total(m: FittedModel, dm: DesignMatrices) -> float:
    return float(np.sum(predict_expected(m, dm)))
