"""Bayesian ZIP regression by Metropolis-within-Gibbs with data augmentation.

Each iteration

1. makes a random-walk Metropolis move on all coefficients jointly against
   the observed-data likelihood (indicators summed out),
2. draws latent structural-zero indicators ``w_j`` for the zero rows,
3. updates the count coefficients by a random-walk Metropolis block move
   against the Poisson likelihood of rows with ``w_j = 0``,
4. updates the zero coefficients by a random-walk Metropolis block move
   against the Bernoulli likelihood of ``w``.

Steps 1 and 2 together draw from the joint of coefficients and indicators,
which keeps the augmented chain valid while avoiding its slow mixing when
many zeros are ambiguous.

Coefficients carry independent Normal(0, prior_sd^2) priors on the raw
covariate scale. Moves are made on centred/scaled covariates (a linear
reparameterisation with constant Jacobian). During burn-in the proposal
scale follows a Robbins-Monro recursion toward 0.35 acceptance and the
proposal shape is re-estimated from recent draws; both freeze afterwards.

Random numbers: numpy PCG64, one stream per chain spawned from
``numpy.random.SeedSequence(seed)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from .count_models import _check_design, _check_response, _scaling, fit_zip_em
from .errors import ChainDiverged, ConfigError, InsufficientDraws, ShapeMismatch
from .ingest import DesignMatrices, ModelSpec
from .numerics import clamp_eta, log_softplus

log = logging.getLogger(__name__)

TARGET_ACCEPT = 0.35
RHAT_SENTINEL = 1e12
MIN_DIC_DRAWS = 100


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 3
    iterations: int = 20000
    burn_in: int = 5000
    thin: int = 1
    seed: int = 0
    prior_sd: float = 10.0
    proposal_sd: float = 0.1

    def __post_init__(self):
        if self.chains < 2:
            raise ConfigError("need at least 2 chains")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")
        if self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ConfigError("burn_in must be non-negative and smaller than iterations")
        if not (self.prior_sd > 0 and self.proposal_sd > 0):
            raise ConfigError("prior_sd and proposal_sd must be positive")

    @property
    def retained_per_chain(self) -> int:
        return len(range(0, self.iterations - self.burn_in, self.thin))


@dataclass(frozen=True, eq=False)
class PosteriorChains:
    """Retained draws, shape ``(chains, draws, 1 + p + 1 + q)`` (beta then gamma)."""

    draws: np.ndarray
    deviance: np.ndarray
    config: McmcConfig
    accept_rate: dict
    n_count: int
    param_names: tuple[str, ...] = field(default=())

    @property
    def beta(self) -> np.ndarray:
        return self.draws[..., :self.n_count]

    @property
    def gamma(self) -> np.ndarray:
        return self.draws[..., self.n_count:]

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    def posterior_mean(self) -> np.ndarray:
        return _centred_mean(self.flat())


def _centred_mean(x: np.ndarray) -> np.ndarray:
    # offset by the first draw so constant samples average exactly
    x = np.asarray(x, dtype=float)
    return x[0] + (x - x[0]).mean(axis=0)


def sample_indicators(rng: np.random.Generator, y, lam, pi) -> np.ndarray:
    """Gibbs draw of structural-zero indicators given rates and zero probabilities.

    Rows with a positive count are never structural zeros.
    """
    y = np.asarray(y)
    with np.errstate(divide="ignore"):
        log_r = np.log(pi) - np.logaddexp(np.log(pi), np.log1p(-pi) - lam)
    r = np.where(y == 0, np.exp(log_r), 0.0)
    return rng.random(r.shape) < r


def zip_deviance(dm: DesignMatrices, beta, gamma) -> float:
    """-2 x observed-data ZIP log-likelihood (latent indicators summed out)."""
    eta = clamp_eta(dm.X @ beta)[0]
    zeta = clamp_eta(dm.Z @ gamma)[0]
    y = dm.y
    lam = np.exp(eta)
    sp = log_softplus(zeta)
    ll = np.where(y == 0, np.logaddexp(zeta, -lam) - sp, -sp + y * eta - lam - gammaln(y + 1.0))
    return -2.0 * float(np.sum(ll))


class _Sampler:
    def __init__(self, dm: DesignMatrices, cfg: McmcConfig):
        self.cfg = cfg
        self.y = dm.y.astype(float)
        self.zero = dm.y == 0
        self.lgy = gammaln(self.y + 1.0)
        self.Mx = _scaling(dm.X)
        self.Mz = _scaling(dm.Z)
        self.Xs = dm.X @ self.Mx
        self.Zs = dm.Z @ self.Mz
        self.p = dm.X.shape[1]
        self.q = dm.Z.shape[1]
        self.var0 = cfg.prior_sd ** 2

    def log_prior(self, M, u):
        raw = M @ u
        return -0.5 * float(raw @ raw) / self.var0

    def count_target(self, b, w):
        eta = self.Xs @ b
        keep = ~w
        return float(np.sum((self.y * eta - np.exp(clamp_eta(eta)[0]))[keep])) + self.log_prior(self.Mx, b)

    def zero_target(self, g, w):
        zeta = self.Zs @ g
        return float(np.sum(np.where(w, zeta, 0.0) - log_softplus(zeta))) + self.log_prior(self.Mz, g)

    def deviance(self, b, g):
        eta = clamp_eta(self.Xs @ b)[0]
        zeta = clamp_eta(self.Zs @ g)[0]
        lam = np.exp(eta)
        sp = log_softplus(zeta)
        ll = np.where(self.zero, np.logaddexp(zeta, -lam) - sp, -sp + self.y * eta - lam - self.lgy)
        return -2.0 * float(np.sum(ll))

    def marginal_target(self, b, g):
        return -0.5 * self.deviance(b, g) + self.log_prior(self.Mx, b) + self.log_prior(self.Mz, g)

    def run_chain(self, rng: np.random.Generator, b, g):
        cfg = self.cfg
        n_keep = cfg.retained_per_chain
        draws = np.empty((n_keep, self.p + self.q))
        dev = np.empty(n_keep)
        blocks = {
            name: dict(L=np.eye(d), log_scale=math.log(cfg.proposal_sd), acc=0, hist=[])
            for name, d in (("joint", self.p + self.q), ("beta", self.p), ("gamma", self.q))
        }
        keep_i = 0
        cur_m = self.marginal_target(b, g)
        for it in range(cfg.iterations):
            burning = it < cfg.burn_in

            # collapsed move on (beta, gamma) with w integrated out; the Gibbs
            # draw of w right after it completes a draw from the joint
            x = np.concatenate([b, g])
            blk = blocks["joint"]
            prop = x + math.exp(blk["log_scale"]) * (blk["L"] @ rng.standard_normal(x.size))
            new_m = self.marginal_target(prop[:self.p], prop[self.p:])
            accept = math.isfinite(new_m) and math.log(rng.random()) < new_m - cur_m
            if accept:
                x, cur_m = prop, new_m
                b, g = x[:self.p].copy(), x[self.p:].copy()
            self._adapt_or_count(blk, accept, x, it, burning)

            eta = clamp_eta(self.Xs @ b)[0]
            zeta = clamp_eta(self.Zs @ g)[0]
            w = sample_indicators(rng, self.y, np.exp(eta), expit(zeta))

            # conditional moves given the indicators
            cur_b = self.count_target(b, w)
            prop = b + math.exp(blocks["beta"]["log_scale"]) * (blocks["beta"]["L"] @ rng.standard_normal(self.p))
            new_t = self.count_target(prop, w)
            accept = math.isfinite(new_t) and math.log(rng.random()) < new_t - cur_b
            if accept:
                b = prop
            self._adapt_or_count(blocks["beta"], accept, b, it, burning)

            cur_g = self.zero_target(g, w)
            prop = g + math.exp(blocks["gamma"]["log_scale"]) * (blocks["gamma"]["L"] @ rng.standard_normal(self.q))
            new_t = self.zero_target(prop, w)
            accept = math.isfinite(new_t) and math.log(rng.random()) < new_t - cur_g
            if accept:
                g = prop
            self._adapt_or_count(blocks["gamma"], accept, g, it, burning)

            if not (np.all(np.isfinite(b)) and np.all(np.isfinite(g))):
                raise ChainDiverged(f"non-finite state at iteration {it}")
            d = self.deviance(b, g)
            if not math.isfinite(d):
                raise ChainDiverged(f"non-finite deviance at iteration {it}")
            cur_m = -0.5 * d + self.log_prior(self.Mx, b) + self.log_prior(self.Mz, g)
            if not burning and (it - cfg.burn_in) % cfg.thin == 0:
                draws[keep_i, :self.p] = self.Mx @ b
                draws[keep_i, self.p:] = self.Mz @ g
                dev[keep_i] = d
                keep_i += 1
        post = cfg.iterations - cfg.burn_in
        rates = {name: blk["acc"] / post for name, blk in blocks.items()}
        return draws, dev, rates

    def _adapt_or_count(self, blk, accept, x, it, burning):
        if not burning:
            blk["acc"] += int(accept)
            return
        blk["log_scale"] += ((1.0 if accept else 0.0) - TARGET_ACCEPT) / (it + 1) ** 0.6
        blk["hist"].append(x.copy())
        if (it + 1) % 500 == 0 and len(blk["hist"]) >= 200:
            self._reshape(blk, x.size)

    @staticmethod
    def _reshape(blk, d):
        recent = np.array(blk["hist"][-len(blk["hist"]) // 2:])
        cov = np.cov(recent, rowvar=False).reshape(d, d)
        # keep the magnitude in log_scale, only the shape in L
        cov = cov + 1e-10 * np.trace(cov) / d * np.eye(d) + 1e-300 * np.eye(d)
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            return
        norm = math.sqrt(np.trace(cov) / d)
        if norm > 0:
            old = math.exp(blk["log_scale"]) * math.sqrt(np.trace(blk["L"] @ blk["L"].T) / d)
            blk["L"] = L / norm
            blk["log_scale"] = math.log(max(old, 1e-12))


def sample_zip_posterior(dm: DesignMatrices, cfg: McmcConfig | None = None,
                         start=None) -> PosteriorChains:
    """Sample the ZIP posterior for the design ``dm`` (which must carry Z).

    Chains start at the EM maximum-likelihood estimate (or ``start``, packed
    raw ``[beta, gamma]``) jittered by independent N(0, 0.1^2) noise on the
    scaled coordinates.
    """
    cfg = cfg or McmcConfig()
    if dm.Z is None:
        raise ShapeMismatch("ZIP sampling needs a zero-component design")
    spec = ModelSpec("zip", dm.spec.count_covariates, dm.spec.zero_covariates)
    _check_response(spec, dm)
    _check_design(dm)
    s = _Sampler(dm, cfg)
    if start is None:
        start = fit_zip_em(dm).params
    start = np.asarray(start, dtype=float)
    b0 = np.linalg.solve(s.Mx, start[:s.p])
    g0 = np.linalg.solve(s.Mz, start[s.p:])

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    all_draws, all_dev = [], []
    rates = {"joint": [], "beta": [], "gamma": []}
    for c in range(cfg.chains):
        rng = np.random.Generator(np.random.PCG64(seeds[c]))
        b = b0 + 0.1 * rng.standard_normal(s.p)
        g = g0 + 0.1 * rng.standard_normal(s.q)
        draws, dev, r = s.run_chain(rng, b, g)
        all_draws.append(draws)
        all_dev.append(dev)
        for name in rates:
            rates[name].append(r[name])
            if not 0.1 <= r[name] <= 0.6:
                log.info("chain %d: %s acceptance %.3f outside [0.1, 0.6]", c, name, r[name])

    names = tuple(["count:intercept"] + [f"count:{c}" for c in spec.count_covariates]
                  + ["zero:intercept"] + [f"zero:{c}" for c in spec.zero_covariates])
    return PosteriorChains(
        draws=np.stack(all_draws),
        deviance=np.stack(all_dev),
        config=cfg,
        accept_rate=rates,
        n_count=s.p,
        param_names=names,
    )


@dataclass(frozen=True)
class DicResult:
    dic: float
    p_d: float
    mean_deviance: float
    deviance_at_mean: float
    negative_pd: bool

    def __iter__(self):
        return iter((self.dic, self.p_d, self.mean_deviance))


def dic(p: PosteriorChains, dm: DesignMatrices) -> DicResult:
    """Deviance information criterion with p_D = mean deviance - deviance at the posterior mean."""
    if p.deviance.size < MIN_DIC_DRAWS:
        raise InsufficientDraws(f"DIC needs at least {MIN_DIC_DRAWS} draws, have {p.deviance.size}")
    mean_dev = float(_centred_mean(p.deviance.ravel()))
    theta_bar = p.posterior_mean()
    d_bar_theta = zip_deviance(dm, theta_bar[:p.n_count], theta_bar[p.n_count:])
    p_d = mean_dev - d_bar_theta
    if p_d < 0:
        log.warning("DIC: negative effective parameter count p_D = %.4g", p_d)
    return DicResult(mean_dev + p_d, p_d, mean_dev, d_bar_theta, p_d < 0)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance at lags 0..n-1 by FFT (biased estimator)."""
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def split_rhat(chains: np.ndarray) -> float:
    """Split-R-hat for one scalar; ``chains`` has shape (chains, draws)."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    half = n // 2
    if half < 2:
        raise InsufficientDraws("split R-hat needs at least 4 draws per chain")
    sp = np.concatenate([chains[:, :half], chains[:, n - half:]])
    means = sp.mean(axis=1)
    W = float(np.mean(sp.var(axis=1, ddof=1)))
    B = half * float(np.var(means, ddof=1))
    if W == 0:
        return 1.0 if B == 0 else RHAT_SENTINEL
    var_plus = (half - 1) / half * W + B / half
    return math.sqrt(var_plus / W)


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    if n < 4:
        raise InsufficientDraws("ESS needs at least 4 draws per chain")
    acov = np.array([_autocov(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1)
    W = float(np.mean(chain_var))
    means = chains.mean(axis=1)
    B_over_n = float(np.var(means, ddof=1)) if m > 1 else 0.0
    var_plus = W * (n - 1) / n + B_over_n
    if var_plus == 0:
        return float(m * n)
    rho = 1.0 - (W - np.mean(acov, axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums, positive and monotone
    tau = -1.0
    prev = math.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
        t += 2
    tau = max(tau, 1.0 / math.log10(m * n + 10))
    return m * n / tau


def diagnostics(p: PosteriorChains) -> dict[str, tuple[float, float]]:
    """Per-parameter ``(split R-hat, ESS)``."""
    if p.draws.shape[0] < 2:
        raise InsufficientDraws("diagnostics need at least 2 chains")
    if p.draws.shape[1] < 4:
        raise InsufficientDraws("diagnostics need at least 4 draws per chain")
    out = {}
    names = p.param_names or tuple(f"theta{i}" for i in range(p.draws.shape[-1]))
    for i, name in enumerate(names):
        c = p.draws[:, :, i]
        out[name] = (split_rhat(c), effective_sample_size(c))
    return out
