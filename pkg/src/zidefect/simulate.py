"""Seeded synthetic count data and a brute-force oracle for intercept-only ZIP.

Random numbers come from numpy's PCG64 bit generator seeded through
``numpy.random.default_rng(seed)``; its output stream is fixed across
platforms for a given numpy release.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln

from .errors import ConfigError, DegenerateResponse
from .ingest import Dataset, write_csv

GRID_STEP = 1e-3


@dataclass(frozen=True)
class SimSpec:
    """Generative setup.

    ``beta_count`` is ``[intercept, x1, ..., xp]`` and ``gamma_zero`` is
    ``[intercept, z1, ..., zq]``; covariates are drawn uniformly, column
    ``x{i}`` / ``z{i}`` from ``covariate_law[name]`` or ``default_range``.
    ``dispersion`` switches the count process to NB2 with that size.
    """

    n: int
    beta_count: Sequence[float]
    gamma_zero: Sequence[float] | None = None
    dispersion: float | None = None
    covariate_law: dict | None = None
    default_range: tuple[float, float] = (0.0, 100.0)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if len(self.beta_count) < 1:
            raise ConfigError("beta_count needs at least an intercept")
        if self.gamma_zero is not None and len(self.gamma_zero) < 1:
            raise ConfigError("gamma_zero needs at least an intercept")
        if self.dispersion is not None and not self.dispersion > 0:
            raise ConfigError("dispersion must be positive")
        for name, (lo, hi) in (self.covariate_law or {}).items():
            if not hi >= lo:
                raise ConfigError(f"empty range for {name}")

    @property
    def count_names(self) -> list[str]:
        return [f"x{i}" for i in range(1, len(self.beta_count))]

    @property
    def zero_names(self) -> list[str]:
        return [] if self.gamma_zero is None else [f"z{i}" for i in range(1, len(self.gamma_zero))]


def gen_dataset(s: SimSpec) -> Dataset:
    """Draw a dataset: structural zero with prob pi_j, else Poisson/NB count."""
    rng = np.random.default_rng(s.seed)
    law = s.covariate_law or {}
    metrics = {}
    for name in s.count_names + s.zero_names:
        lo, hi = law.get(name, s.default_range)
        metrics[name] = rng.uniform(lo, hi, s.n)

    X = np.column_stack([np.ones(s.n)] + [metrics[c] for c in s.count_names])
    lam = np.exp(X @ np.asarray(s.beta_count, dtype=float))
    if s.dispersion is None:
        counts = rng.poisson(lam)
    else:
        # NB2 as a gamma-Poisson mixture, variance lam + lam^2 / theta
        counts = rng.poisson(rng.gamma(s.dispersion, lam / s.dispersion))
    if s.gamma_zero is not None:
        Z = np.column_stack([np.ones(s.n)] + [metrics[c] for c in s.zero_names])
        pi = expit(Z @ np.asarray(s.gamma_zero, dtype=float))
        structural = rng.random(s.n) < pi
        counts = np.where(structural, 0, counts)

    return Dataset(
        module_ids=tuple(f"m{j}" for j in range(s.n)),
        metrics=metrics,
        bugs=counts.astype(np.int64),
    )


def write_dataset(s: SimSpec, path) -> Dataset:
    d = gen_dataset(s)
    write_csv(d, path)
    return d


def zip_grid_loglik(y, lam, pi) -> np.ndarray:
    """Intercept-only ZIP log-likelihood from sufficient statistics.

    Broadcasts over ``lam`` and ``pi``; uses only the zero count, the
    number of positive rows and the sum of counts.
    """
    y = np.asarray(y)
    n0 = int(np.sum(y == 0))
    n1 = y.size - n0
    total = float(np.sum(y))
    const = float(np.sum(gammaln(y + 1.0)))
    lam = np.asarray(lam, dtype=float)
    pi = np.asarray(pi, dtype=float)
    with np.errstate(divide="ignore"):
        zero_part = n0 * np.log(pi + (1.0 - pi) * np.exp(-lam)) if n0 else 0.0
        pos_part = n1 * np.log1p(-pi) + total * np.log(lam) - n1 * lam if n1 else 0.0
    return zero_part + pos_part - const


def grid_mle_oracle(y, step: float = GRID_STEP) -> tuple[float, float]:
    """Exhaustive grid search for the intercept-only ZIP maximum.

    lambda ranges over ``step, 2 step, ..., 2 max(m, 1)`` where ``m`` is the
    mean of the positive counts (the maximiser always lies below ``m``), and
    pi over ``0, step, ..., 0.999``. Ties resolve to the smallest lambda,
    then the smallest pi.
    """
    y = np.asarray(y)
    if not np.any(y == 0) or not np.any(y > 0):
        raise DegenerateResponse("grid oracle needs at least one zero and one positive count")
    lam_hi = 2.0 * max(float(np.mean(y[y > 0])), 1.0)
    lams = step * np.arange(1, int(round(lam_hi / step)) + 1)
    pis = step * np.arange(0, int(round(0.999 / step)) + 1)
    best = (-np.inf, None, None)
    # chunk over lambda to bound memory
    for start in range(0, lams.size, 512):
        chunk = lams[start:start + 512]
        ll = zip_grid_loglik(y, chunk[:, None], pis[None, :])
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        if ll[i, j] > best[0]:
            best = (ll[i, j], chunk[i], pis[j])
    return float(best[1]), float(best[2])
