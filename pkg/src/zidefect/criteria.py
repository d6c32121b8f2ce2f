"""Information criteria. Lower is better for all of them."""

import math


def aic(loglik: float, k: int) -> float:
    """Akaike information criterion, ``2k - 2 loglik``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    return 2.0 * k - 2.0 * loglik


def bic(loglik: float, k: int, n: int) -> float:
    """Schwarz criterion, ``k ln(n) - 2 loglik``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if k < 0:
        raise ValueError("k must be non-negative")
    return k * math.log(n) - 2.0 * loglik
