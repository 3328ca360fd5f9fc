"""Closed-form survival probabilities of drifted Brownian motion.

Without claims the two lines are independent drifted Brownian motions
absorbed at zero, so the two-line minimum survival probability is the
product of the one-dimensional reflection formulas below.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtr


def drifted_bm_survival(x, c, sigma, duration):
    """P(x + c s + sigma W_s > 0 for all s <= duration).

    Uses ``N((x + c T)/(sigma sqrt T)) - exp(-2 c x / sigma^2) N((c T - x)/(sigma sqrt T))``
    with the second term evaluated in log space.
    """
    x = np.asarray(x, dtype=float)
    duration = np.asarray(duration, dtype=float)
    sd = sigma * np.sqrt(duration)
    with np.errstate(divide="ignore", invalid="ignore"):
        first = ndtr((x + c * duration) / sd)
        second = np.exp(-2.0 * c * x / sigma**2 + log_ndtr((c * duration - x) / sd))
        out = first - second
    out = np.where(x <= 0, 0.0, out)
    out = np.where((duration <= 0) & (x > 0), 1.0, out)
    return np.clip(out, 0.0, 1.0)[()]


def drifted_bm_ultimate_survival(x, c, sigma):
    """Infinite-horizon limit ``1 - exp(-2 c x / sigma^2)`` (0 when c <= 0)."""
    x = np.asarray(x, dtype=float)
    if c <= 0:
        return np.zeros_like(x)[()]
    return np.where(x > 0, -np.expm1(-2.0 * c * np.maximum(x, 0.0) / sigma**2), 0.0)[()]


def diffusion_survival(params, x1, x2, duration):
    """Two-line minimum survival for the claim-free model."""
    return drifted_bm_survival(x1, params.c1, params.sigma1, duration) * drifted_bm_survival(
        x2, params.c2, params.sigma2, duration
    )


def diffusion_ultimate_survival(params, x1, x2):
    return drifted_bm_ultimate_survival(x1, params.c1, params.sigma1) * drifted_bm_ultimate_survival(
        x2, params.c2, params.sigma2
    )
