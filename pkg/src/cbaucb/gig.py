"""Generalized inverse Gaussian distribution GIG(p, a, b).

Density on x > 0::

    f(x) = (a/b)^(p/2) / (2 K_p(sqrt(a b))) * x^(p-1) * exp(-(a x + b/x) / 2)

Natural coordinates follow the sign convention used by the variational
updates, ``eta = (p - 1, -a/2, b/2)``, so that the second component is
negative and the third positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .special import DomainError, log_bessel_k

__all__ = [
    "GigParams",
    "GigNatural",
    "B_FLOOR",
    "gig_to_natural",
    "natural_to_gig",
    "gig_mean",
    "gig_inv_mean",
    "gig_log_density",
    "gig_moments",
    "gig_moments_and_log_k",
]

# b -> 0 happens when a coefficient is shrunk to numerical zero
B_FLOOR = 1e-300


@dataclass(frozen=True)
class GigParams:
    p: float
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0.0 and self.b > 0.0):
            raise DomainError(f"GIG requires a > 0 and b > 0, got a={self.a!r}, b={self.b!r}")


@dataclass(frozen=True)
class GigNatural:
    eta1: float
    eta2: float
    eta3: float

    def __post_init__(self):
        if not (self.eta2 < 0.0 and self.eta3 > 0.0):
            raise DomainError(
                f"GIG natural parameters need eta2 < 0 and eta3 > 0, got {self.eta2!r}, {self.eta3!r}"
            )


def gig_to_natural(params: GigParams) -> GigNatural:
    return GigNatural(params.p - 1.0, -params.a / 2.0, params.b / 2.0)


def natural_to_gig(nat: GigNatural) -> GigParams:
    return GigParams(nat.eta1 + 1.0, -2.0 * nat.eta2, 2.0 * nat.eta3)


def gig_moments(p, a, b):
    """Return ``(E[x], E[1/x])`` for arrays of GIG parameters.

    ``b`` (and ``a``) are floored at ``B_FLOOR`` so that a coefficient
    shrunk to zero yields a huge but finite ``E[1/x]`` instead of NaN.
    """
    mean, inv_mean, _ = gig_moments_and_log_k(p, a, b)
    return mean, inv_mean


def gig_moments_and_log_k(p, a, b):
    """``gig_moments`` plus ``ln K_p(sqrt(a b))``, which the entropy needs."""
    p = np.asarray(p, dtype=np.float64)
    a = np.maximum(np.asarray(a, dtype=np.float64), B_FLOOR)
    b = np.maximum(np.asarray(b, dtype=np.float64), B_FLOOR)
    p, a, b = np.broadcast_arrays(p, a, b)
    v = np.sqrt(a * b)
    half_log_ratio = 0.5 * (np.log(b) - np.log(a))
    # K_{-p} == K_p, and K_{1-p} == K_{p-1}; one stacked call for all three orders
    lk = np.asarray(log_bessel_k(np.stack([p, p + 1.0, 1.0 - p]), v[None, ...]))
    lk_p, lk_p1, lk_1mp = lk[0], lk[1], lk[2]
    mean = np.exp(half_log_ratio + lk_p1 - lk_p)
    inv_mean = np.exp(-half_log_ratio + lk_1mp - lk_p)
    if mean.ndim == 0:
        return float(mean), float(inv_mean), float(lk_p)
    return mean, inv_mean, lk_p


def gig_mean(params: GigParams) -> float:
    """E[x] = sqrt(b/a) K_{p+1}(v) / K_p(v) with v = sqrt(a b)."""
    return float(gig_moments(params.p, params.a, params.b)[0])


def gig_inv_mean(params: GigParams) -> float:
    """E[1/x] = sqrt(a/b) K_{1-p}(v) / K_{-p}(v) with v = sqrt(a b)."""
    return float(gig_moments(params.p, params.a, params.b)[1])


def gig_log_density(params: GigParams, x: float) -> float:
    if not x > 0.0:
        raise DomainError(f"GIG density requires x > 0, got {x!r}")
    p, a, b = params.p, params.a, params.b
    return (
        0.5 * p * math.log(a / b)
        - math.log(2.0)
        - log_bessel_k(p, math.sqrt(a * b))
        + (p - 1.0) * math.log(x)
        - 0.5 * (a * x + b / x)
    )
