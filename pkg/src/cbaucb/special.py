"""Scalar special functions used by the GIG moments, the ELBO and the UCB index.

Everything here works in the log domain where magnitudes can leave the
double range. ``log_bessel_k`` seeds from the exponentially scaled Bessel
function at orders in ``[0, 1]`` and climbs to the requested order with the
ratio form of the three-term recurrence, which is stable in the upward
direction for the second-kind function.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special as _sp

__all__ = [
    "DomainError",
    "log_gamma",
    "log_bessel_k",
    "bessel_k_ratio",
    "gaussian_quantile",
    "inv_erf",
]

_EULER_GAMMA = 0.5772156649015329


class DomainError(ValueError):
    """Raised when an argument lies outside a function's domain."""


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite, got {x!r}")
    return arr


def _unwrap(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def log_gamma(x):
    """Natural log of the gamma function for positive arguments.

    Accepts a scalar or an array; raises ``DomainError`` on non-positive or
    non-finite input.
    """
    arr = _as_float_array(x, "x")
    if np.any(arr <= 0.0):
        raise DomainError(f"log_gamma requires x > 0, got {x!r}")
    return _unwrap(_sp.gammaln(arr))


def _log_k_seed(nu, x):
    """log K_nu(x) for nu in [0, 1], with small-argument fallbacks."""
    # kve misbehaves at subnormal orders; K is flat in nu at 0, so flush them
    nu = np.where(nu < 1e-300, 0.0, nu)
    with np.errstate(divide="ignore", over="ignore"):
        out = np.asarray(np.log(_sp.kve(nu, x)) - x)
    # only overflow at tiny x is repaired; large x legitimately gives -inf
    bad = ~np.isfinite(out) & (np.broadcast_to(x, out.shape) < 1.0)
    if np.any(bad):
        nb = np.broadcast_to(nu, out.shape)[bad]
        xb = np.broadcast_to(x, out.shape)[bad]
        # K_nu(x) ~ Gamma(nu)/2 (2/x)^nu for nu > 0, ~ -log(x/2) - gamma for nu = 0
        pos = _sp.gammaln(np.where(nb > 0, nb, 1.0)) - math.log(2.0) + nb * np.log(2.0 / xb)
        zero = np.log(-np.log(xb / 2.0) - _EULER_GAMMA)
        out = out.copy()
        out[bad] = np.where(nb > 0, pos, zero)
    return out


def log_bessel_k(order, x):
    """Log of the modified Bessel function of the second kind, ln K_order(x).

    Parameters
    ----------
    order : float or array_like
        Real order; only ``|order|`` matters since K is even in its order.
    x : float or array_like
        Positive argument. Broadcast against ``order``.

    Returns
    -------
    float or ndarray
        ``ln K_order(x)``, finite without intermediate overflow for
        ``x`` down to about 1e-300 and orders up to several hundred.
    """
    nu = np.abs(_as_float_array(order, "order"))
    xa = _as_float_array(x, "x")
    if np.any(xa <= 0.0):
        raise DomainError(f"log_bessel_k requires x > 0, got {x!r}")
    nu, xa = np.broadcast_arrays(nu, xa)
    n = np.floor(nu)
    nu0 = nu - n
    result = _log_k_seed(nu0, xa)
    n_max = int(n.max()) if n.size else 0
    if n_max > 0:
        # K_{nu0+1}/K_{nu0} via K_{nu0+1} = K_{1-nu0} + (2 nu0/x) K_{nu0}
        ratio = np.exp(_log_k_seed(1.0 - nu0, xa) - result) + 2.0 * nu0 / xa
        acc = np.zeros_like(result)
        for k in range(n_max):
            active = k < n
            acc = acc + np.where(active, np.log(ratio), 0.0)
            ratio = 1.0 / ratio + 2.0 * (nu0 + k + 1) / xa
        result = result + acc
    return _unwrap(result)


def bessel_k_ratio(order_num, order_den, x):
    """K_{order_num}(x) / K_{order_den}(x), evaluated through the log domain."""
    return _unwrap(np.exp(np.asarray(log_bessel_k(order_num, x)) - np.asarray(log_bessel_k(order_den, x))))


# Acklam's rational approximation to the standard normal quantile, used only
# as the starting point for Halley refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _lower_quantile(p):
    # p in (0, 0.5]
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        )
    for _ in range(3):
        err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
        u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


def gaussian_quantile(p: float) -> float:
    """Standard normal quantile, i.e. ``sqrt(2) * erfinv(2p - 1)``.

    Raises
    ------
    DomainError
        If ``p`` is not strictly inside ``(0, 1)``.
    """
    p = float(p)
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise DomainError(f"gaussian_quantile requires 0 < p < 1, got {p!r}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        # 1 - p is exact for p in [0.5, 1]
        return -_lower_quantile(1.0 - p)
    return _lower_quantile(p)


def inv_erf(y: float) -> float:
    """Inverse error function on (-1, 1)."""
    y = float(y)
    if not (-1.0 < y < 1.0):
        raise DomainError(f"inv_erf requires -1 < y < 1, got {y!r}")
    return gaussian_quantile(0.5 * (y + 1.0)) / math.sqrt(2.0)
