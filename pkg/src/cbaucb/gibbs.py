"""Systematic-scan Gibbs sampler over the exact TPBN full conditionals.

This is the ground-truth reference for the variational posteriors and is
not meant for production inference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .gig import B_FLOOR
from .vb import ArmHistory, TpbnHyper

__all__ = ["GigSamplingError", "GibbsDraw", "GibbsSummary", "sample_gig", "gibbs_run"]

_MAX_TRIES = 10_000


class GigSamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GibbsDraw:
    beta: np.ndarray
    sigma2inv: float
    tau: np.ndarray
    lam: np.ndarray
    phi: float
    omega: float


@dataclass
class GibbsSummary:
    beta_mean: np.ndarray
    beta_cov: np.ndarray
    beta: np.ndarray
    sigma2inv: np.ndarray
    tau: np.ndarray
    lam: np.ndarray
    phi: np.ndarray
    omega: np.ndarray

    @property
    def n_retained(self) -> int:
        return self.beta.shape[0]

    @property
    def beta_se(self) -> np.ndarray:
        """Monte-Carlo standard error of ``beta_mean`` with a batch-means estimate."""
        n = self.n_retained
        n_batches = max(2, min(50, n // 20))
        size = n // n_batches
        batches = self.beta[: n_batches * size].reshape(n_batches, size, -1).mean(axis=1)
        return batches.std(axis=0, ddof=1) / math.sqrt(n_batches)

    @property
    def draws(self) -> list[GibbsDraw]:
        return [
            GibbsDraw(self.beta[i], float(self.sigma2inv[i]), self.tau[i], self.lam[i],
                      float(self.phi[i]), float(self.omega[i]))
            for i in range(self.n_retained)
        ]


def _psi(x, alpha, lam):
    return -alpha * (math.cosh(x) - 1.0) - lam * (math.expm1(x) - x)


def _dpsi(x, alpha, lam):
    return -alpha * math.sinh(x) - lam * math.expm1(x)


def _sample_gig2(lam: float, omega: float, rng: np.random.Generator) -> float:
    """Draw from density proportional to x^(lam-1) exp(-omega (x + 1/x) / 2), lam >= 0.

    Devroye (2014): rejection from a three-piece envelope on the log scale,
    with a bounded expected number of trials for all (lam, omega).
    """
    alpha = math.sqrt(omega * omega + lam * lam) - lam
    degenerate = alpha == 0.0 and lam == 0.0

    x = -_psi(1.0, alpha, lam)
    if 0.5 <= x <= 2.0 or degenerate:
        t = 1.0
    elif x > 2.0:
        t = math.sqrt(2.0 / (alpha + lam))
    else:
        t = math.log(4.0 / (alpha + 2.0 * lam))

    x = -_psi(-1.0, alpha, lam)
    if 0.5 <= x <= 2.0 or degenerate:
        s = 1.0
    elif x > 2.0:
        s = math.sqrt(4.0 / (alpha * math.cosh(1.0) + lam))
    elif alpha == 0.0:
        s = 1.0 / lam
    else:
        s_alpha = math.log1p(1.0 / alpha + math.sqrt(1.0 / (alpha * alpha) + 2.0 / alpha))
        s = s_alpha if lam == 0.0 else min(1.0 / lam, s_alpha)

    eta = -_psi(t, alpha, lam)
    zeta = -_dpsi(t, alpha, lam)
    theta = -_psi(-s, alpha, lam)
    xi = _dpsi(-s, alpha, lam)
    p = 1.0 / xi
    r = 1.0 / zeta
    td = t - r * eta
    sd = s - p * theta
    q = td + sd
    total = p + q + r

    for _ in range(_MAX_TRIES):
        u, v, w = rng.random(3)
        if u < q / total:
            y = -sd + q * v
        elif u < (q + r) / total:
            y = td - r * math.log(v)
        else:
            y = -sd + p * math.log(v)
        if y > td:
            env = math.exp(-eta - zeta * (y - t))
        elif y < -sd:
            env = math.exp(-theta + xi * (y + s))
        else:
            env = 1.0
        if w * env <= math.exp(_psi(y, alpha, lam)):
            break
    else:
        raise GigSamplingError(f"GIG rejection sampler exceeded {_MAX_TRIES} trials (lam={lam}, omega={omega})")
    # undo the centring at the mode-like point lam/omega + sqrt(1 + (lam/omega)^2)
    ratio = lam / omega
    return math.exp(y) * (ratio + math.sqrt(1.0 + ratio * ratio))


def sample_gig(p: float, a: float, b: float, rng: np.random.Generator) -> float:
    """One draw from GIG(p, a, b)."""
    b = max(b, B_FLOOR)
    omega = math.sqrt(a * b)
    x = _sample_gig2(abs(p), omega, rng)
    if p < 0:
        x = 1.0 / x
    return x * math.sqrt(b / a)


def gibbs_run(
    history: ArmHistory,
    hyper: TpbnHyper,
    n_samples: int = 5000,
    burn_in: int = 1000,
    thin: int = 2,
    seed=None,
    fixed_tau=None,
) -> GibbsSummary:
    """Run the chain and summarise the retained draws.

    ``n_samples`` counts post-burn-in sweeps; every ``thin``-th one is kept.
    Passing ``fixed_tau`` freezes the local scales at those values and skips
    the tau, lambda, phi and omega updates, which leaves a conjugate
    Normal-Gamma chain with a known posterior mean.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if burn_in < 0 or thin < 1:
        raise ValueError("burn_in must be >= 0 and thin >= 1")
    rng = np.random.default_rng(seed)
    D, M = history.dim, history.M
    xtx, xtr, rtr = history.xtx, history.xtr, history.rtr

    tau = np.ones(D) if fixed_tau is None else np.asarray(fixed_tau, dtype=np.float64).copy()
    lam = np.ones(D)
    phi = 1.0
    omega = 1.0
    s = 1.0
    s_shape = (M + D + hyper.c0) / 2.0
    p_tau = hyper.a0 - 0.5

    keep = []
    total = burn_in + n_samples
    for it in range(total):
        inv_tau = np.minimum(1.0 / tau, 1e12)
        prec = xtx + np.diag(inv_tau)
        chol = linalg.cholesky(prec, lower=True, check_finite=False)
        mean = linalg.cho_solve((chol, True), xtr, check_finite=False)
        z = rng.standard_normal(D)
        beta = mean + linalg.solve_triangular(chol.T, z, lower=False, check_finite=False) / math.sqrt(s)

        resid = rtr - 2.0 * float(xtr @ beta) + float(beta @ xtx @ beta)
        s_rate = 0.5 * (max(resid, 0.0) + float(beta**2 @ inv_tau) + hyper.d0)
        s = rng.gamma(s_shape, 1.0 / s_rate)

        if fixed_tau is None:
            for j in range(D):
                tau[j] = sample_gig(p_tau, 2.0 * lam[j], beta[j] ** 2 * s, rng)
            lam = rng.gamma(hyper.a0 + hyper.b0, 1.0 / (tau + phi))
            phi = rng.gamma(D * hyper.b0 + 0.5, 1.0 / (lam.sum() + omega))
            omega = rng.gamma(1.0, 1.0 / (phi + 1.0))

        if it >= burn_in and (it - burn_in) % thin == 0:
            keep.append((beta.copy(), s, tau.copy(), lam.copy(), phi, omega))

    betas = np.array([k[0] for k in keep])
    return GibbsSummary(
        beta_mean=betas.mean(axis=0),
        beta_cov=np.atleast_2d(np.cov(betas, rowvar=False)) if len(keep) > 1 else np.zeros((D, D)),
        beta=betas,
        sigma2inv=np.array([k[1] for k in keep]),
        tau=np.array([k[2] for k in keep]),
        lam=np.array([k[3] for k in keep]),
        phi=np.array([k[4] for k in keep]),
        omega=np.array([k[5] for k in keep]),
    )
