"""Mean-field variational Bayes for linear regression under a TPBN prior.

Generative model for one arm::

    r_m | beta, s      ~ N(x_m' beta, 1/s)
    beta_j | s, tau_j  ~ N(0, tau_j / s)
    tau_j | lambda_j   ~ Gamma(a0, lambda_j)
    lambda_j | phi     ~ Gamma(b0, phi)
    phi | omega        ~ Gamma(1/2, omega)
    omega              ~ Gamma(1/2, 1)
    s                  ~ Gamma(c0/2, d0/2)

Gamma distributions use (shape, rate). The mean-field posterior is a
Gaussian over beta, GIG factors over each tau_j and Gamma factors over the
rest; ``vb_sweep`` performs one coordinate-ascent pass in the order
beta, s, tau, lambda, phi, omega.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .gig import GigParams, gig_moments_and_log_k
from .special import log_bessel_k

__all__ = [
    "TpbnHyper",
    "GammaParams",
    "ArmHistory",
    "VariationalState",
    "INV_TAU_CLAMP",
    "init_state",
    "vb_sweep",
    "compute_elbo",
    "vb_fit",
    "converged",
]

INV_TAU_CLAMP = (1e-12, 1e12)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TpbnHyper:
    """Prior hyper-parameters. ``a0 = b0 = 1/2`` gives the horseshoe."""

    a0: float = 0.5
    b0: float = 0.5
    c0: float = 1e-6
    d0: float = 1e-6

    def __post_init__(self):
        for name in ("a0", "b0", "c0", "d0"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class GammaParams:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0.0 and self.rate > 0.0):
            raise ValueError(f"Gamma requires shape > 0 and rate > 0, got ({self.shape!r}, {self.rate!r})")

    @property
    def mean(self) -> float:
        return self.shape / self.rate


class ArmHistory:
    """Design matrix and rewards observed for one arm.

    Rows can be appended one at a time; the Gram matrix ``X'X``, ``X'r``
    and ``r'r`` are maintained alongside so that a VB sweep costs
    O(D^3) regardless of the number of rows.
    """

    def __init__(self, X=None, r=None, dim: int | None = None):
        if X is None:
            if dim is None:
                raise ValueError("either X or dim is required")
            X = np.zeros((0, dim))
            r = np.zeros(0)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        r = np.asarray(r, dtype=np.float64).reshape(-1)
        if X.shape[0] != r.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but r has {r.shape[0]} entries")
        self.dim = X.shape[1]
        self._X = np.array(X)
        self._r = np.array(r)
        self._m = X.shape[0]
        self.xtx = X.T @ X
        self.xtr = X.T @ r
        self.rtr = float(r @ r)

    @property
    def M(self) -> int:
        return self._m

    @property
    def X(self) -> np.ndarray:
        return self._X[: self._m]

    @property
    def r(self) -> np.ndarray:
        return self._r[: self._m]

    def append(self, x, reward: float) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"context has {x.shape[0]} entries, expected {self.dim}")
        if self._m == self._X.shape[0]:
            cap = max(8, 2 * self._m)
            X_new = np.zeros((cap, self.dim))
            r_new = np.zeros(cap)
            X_new[: self._m] = self._X[: self._m]
            r_new[: self._m] = self._r[: self._m]
            self._X, self._r = X_new, r_new
        self._X[self._m] = x
        self._r[self._m] = reward
        self._m += 1
        self.xtx += np.outer(x, x)
        self.xtr += reward * x
        self.rtr += reward * reward

    def copy(self) -> "ArmHistory":
        return ArmHistory(self.X, self.r)

    def __len__(self) -> int:
        return self._m


@dataclass
class VariationalState:
    """Full mean-field posterior for one arm, with cached moments.

    Per-dimension GIG and Gamma factors are stored as parallel arrays
    (``tau_p``, ``tau_a``, ``tau_b``; ``lam_shape``, ``lam_rate``).
    """

    D: int
    mu_beta: np.ndarray
    sigma_beta: np.ndarray
    sigma2inv: GammaParams
    tau_p: np.ndarray
    tau_a: np.ndarray
    tau_b: np.ndarray
    lam_shape: np.ndarray
    lam_rate: np.ndarray
    phi: GammaParams
    omega: GammaParams
    mean_tau: np.ndarray
    mean_inv_tau: np.ndarray
    mean_lambda: np.ndarray
    mean_phi: float
    mean_omega: float
    mean_sigma2inv: float
    # ln K_p(sqrt(a b)) per dimension, kept for the ELBO
    log_k_tau: np.ndarray = field(default=None, repr=False)
    # log|Sigma_beta|
    logdet_sigma: float = 0.0
    converged: bool = True
    n_iter: int = 0

    @property
    def tau(self) -> list[GigParams]:
        return [GigParams(float(p), float(a), float(b)) for p, a, b in zip(self.tau_p, self.tau_a, self.tau_b)]

    @property
    def lam(self) -> list[GammaParams]:
        return [GammaParams(float(s), float(r)) for s, r in zip(self.lam_shape, self.lam_rate)]

    @property
    def mean_beta_sq(self) -> np.ndarray:
        """<beta_j^2> = Sigma_jj + mu_j^2."""
        return np.diag(self.sigma_beta) + self.mu_beta**2

    def copy(self) -> "VariationalState":
        return copy.deepcopy(self)

    def refresh_moments(self) -> None:
        """Recompute every cached moment from the factor parameters."""
        self.mean_sigma2inv = self.sigma2inv.mean
        self._refresh_tau()
        self.mean_lambda = self.lam_shape / self.lam_rate
        self.mean_phi = self.phi.mean
        self.mean_omega = self.omega.mean
        sign, logdet = np.linalg.slogdet(self.sigma_beta)
        if sign <= 0:
            raise np.linalg.LinAlgError("sigma_beta is not positive definite")
        self.logdet_sigma = float(logdet)

    def _refresh_tau(self) -> None:
        mean, inv_mean, log_k = gig_moments_and_log_k(self.tau_p, self.tau_a, self.tau_b)
        self.mean_tau = mean
        self.mean_inv_tau = np.clip(inv_mean, *INV_TAU_CLAMP)
        self.log_k_tau = np.asarray(log_k, dtype=np.float64).reshape(-1)


def init_state(D: int, hyper: TpbnHyper) -> VariationalState:
    """Prior-like starting point: mu = 0, Sigma = I, every scalar moment 1.

    Gamma factors get their fixed shapes with rate equal to shape. The GIG
    factors get the parameters their update would produce from these
    moments, (a0 - 1/2, 2, 1); their cached moments are still set to 1.
    """
    if D < 1:
        raise ValueError(f"D must be at least 1, got {D}")
    ones = np.ones(D)
    s_shape = (D + hyper.c0) / 2.0
    state = VariationalState(
        D=D,
        mu_beta=np.zeros(D),
        sigma_beta=np.eye(D),
        sigma2inv=GammaParams(s_shape, s_shape),
        tau_p=np.full(D, hyper.a0 - 0.5),
        tau_a=np.full(D, 2.0),
        tau_b=np.ones(D),
        lam_shape=np.full(D, hyper.a0 + hyper.b0),
        lam_rate=np.full(D, hyper.a0 + hyper.b0),
        phi=GammaParams(D * hyper.b0 + 0.5, D * hyper.b0 + 0.5),
        omega=GammaParams(1.0, 1.0),
        mean_tau=ones.copy(),
        mean_inv_tau=ones.copy(),
        mean_lambda=ones.copy(),
        mean_phi=1.0,
        mean_omega=1.0,
        mean_sigma2inv=1.0,
    )
    v = np.sqrt(2.0)
    state.log_k_tau = np.full(D, log_bessel_k(hyper.a0 - 0.5, v))
    state.logdet_sigma = 0.0
    return state


def _update_beta(state: VariationalState, history: ArmHistory) -> None:
    prec = history.xtx + np.diag(state.mean_inv_tau)
    try:
        chol = linalg.cho_factor(prec, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"X'X + T^-1 is not positive definite (min <1/tau> = {state.mean_inv_tau.min():.3e})"
        ) from exc
    state.mu_beta = linalg.cho_solve(chol, history.xtr, check_finite=False)
    prec_inv = linalg.cho_solve(chol, np.eye(state.D), check_finite=False)
    prec_inv = 0.5 * (prec_inv + prec_inv.T)
    state.sigma_beta = prec_inv / state.mean_sigma2inv
    state.logdet_sigma = float(-2.0 * np.sum(np.log(np.diag(chol[0]))) - state.D * math.log(state.mean_sigma2inv))


def _expected_sq_error(state: VariationalState, history: ArmHistory) -> float:
    """E||r - X beta||^2 = r'r - 2 r'X<beta> + sum_m x_m' <beta beta'> x_m."""
    bb = state.sigma_beta + np.outer(state.mu_beta, state.mu_beta)
    return history.rtr - 2.0 * float(history.xtr @ state.mu_beta) + float(np.sum(history.xtx * bb))


def _update_sigma2inv(state: VariationalState, history: ArmHistory, hyper: TpbnHyper) -> None:
    shape = (history.M + state.D + hyper.c0) / 2.0
    quad = _expected_sq_error(state, history) + float(state.mean_beta_sq @ state.mean_inv_tau)
    rate = max((quad + hyper.d0) / 2.0, 1e-300)
    state.sigma2inv = GammaParams(shape, rate)
    state.mean_sigma2inv = shape / rate


def _update_tau(state: VariationalState, hyper: TpbnHyper) -> None:
    state.tau_p = np.full(state.D, hyper.a0 - 0.5)
    state.tau_a = 2.0 * state.mean_lambda
    state.tau_b = state.mean_beta_sq * state.mean_sigma2inv
    state._refresh_tau()


def _update_lambda(state: VariationalState, hyper: TpbnHyper) -> None:
    state.lam_shape = np.full(state.D, hyper.a0 + hyper.b0)
    state.lam_rate = state.mean_tau + state.mean_phi
    state.mean_lambda = state.lam_shape / state.lam_rate


def _update_phi(state: VariationalState, hyper: TpbnHyper) -> None:
    state.phi = GammaParams(state.D * hyper.b0 + 0.5, state.mean_omega + float(np.sum(state.mean_lambda)))
    state.mean_phi = state.phi.mean


def _update_omega(state: VariationalState) -> None:
    state.omega = GammaParams(1.0, state.mean_phi + 1.0)
    state.mean_omega = state.omega.mean


def _check_dims(state: VariationalState, history: ArmHistory) -> None:
    if history.dim != state.D:
        raise ValueError(f"history has {history.dim} columns but the state has D={state.D}")


def _sweep_inplace(state: VariationalState, history: ArmHistory, hyper: TpbnHyper) -> None:
    _update_beta(state, history)
    _update_sigma2inv(state, history, hyper)
    _update_tau(state, hyper)
    _update_lambda(state, hyper)
    _update_phi(state, hyper)
    _update_omega(state)


def vb_sweep(state: VariationalState, history: ArmHistory, hyper: TpbnHyper) -> VariationalState:
    """One coordinate-ascent cycle; returns a new state."""
    _check_dims(state, history)
    new = state.copy()
    _sweep_inplace(new, history, hyper)
    return new


def compute_elbo(state: VariationalState, history: ArmHistory, hyper: TpbnHyper) -> float:
    """Evidence lower bound of the current mean-field posterior.

    Every expected-log term (<ln s>, <ln tau_j>, <ln lambda_j>, <ln phi>,
    <ln omega>) carries the same coefficient in E[ln p] and E[ln q] because
    all shapes are fixed by the model, so they cancel and no digamma or
    Bessel-order derivative is required. This relies on the shapes having
    their update values, which holds after any sweep or natural-gradient
    step.
    """
    _check_dims(state, history)
    D, M = state.D, history.M
    es = state.mean_sigma2inv
    etau, einv = state.mean_tau, state.mean_inv_tau
    elam, ephi, eom = state.mean_lambda, state.mean_phi, state.mean_omega
    beta_sq = state.mean_beta_sq
    c, d = state.sigma2inv.shape, state.sigma2inv.rate

    # E ln p(r|beta,s) + E ln p(beta|s,tau) + E ln p(s), log-terms removed
    total = -0.5 * (M + D) * _LOG_2PI
    total -= 0.5 * es * (_expected_sq_error(state, history) + float(beta_sq @ einv) + hyper.d0)
    total += 0.5 * hyper.c0 * math.log(hyper.d0 / 2.0) - math.lgamma(hyper.c0 / 2.0)
    # E ln p(tau|lambda) + E ln p(lambda|phi) + E ln p(phi|omega) + E ln p(omega)
    total -= D * math.lgamma(hyper.a0) + float(elam @ etau)
    total -= D * math.lgamma(hyper.b0) + ephi * float(np.sum(elam))
    total -= 2.0 * math.lgamma(0.5) + eom * ephi + eom

    # entropies
    total += 0.5 * D * (1.0 + _LOG_2PI) + 0.5 * state.logdet_sigma
    total += -c * math.log(d) + math.lgamma(c) + d * es
    a = np.maximum(state.tau_a, 1e-300)
    b = np.maximum(state.tau_b, 1e-300)
    total += float(np.sum(
        -0.5 * state.tau_p * (np.log(a) - np.log(b)) + math.log(2.0) + state.log_k_tau
        + 0.5 * (a * etau + b * einv)
    ))
    total += float(np.sum(-state.lam_shape * np.log(state.lam_rate) + gammaln(state.lam_shape)
                          + state.lam_rate * elam))
    for g, m in ((state.phi, ephi), (state.omega, eom)):
        total += -g.shape * math.log(g.rate) + math.lgamma(g.shape) + g.rate * m
    return float(total)


def converged(prev: float, cur: float, tol: float) -> bool:
    """Relative-with-offset stopping rule shared by every fitting loop."""
    return abs(cur - prev) <= tol * (1.0 + abs(prev))


def vb_fit(
    history: ArmHistory,
    hyper: TpbnHyper,
    tol: float = 1e-8,
    max_iter: int = 500,
    init: VariationalState | None = None,
) -> tuple[VariationalState, list[float]]:
    """Run sweeps until the ELBO stabilises or ``max_iter`` is reached.

    Returns the final state and the ELBO after each sweep. A run that hits
    ``max_iter`` is returned with ``state.converged = False``.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    state = init_state(history.dim, hyper) if init is None else init.copy()
    _check_dims(state, history)
    trace: list[float] = []
    state.converged = False
    for it in range(max_iter):
        _sweep_inplace(state, history, hyper)
        trace.append(compute_elbo(state, history, hyper))
        if it > 0 and converged(trace[-2], trace[-1], tol):
            state.converged = True
            break
    state.n_iter = len(trace)
    return state, trace
