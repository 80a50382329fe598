"""Natural-gradient variational inference: full SVI and the one-step variant.

Every mean-field factor is an exponential family, so a natural-gradient
step on the ELBO is a convex combination of the current natural parameters
and an intermediate estimate built from one data point replicated M times.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .vb import (
    ArmHistory,
    GammaParams,
    TpbnHyper,
    VariationalState,
    compute_elbo,
    converged,
    init_state,
)

__all__ = [
    "NaturalParamSet",
    "to_natural",
    "from_natural",
    "intermediate_estimates",
    "full_data_estimates",
    "svi_step",
    "svi_fit",
    "os_svi_update",
]


@dataclass
class NaturalParamSet:
    """Natural parameters of every factor.

    ``tau`` is a ``(D, 3)`` array of GIG triples ``(p-1, -a/2, b/2)``;
    ``lam`` is ``(D, 2)``; Gamma pairs are ``(shape-1, -rate)``.
    """

    beta1: np.ndarray
    beta2: np.ndarray
    sigma2inv: np.ndarray
    tau: np.ndarray
    lam: np.ndarray
    phi: np.ndarray
    omega: np.ndarray

    @property
    def D(self) -> int:
        return self.beta1.shape[0]

    def validate(self) -> None:
        try:
            linalg.cholesky(-self.beta2, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise ValueError("beta: second natural parameter is not negative definite") from exc
        if not self.sigma2inv[1] < 0:
            raise ValueError(f"sigma2inv: second natural parameter must be < 0, got {self.sigma2inv[1]!r}")
        if not np.all(self.tau[:, 1] < 0):
            raise ValueError("tau: second natural parameter must be < 0 for every dimension")
        if not np.all(self.tau[:, 2] > 0):
            raise ValueError("tau: third natural parameter must be > 0 for every dimension")
        if not np.all(self.lam[:, 1] < 0):
            raise ValueError("lambda: second natural parameter must be < 0 for every dimension")
        if not self.phi[1] < 0:
            raise ValueError(f"phi: second natural parameter must be < 0, got {self.phi[1]!r}")
        if not self.omega[1] < 0:
            raise ValueError(f"omega: second natural parameter must be < 0, got {self.omega[1]!r}")

    def astuple(self):
        return (self.beta1, self.beta2, self.sigma2inv, self.tau, self.lam, self.phi, self.omega)


def _gamma_nat(g: GammaParams) -> np.ndarray:
    return np.array([g.shape - 1.0, -g.rate])


def to_natural(state: VariationalState) -> NaturalParamSet:
    chol = linalg.cho_factor(state.sigma_beta, lower=True)
    prec = linalg.cho_solve(chol, np.eye(state.D))
    prec = 0.5 * (prec + prec.T)
    return NaturalParamSet(
        beta1=prec @ state.mu_beta,
        beta2=-0.5 * prec,
        sigma2inv=_gamma_nat(state.sigma2inv),
        tau=np.column_stack([state.tau_p - 1.0, -state.tau_a / 2.0, state.tau_b / 2.0]),
        lam=np.column_stack([state.lam_shape - 1.0, -state.lam_rate]),
        phi=_gamma_nat(state.phi),
        omega=_gamma_nat(state.omega),
    )


def from_natural(nat: NaturalParamSet) -> VariationalState:
    """Map natural parameters back to a state and refresh all moments."""
    nat.validate()
    D = nat.D
    chol = linalg.cho_factor(-2.0 * nat.beta2, lower=True)
    sigma = linalg.cho_solve(chol, np.eye(D))
    sigma = 0.5 * (sigma + sigma.T)
    state = VariationalState(
        D=D,
        mu_beta=sigma @ nat.beta1,
        sigma_beta=sigma,
        sigma2inv=GammaParams(nat.sigma2inv[0] + 1.0, -nat.sigma2inv[1]),
        tau_p=nat.tau[:, 0] + 1.0,
        tau_a=-2.0 * nat.tau[:, 1],
        tau_b=2.0 * nat.tau[:, 2],
        lam_shape=nat.lam[:, 0] + 1.0,
        lam_rate=-nat.lam[:, 1],
        phi=GammaParams(nat.phi[0] + 1.0, -nat.phi[1]),
        omega=GammaParams(nat.omega[0] + 1.0, -nat.omega[1]),
        mean_tau=None,
        mean_inv_tau=None,
        mean_lambda=None,
        mean_phi=0.0,
        mean_omega=0.0,
        mean_sigma2inv=0.0,
    )
    state.refresh_moments()
    return state


def _estimates(xtx, xtr, rtr, M, state: VariationalState, hyper: TpbnHyper) -> NaturalParamSet:
    D = state.D
    es = state.mean_sigma2inv
    inv_tau = state.mean_inv_tau
    beta_sq = state.mean_beta_sq
    bb = state.sigma_beta + np.outer(state.mu_beta, state.mu_beta)
    quad = rtr - 2.0 * float(xtr @ state.mu_beta) + float(np.sum(xtx * bb)) + float(beta_sq @ inv_tau)
    return NaturalParamSet(
        beta1=es * xtr,
        beta2=-0.5 * es * (xtx + np.diag(inv_tau)),
        sigma2inv=np.array([(M + D + hyper.c0) / 2.0 - 1.0, -(quad + hyper.d0) / 2.0]),
        tau=np.column_stack([
            np.full(D, hyper.a0 - 1.5),
            -state.mean_lambda,
            beta_sq * es / 2.0,
        ]),
        lam=np.column_stack([np.full(D, hyper.a0 + hyper.b0 - 1.0), -state.mean_tau - state.mean_phi]),
        phi=np.array([D * hyper.b0 - 0.5, -state.mean_omega - float(np.sum(state.mean_lambda))]),
        omega=np.array([0.0, -state.mean_phi - 1.0]),
    )


def intermediate_estimates(x, r: float, M: int, state: VariationalState, hyper: TpbnHyper) -> NaturalParamSet:
    """Natural parameters implied by replicating ``(x, r)`` ``M`` times."""
    if M < 1:
        raise ValueError(f"M must be at least 1, got {M}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    r = float(r)
    return _estimates(M * np.outer(x, x), M * r * x, M * r * r, M, state, hyper)


def full_data_estimates(history: ArmHistory, state: VariationalState, hyper: TpbnHyper) -> NaturalParamSet:
    """Expected full-conditional natural parameters using every row."""
    return _estimates(history.xtx, history.xtr, history.rtr, history.M, state, hyper)


def svi_step(current: NaturalParamSet, hat: NaturalParamSet, gamma: float) -> NaturalParamSet:
    """``(1 - gamma) * current + gamma * hat`` applied to every factor."""
    if not (0.0 < gamma <= 1.0):
        raise ValueError(f"gamma must lie in (0, 1], got {gamma!r}")
    if gamma == 1.0:
        return NaturalParamSet(*(np.array(h, copy=True) for h in hat.astuple()))
    return NaturalParamSet(*((1.0 - gamma) * c + gamma * h for c, h in zip(current.astuple(), hat.astuple())))


def _harmonic(n: int) -> float:
    return 1.0 / n


def svi_fit(
    history: ArmHistory,
    hyper: TpbnHyper,
    tol: float = 1e-8,
    max_iter: int = 2000,
    seed=None,
    init: VariationalState | None = None,
    trace: list | None = None,
    step_size=None,
) -> VariationalState:
    """Stochastic natural-gradient ascent, by default with step size 1/n.

    Each iteration draws one row uniformly, replicates it ``M`` times and
    takes one step. The stopping rule evaluates the ELBO on the full
    history. If ``trace`` is given, the ELBO after each step is appended.
    ``step_size`` maps the 1-based iteration number to a step in (0, 1].
    The harmonic default makes the iterate a running average of the
    intermediate estimates, so it settles slowly; a constant step
    converges to the coordinate-ascent optimum much faster.
    """
    if step_size is None:
        step_size = _harmonic
    M = history.M
    if M < 1:
        raise ValueError("svi_fit needs at least one observation")
    rng = np.random.default_rng(seed)
    state = init_state(history.dim, hyper) if init is None else init.copy()
    nat = to_natural(state)
    X, r = history.X, history.r
    prev = None
    done = False
    n = 0
    for n in range(1, max_iter + 1):
        m = int(rng.integers(M))
        hat = intermediate_estimates(X[m], r[m], M, state, hyper)
        nat = svi_step(nat, hat, step_size(n))
        state = from_natural(nat)
        elbo = compute_elbo(state, history, hyper)
        if trace is not None:
            trace.append(elbo)
        if prev is not None and converged(prev, elbo, tol):
            done = True
            break
        prev = elbo
    state.converged = done
    state.n_iter = n
    return state


def os_svi_update(state: VariationalState, x, r: float, t: int, gamma: float, hyper: TpbnHyper) -> VariationalState:
    """Single natural-gradient step using ``(x, r)`` replicated ``t`` times."""
    if t < 1:
        raise ValueError(f"t must be at least 1, got {t}")
    hat = intermediate_estimates(x, r, t, state, hyper)
    return from_natural(svi_step(to_natural(state), hat, gamma))
