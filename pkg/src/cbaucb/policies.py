"""Bandit decision rules: CBA-UCB with three inference backends, LinUCB, and a
throughput-rule baseline for the streaming simulator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .special import gaussian_quantile
from .svi import os_svi_update, svi_fit
from .vb import ArmHistory, TpbnHyper, VariationalState, init_state, vb_fit

__all__ = [
    "CBA_KINDS",
    "POLICY_KINDS",
    "PolicyConfig",
    "ArmState",
    "ArmUpdateError",
    "quantile_coefficient",
    "cba_index",
    "linucb_index",
    "linucb_update",
    "new_arm",
    "arm_index",
    "select_action",
    "update_arm",
    "BanditPolicy",
    "ThroughputRule",
    "make_policy",
    "cumulative_regret",
]

CBA_KINDS = ("cba-vb", "cba-svi", "cba-ossvi")
POLICY_KINDS = CBA_KINDS + ("linucb", "throughput-rule")
_P_CLAMP = 1e-12


class ArmUpdateError(RuntimeError):
    def __init__(self, arm: int, cause: Exception):
        super().__init__(f"update of arm {arm} failed: {cause}")
        self.arm = arm


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "cba-ossvi"
    alpha: float = 1.0
    hyper: TpbnHyper = field(default_factory=TpbnHyper)
    # "harmonic" means 1/n_a, n_a = OS-SVI updates applied to the arm so far;
    # a float in (0, 1] is used as a constant step
    os_svi_gamma: str | float = "harmonic"
    # replication count for the OS-SVI step: "arm" uses the arm's history
    # size, "round" uses the global decision step t
    os_svi_replicates: str = "arm"
    linucb_alpha: float = 1.0
    linucb_reg: float = 1.0
    vb_tol: float = 1e-6
    vb_max_iter: int = 200
    svi_tol: float = 1e-6
    svi_max_iter: int = 300

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if not (self.linucb_alpha > 0.0 and self.linucb_reg > 0.0):
            raise ValueError("linucb_alpha and linucb_reg must be positive")
        if self.os_svi_gamma != "harmonic" and not (0.0 < float(self.os_svi_gamma) <= 1.0):
            raise ValueError(f"os_svi_gamma must be 'harmonic' or in (0, 1], got {self.os_svi_gamma!r}")
        if self.os_svi_replicates not in ("arm", "round"):
            raise ValueError(f"os_svi_replicates must be 'arm' or 'round', got {self.os_svi_replicates!r}")

    def os_svi_step(self, n: int) -> float:
        return 1.0 / n if self.os_svi_gamma == "harmonic" else float(self.os_svi_gamma)


@dataclass
class ArmState:
    history: ArmHistory
    variational: VariationalState | None = None
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    A_inv: np.ndarray | None = None
    update_count: int = 0
    rng: np.random.Generator | None = None


def quantile_coefficient(t: int, alpha: float) -> float:
    """Standard-normal quantile at 1 - 1/(alpha t), clamped into (0, 1).

    For alpha t <= 2 the coefficient is <= 0, so early rounds penalise
    uncertainty; the clamp only keeps the argument inside the domain.
    """
    if t < 1:
        raise ValueError(f"t must be at least 1, got {t}")
    p = 1.0 - 1.0 / (alpha * t)
    return gaussian_quantile(min(max(p, _P_CLAMP), 1.0 - _P_CLAMP))


def cba_index(x, mu, Sigma, t: int, alpha: float) -> float:
    """x'mu + Q(1 - 1/(alpha t)) sqrt(x' Sigma x) for a Gaussian posterior."""
    x = np.asarray(x, dtype=np.float64)
    var = float(x @ np.asarray(Sigma) @ x)
    if var < 0.0:
        if var > -1e-12 * max(1.0, float(x @ x)):
            var = 0.0
        else:
            raise ValueError(f"x' Sigma x = {var} < 0; Sigma is not positive semi-definite")
    return float(x @ np.asarray(mu)) + quantile_coefficient(t, alpha) * math.sqrt(var)


def linucb_index(x, A_inv, theta, alpha_l: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(x @ theta) + alpha_l * math.sqrt(max(float(x @ A_inv @ x), 0.0))


def linucb_update(arm: ArmState, x, r: float) -> ArmState:
    """Ridge accumulators: A += x x', b += r x, with A^{-1} kept in sync."""
    x = np.asarray(x, dtype=np.float64)
    arm.A += np.outer(x, x)
    arm.b += r * x
    # Sherman-Morrison keeps A_inv exact up to rounding
    Ax = arm.A_inv @ x
    arm.A_inv -= np.outer(Ax, Ax) / (1.0 + float(x @ Ax))
    return arm


def new_arm(D: int, config: PolicyConfig, seed=None) -> ArmState:
    arm = ArmState(history=ArmHistory(dim=D), rng=np.random.default_rng(seed))
    if config.kind == "linucb":
        arm.A = config.linucb_reg * np.eye(D)
        arm.b = np.zeros(D)
        arm.A_inv = np.eye(D) / config.linucb_reg
    elif config.kind in CBA_KINDS:
        arm.variational = init_state(D, config.hyper)
    return arm


def arm_index(arm: ArmState, x, t: int, config: PolicyConfig) -> float:
    if config.kind == "linucb":
        return linucb_index(x, arm.A_inv, arm.A_inv @ arm.b, config.linucb_alpha)
    st = arm.variational
    return cba_index(x, st.mu_beta, st.sigma_beta, t, config.alpha)


def select_action(contexts, arms: list[ArmState], t: int, config: PolicyConfig) -> int:
    """Argmax of the per-arm indices; ties go to the lowest arm index."""
    contexts = np.asarray(contexts, dtype=np.float64)
    scores = [arm_index(arm, contexts[a], t, config) for a, arm in enumerate(arms)]
    return int(np.argmax(scores))


def update_arm(arm: ArmState, x, r: float, t: int, config: PolicyConfig, arm_id: int = -1) -> ArmState:
    """Append ``(x, r)`` to the arm's history and refresh its posterior in place.

    VB and SVI refit on the full history, warm-started from the previous
    state; OS-SVI takes a single step with the point replicated M times,
    M being the arm's history size after the append (or ``t`` when
    ``config.os_svi_replicates == "round"``).
    """
    try:
        arm.history.append(x, r)
        arm.update_count += 1
        if config.kind == "linucb":
            linucb_update(arm, x, r)
        elif config.kind == "cba-vb":
            arm.variational, _ = vb_fit(arm.history, config.hyper, tol=config.vb_tol,
                                        max_iter=config.vb_max_iter, init=arm.variational)
        elif config.kind == "cba-svi":
            arm.variational = svi_fit(arm.history, config.hyper, tol=config.svi_tol,
                                      max_iter=config.svi_max_iter, seed=arm.rng, init=arm.variational)
        elif config.kind == "cba-ossvi":
            M = arm.history.M if config.os_svi_replicates == "arm" else t
            arm.variational = os_svi_update(arm.variational, x, r, M,
                                            config.os_svi_step(arm.update_count), config.hyper)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise ArmUpdateError(arm_id, exc) from exc
    return arm


class BanditPolicy:
    """K independent arm models driven by a :class:`PolicyConfig`."""

    def __init__(self, config: PolicyConfig, K: int, D: int, seed=None):
        if config.kind == "throughput-rule":
            raise ValueError("throughput-rule is not a contextual bandit; use ThroughputRule")
        seeds = np.random.SeedSequence(seed).spawn(K)
        self.config = config
        self.arms = [new_arm(D, config, s) for s in seeds]

    def select(self, contexts, t: int) -> int:
        return select_action(contexts, self.arms, t, self.config)

    def update(self, action: int, x, reward: float, t: int, throughput: float | None = None) -> None:
        update_arm(self.arms[action], x, reward, t, self.config, arm_id=action)


class ThroughputRule:
    """Pick the highest bitrate below a safety fraction of recent throughput.

    Simple rate-based baseline standing in for throughput-driven players;
    it ignores contexts and rewards.
    """

    def __init__(self, bitrates, safety: float = 0.9, window: int = 5):
        self.bitrates = np.asarray(bitrates, dtype=np.float64)
        self.safety = safety
        self.window = window
        self._samples: list[float] = []

    def estimate(self) -> float | None:
        if not self._samples:
            return None
        recent = self._samples[-self.window:]
        return len(recent) / sum(1.0 / s for s in recent)

    def select(self, contexts, t: int) -> int:
        est = self.estimate()
        if est is None:
            return 0
        ok = np.nonzero(self.bitrates <= self.safety * est)[0]
        return int(ok[-1]) if ok.size else 0

    def update(self, action: int, x, reward: float, t: int, throughput: float | None = None) -> None:
        if throughput is not None and throughput > 0:
            self._samples.append(float(throughput))


def make_policy(config: PolicyConfig, K: int, D: int, seed=None, bitrates=None):
    if config.kind == "throughput-rule":
        if bitrates is None:
            raise ValueError("throughput-rule needs the bitrate ladder")
        return ThroughputRule(bitrates)
    return BanditPolicy(config, K, D, seed)


def cumulative_regret(chosen, env) -> np.ndarray:
    """Running sum of x_t(a*)'beta*(a*) - x_t(a_t)'beta*(a_t).

    ``chosen`` is a sequence of ``(t, a_t)`` pairs with ``t`` the 0-based
    round; ``env`` must provide ``expected_rewards(t)`` giving the noise-free
    reward of every arm at that round. Both terms are noise-free, so every
    increment is nonnegative.
    """
    gaps = []
    for t, a in chosen:
        exp = env.expected_rewards(t)
        gaps.append(float(exp.max() - exp[a]))
    return np.cumsum(np.asarray(gaps, dtype=np.float64))
