"""Reward-generating environments: a synthetic linear bandit and a fluid
model of an adaptive-bitrate streaming session, plus QoE and fairness."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

__all__ = [
    "SyntheticEnvConfig",
    "SyntheticEnv",
    "gen_synthetic",
    "BandwidthSpec",
    "BandwidthTrace",
    "bandwidth_trace",
    "constant_trace",
    "load_trace",
    "AbrConfig",
    "SessionState",
    "SegmentRecord",
    "abr_session_step",
    "qoe_reward",
    "build_context",
    "context_dim",
    "UndefinedResultError",
    "fairness_entropy",
]


# --------------------------------------------------------------------------
# synthetic linear bandit


@dataclass(frozen=True)
class SyntheticEnvConfig:
    D: int = 20
    K: int = 20
    T: int = 1000
    sparsity: int = 5
    noise_sd: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.D < 1 or self.K < 1 or self.T < 1:
            raise ValueError("D, K and T must be positive")
        if not 0 <= self.sparsity <= self.D:
            raise ValueError(f"sparsity must lie in [0, D={self.D}], got {self.sparsity}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")


class SyntheticEnv:
    """Linear-Gaussian bandit with pre-drawn contexts and reward noise.

    Noise is drawn up front as a ``(T, K)`` table so that every policy
    facing the same seed sees the same reward for the same (round, arm).
    """

    def __init__(self, config: SyntheticEnvConfig, beta_star, contexts, noise, rng):
        self.config = config
        self.beta_star = beta_star
        self.contexts = contexts
        self.noise = noise
        self.rng = rng

    @property
    def T(self) -> int:
        return self.contexts.shape[0]

    def context(self, t: int) -> np.ndarray:
        return self.contexts[t]

    def expected_rewards(self, t: int) -> np.ndarray:
        return np.einsum("kd,kd->k", self.contexts[t], self.beta_star)

    def optimal_action(self, t: int) -> int:
        return int(np.argmax(self.expected_rewards(t)))

    def reward(self, t: int, a: int) -> float:
        return float(self.contexts[t, a] @ self.beta_star[a] + self.noise[t, a])

    def draw_reward(self, x, a: int) -> float:
        """Fresh noisy reward for an arbitrary context, from the env's own stream."""
        return float(np.asarray(x) @ self.beta_star[a] + self.config.noise_sd * self.rng.standard_normal())


def gen_synthetic(config: SyntheticEnvConfig) -> SyntheticEnv:
    """Draw beta*, the context stream and the noise table from ``config.seed``."""
    beta_ss, ctx_ss, noise_ss, free_ss = np.random.SeedSequence(config.seed).spawn(4)
    D, K, T = config.D, config.K, config.T
    brng = np.random.default_rng(beta_ss)
    beta = np.zeros((K, D))
    support_size = config.sparsity if config.sparsity > 0 else D
    for a in range(K):
        support = brng.choice(D, size=support_size, replace=False)
        vals = brng.standard_normal(support_size)
        while np.any(vals == 0.0):
            zero = vals == 0.0
            vals[zero] = brng.standard_normal(int(zero.sum()))
        beta[a, support] = vals
    contexts = np.random.default_rng(ctx_ss).standard_normal((T, K, D)) / math.sqrt(D)
    noise = config.noise_sd * np.random.default_rng(noise_ss).standard_normal((T, K))
    return SyntheticEnv(config, beta, contexts, noise, np.random.default_rng(free_ss))


# --------------------------------------------------------------------------
# bandwidth


@dataclass(frozen=True)
class BandwidthSpec:
    mean: float = 7.0
    period_mean: float = 5.0
    sd: float = 2.0
    floor: float = 0.5

    def __post_init__(self):
        if not (self.mean > 0 and self.period_mean > 0 and self.floor > 0):
            raise ValueError("bandwidth mean, period_mean and floor must be positive")
        if self.sd < 0:
            raise ValueError("bandwidth sd must be nonnegative")


class BandwidthTrace:
    """Piecewise-constant link capacity in Mbps over wall-clock seconds.

    Generated traces grow on demand from their own RNG in fixed-size chunks,
    so the realized trace depends only on the seed. Finite traces (from a
    file) repeat cyclically.
    """

    _CHUNK = 256

    def __init__(self, capacities, durations, spec: BandwidthSpec | None = None, rng=None):
        caps = [float(c) for c in capacities]
        durs = [float(d) for d in durations]
        if len(caps) != len(durs) or not caps:
            raise ValueError("a trace needs matching, nonempty capacity and duration lists")
        if min(caps) <= 0 or min(durs) <= 0:
            raise ValueError("trace capacities and durations must be positive")
        self._caps = caps
        self._ends = list(np.cumsum(durs))
        self._spec = spec
        self._rng = rng
        self._base = (list(caps), list(durs)) if rng is None else None

    @property
    def capacities(self) -> list[float]:
        return list(self._caps)

    @property
    def durations(self) -> list[float]:
        return list(np.diff([0.0] + self._ends))

    def _extend(self) -> None:
        if self._rng is None:
            caps, durs = self._base
        else:
            caps, durs = _draw_periods(self._spec, self._rng, self._CHUNK)
        end = self._ends[-1]
        for c, d in zip(caps, durs):
            end += d
            self._caps.append(float(c))
            self._ends.append(end)

    def _locate(self, t: float) -> int:
        while t >= self._ends[-1]:
            self._extend()
        return bisect.bisect_right(self._ends, t)

    def capacity_at(self, t: float) -> float:
        return self._caps[self._locate(t)]

    def transfer_time(self, start: float, megabits: float) -> float:
        """Seconds needed to move ``megabits`` through the trace from ``start``."""
        if megabits <= 0:
            return 0.0
        t = start
        remaining = megabits
        idx = self._locate(t)
        while True:
            cap = self._caps[idx]
            room = cap * (self._ends[idx] - t)
            if room >= remaining:
                return t + remaining / cap - start
            remaining -= room
            t = self._ends[idx]
            idx += 1
            if idx == len(self._caps):
                self._extend()


def _draw_periods(spec: BandwidthSpec, rng: np.random.Generator, n: int):
    if spec.sd == 0:
        caps = np.full(n, max(spec.mean, spec.floor))
    else:
        lower = (spec.floor - spec.mean) / spec.sd
        caps = stats.truncnorm.rvs(lower, np.inf, loc=spec.mean, scale=spec.sd, size=n, random_state=rng)
    durs = rng.exponential(spec.period_mean, size=n)
    # an exact zero period would be dropped by the bisection; nudge it
    durs = np.maximum(durs, 1e-9)
    return caps, durs


def bandwidth_trace(spec: BandwidthSpec, seed=None) -> BandwidthTrace:
    """Truncated-normal capacities held for exponential periods, seeded."""
    rng = np.random.default_rng(seed)
    caps, durs = _draw_periods(spec, rng, BandwidthTrace._CHUNK)
    return BandwidthTrace(caps, durs, spec, rng)


def constant_trace(mbps: float) -> BandwidthTrace:
    return BandwidthTrace([mbps], [3600.0])


def load_trace(path) -> BandwidthTrace:
    """Read ``capacity_mbps duration_s`` pairs, one per line; ``#`` starts a comment."""
    caps, durs = [], []
    path = Path(path)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'capacity_mbps duration_s', got {line!r}")
        caps.append(float(parts[0]))
        durs.append(float(parts[1]))
    if not caps:
        raise ValueError(f"{path}: no trace entries")
    return BandwidthTrace(caps, durs)


# --------------------------------------------------------------------------
# streaming session


@dataclass(frozen=True)
class AbrConfig:
    bitrates: tuple = (1.0, 1.5, 2.1, 3.0, 3.5)
    segment_len: float = 2.0
    buf_max: float = 30.0
    n_segments: int = 100
    weights: tuple = (6.0, 2.0, 2.0)
    bandwidth: BandwidthSpec = field(default_factory=BandwidthSpec)
    n_throughput_features: int = 4
    throughput_scale: float = 10.0
    # learners see reward / reward_scale; None means w1 * top bitrate
    reward_scale: float | None = None
    seed: int = 0

    def __post_init__(self):
        b = np.asarray(self.bitrates, dtype=np.float64)
        if b.size < 1 or np.any(b <= 0) or np.any(np.diff(b) <= 0):
            raise ValueError("bitrates must be positive and strictly increasing")
        if not self.segment_len > 0:
            raise ValueError("segment_len must be positive")
        if self.buf_max < self.segment_len:
            raise ValueError("buf_max must be at least segment_len")
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise ValueError("weights must be three nonnegative reals")
        if self.n_segments < 1 or self.n_throughput_features < 1 or not self.throughput_scale > 0:
            raise ValueError("n_segments, n_throughput_features and throughput_scale must be positive")
        if self.reward_scale is not None and not self.reward_scale > 0:
            raise ValueError("reward_scale must be positive")

    @property
    def K(self) -> int:
        return len(self.bitrates)

    @property
    def learner_scale(self) -> float:
        """Divisor applied to QoE before a policy sees it.

        A constant per configuration, so it leaves the ordering of actions
        unchanged while keeping rewards on the unit scale the priors assume.
        """
        if self.reward_scale is not None:
            return float(self.reward_scale)
        top = self.weights[0] * max(self.bitrates)
        return top if top > 0 else 1.0


@dataclass(frozen=True)
class SessionState:
    B: float = 0.0
    last_quality: int | None = None
    cum_stall: float = 0.0
    segment_index: int = 0
    clock: float = 0.0
    # most recent per-segment throughput samples for each quality, oldest first
    throughput: tuple = ()


@dataclass(frozen=True)
class SegmentRecord:
    index: int
    action: int
    bitrate: float
    idle: float
    fetch_time: float
    stall: float
    buffer: float
    throughput: float
    reward: float


def qoe_reward(bitrate: float, prev_bitrate: float | None, stall: float, weights) -> float:
    """w1 v - w2 [v_prev - v]_+ - w3 G with bitrates in Mbps."""
    w1, w2, w3 = weights
    decline = 0.0 if prev_bitrate is None else max(prev_bitrate - bitrate, 0.0)
    return w1 * bitrate - w2 * decline - w3 * stall


def abr_session_step(state: SessionState, action: int, config: AbrConfig, trace: BandwidthTrace):
    """Fetch one segment at quality ``action`` starting at ``state.clock``.

    Returns ``(new_state, reward, record)``.
    """
    if not 0 <= action < config.K:
        raise ValueError(f"action must lie in [0, {config.K}), got {action}")
    L = config.segment_len
    B = state.B
    clock = state.clock
    idle = 0.0
    if B + L >= config.buf_max:
        # blocked: wait one segment of playback before requesting
        idle = L
        clock += L
        B = max(B - L, 0.0)
    v = float(config.bitrates[action])
    xi = trace.transfer_time(clock, L * v)
    clock += xi
    stall = max(xi - B, 0.0)
    B_new = min(max(B + L - xi, L), config.buf_max)
    prev_v = None if state.last_quality is None else float(config.bitrates[state.last_quality])
    reward = qoe_reward(v, prev_v, stall, config.weights)
    rate = L * v / xi if xi > 0 else math.inf

    samples = list(state.throughput) or [() for _ in range(config.K)]
    kept = (samples[action] + (rate,))[-config.n_throughput_features:]
    samples[action] = kept
    new_state = replace(
        state,
        B=B_new,
        last_quality=action,
        cum_stall=state.cum_stall + stall,
        segment_index=state.segment_index + 1,
        clock=clock,
        throughput=tuple(samples),
    )
    record = SegmentRecord(state.segment_index, action, v, idle, xi, stall, B_new, rate, reward)
    return new_state, reward, record


def context_dim(config: AbrConfig) -> int:
    return 1 + config.K * config.n_throughput_features + 1


def build_context(state: SessionState, config: AbrConfig) -> np.ndarray:
    """Shared context vector, replicated for every arm, shape ``(K, D)``.

    Layout: buffer fill fraction, then for each quality its most recent
    throughput samples (newest first, divided by ``throughput_scale``,
    cycled when fewer than ``n_throughput_features`` exist, zero when none
    exist), then a constant 1.
    """
    n = config.n_throughput_features
    blocks = []
    for k in range(config.K):
        s = state.throughput[k] if state.throughput else ()
        block = np.zeros(n)
        if s:
            newest = s[::-1]
            block[:] = [min(newest[i % len(newest)], 1e6) / config.throughput_scale for i in range(n)]
        blocks.append(block)
    vec = np.concatenate([[state.B / config.buf_max], *blocks, [1.0]])
    return np.tile(vec, (config.K, 1))


class UndefinedResultError(ValueError):
    pass


def fairness_entropy(qoe_a: float, qoe_b: float) -> float:
    """Binary entropy (bits) of ``qoe_a / (qoe_a + qoe_b)``."""
    total = qoe_a + qoe_b
    if not total > 0:
        raise UndefinedResultError(f"fairness entropy needs a positive QoE total, got {total!r}")
    p = qoe_a / total
    if not 0.0 <= p <= 1.0:
        raise UndefinedResultError(f"QoE ratio {p!r} lies outside [0, 1]")
    h = 0.0
    for q in (p, 1.0 - p):
        if q > 0:
            h -= q * math.log2(q)
    return h
