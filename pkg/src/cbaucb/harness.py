"""Experiment runner: seeded replications, timing and CSV emission.

Every CSV begins with a ``# cbaucb <mode> schema=<n>`` comment line followed
by a header row. Floats are written with ``repr`` so that identical runs
produce byte-identical files. Replication ``r`` uses seed ``seed + r``.
Wall-clock timings are the one nondeterministic output; ``bench`` reports
them and ``synth`` writes them only to an opt-in ``.timing.csv`` sidecar.
"""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import (
    AbrConfig,
    BandwidthSpec,
    SessionState,
    SyntheticEnvConfig,
    UndefinedResultError,
    abr_session_step,
    bandwidth_trace,
    build_context,
    constant_trace,
    context_dim,
    fairness_entropy,
    gen_synthetic,
    load_trace,
)
from .gibbs import gibbs_run
from .policies import POLICY_KINDS, BanditPolicy, PolicyConfig, make_policy, update_arm
from .svi import svi_fit
from .vb import ArmHistory, TpbnHyper, vb_fit

__all__ = [
    "SCHEMA_VERSION",
    "MODES",
    "ExperimentConfig",
    "RunTrace",
    "simulate_synth",
    "run_synth",
    "run_bench",
    "simulate_session",
    "session_summary",
    "run_abr",
    "oracle_fixture",
    "run_oracle",
]

SCHEMA_VERSION = 1
MODES = ("synth", "abr", "bench", "oracle")

SYNTH_COLUMNS = ("rep", "algo", "t", "action", "reward", "expected_regret_cum", "realized_regret_cum")
TIMING_COLUMNS = ("rep", "algo", "t", "update_micros")
BENCH_COLUMNS = ("algo", "n_updates", "median_micros", "p95_micros", "mean_micros")
ABR_COLUMNS = ("rep", "algo", "client", "segment", "action", "bitrate", "idle", "fetch_time", "stall",
               "buffer", "throughput", "reward", "cum_qoe", "fairness")
ABR_SUMMARY_COLUMNS = ("rep", "algo", "client", "mean_bitrate", "switches", "switch_magnitude",
                       "startup_delay", "rebuffer_ratio", "cum_qoe")
ORACLE_COLUMNS = ("coordinate", "beta_true", "vb_mean", "vb_sd", "svi_mean", "gibbs_mean", "gibbs_sd", "gibbs_se")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "synth"
    algos: tuple = ("cba-vb", "linucb")
    horizon: int = 1000
    dims: int = 20
    arms: int = 20
    sparsity: int = 5
    noise_sd: float = 0.1
    reps: int = 1
    seed: int = 0
    out: str | None = None
    workers: int = 1
    per_rep: bool = False
    timing: bool = False
    # policy knobs
    alpha: float = 1.0
    linucb_alpha: float = 1.0
    linucb_reg: float = 1.0
    os_svi_gamma: str | float = "harmonic"
    os_svi_replicates: str = "arm"
    vb_tol: float = 1e-6
    vb_max_iter: int = 200
    svi_tol: float = 1e-6
    svi_max_iter: int = 300
    # streaming knobs
    weights: tuple = (6.0, 2.0, 2.0)
    bandwidth_mean: float = 7.0
    bandwidth_sd: float = 2.0
    bandwidth_period: float = 5.0
    bandwidth_floor: float = 0.5
    constant_bandwidth: float | None = None
    trace_file: str | None = None
    paired: bool = False
    throughput_features: int = 4
    # oracle knobs
    gibbs_samples: int = 5000
    gibbs_burn_in: int = 1000
    gibbs_thin: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        for algo in self.algos:
            if algo not in POLICY_KINDS:
                raise ValueError(f"unknown algorithm {algo!r}; expected one of {POLICY_KINDS}")
        if self.mode in ("synth", "bench") and "throughput-rule" in self.algos:
            raise ValueError("throughput-rule only applies to the abr mode")
        # surface invalid env/policy settings before any work starts
        if self.mode in ("synth", "bench"):
            self.synthetic_env(0)
        if self.mode == "abr":
            self.abr_config(0)
        for algo in self.algos:
            self.policy_config(algo)

    def policy_config(self, algo: str) -> PolicyConfig:
        return PolicyConfig(
            kind=algo,
            alpha=self.alpha,
            hyper=TpbnHyper(),
            os_svi_gamma=self.os_svi_gamma,
            os_svi_replicates=self.os_svi_replicates,
            linucb_alpha=self.linucb_alpha,
            linucb_reg=self.linucb_reg,
            vb_tol=self.vb_tol,
            vb_max_iter=self.vb_max_iter,
            svi_tol=self.svi_tol,
            svi_max_iter=self.svi_max_iter,
        )

    def synthetic_env(self, rep: int) -> SyntheticEnvConfig:
        return SyntheticEnvConfig(D=self.dims, K=self.arms, T=self.horizon, sparsity=self.sparsity,
                                  noise_sd=self.noise_sd, seed=self.seed + rep)

    def abr_config(self, rep: int) -> AbrConfig:
        return AbrConfig(
            n_segments=self.horizon,
            weights=tuple(float(w) for w in self.weights),
            bandwidth=BandwidthSpec(self.bandwidth_mean, self.bandwidth_period, self.bandwidth_sd,
                                    self.bandwidth_floor),
            n_throughput_features=self.throughput_features,
            seed=self.seed + rep,
        )


def _policy_seed(seed: int) -> list[int]:
    # entropy distinct from the environment's SeedSequence(seed) stream
    return [seed, 1]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _write_csv(path: Path, mode: str, columns, rows) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(f"# cbaucb {mode} schema={SCHEMA_VERSION}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}.{suffix}{path.suffix or '.csv'}")


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves task order, so the merge is deterministic
        return list(pool.map(fn, tasks))


# --------------------------------------------------------------------------
# synthetic regret


@dataclass
class RunTrace:
    rep: int
    algo: str
    actions: np.ndarray
    rewards: np.ndarray
    expected_regret_cum: np.ndarray
    realized_regret_cum: np.ndarray
    update_micros: np.ndarray = field(repr=False)

    @property
    def final_regret(self) -> float:
        return float(self.expected_regret_cum[-1])

    def rows(self):
        for t in range(len(self.actions)):
            yield (self.rep, self.algo, t + 1, int(self.actions[t]), float(self.rewards[t]),
                   float(self.expected_regret_cum[t]), float(self.realized_regret_cum[t]))

    def timing_rows(self):
        for t in range(len(self.actions)):
            yield (self.rep, self.algo, t + 1, float(self.update_micros[t]))


def simulate_synth(config: ExperimentConfig, algo: str, rep: int) -> RunTrace:
    """One replication of the bandit loop on a fresh synthetic environment."""
    env = gen_synthetic(config.synthetic_env(rep))
    pconf = config.policy_config(algo)
    policy = BanditPolicy(pconf, env.config.K, env.config.D, seed=_policy_seed(config.seed + rep))
    T = env.T
    actions = np.empty(T, dtype=np.int64)
    rewards = np.empty(T)
    gaps = np.empty(T)
    realized = np.empty(T)
    micros = np.empty(T)
    for i in range(T):
        t = i + 1
        X = env.context(i)
        a = policy.select(X, t)
        r = env.reward(i, a)
        start = time.perf_counter_ns()
        update_arm(policy.arms[a], X[a], r, t, pconf, arm_id=a)
        micros[i] = (time.perf_counter_ns() - start) / 1000.0
        exp = env.expected_rewards(i)
        actions[i] = a
        rewards[i] = r
        gaps[i] = exp.max() - exp[a]
        realized[i] = exp.max() - r
    return RunTrace(rep, algo, actions, rewards, np.cumsum(gaps), np.cumsum(realized), micros)


def _synth_task(args):
    config, algo, rep = args
    return simulate_synth(config, algo, rep)


def run_synth(config: ExperimentConfig) -> list[RunTrace]:
    """Run every (algorithm, replication) pair; write CSVs when ``config.out`` is set."""
    tasks = [(config, algo, rep) for algo in config.algos for rep in range(config.reps)]
    traces = _map(_synth_task, tasks, config.workers)
    if config.out is not None:
        out = Path(config.out)
        _write_csv(out, "synth", SYNTH_COLUMNS, (row for tr in traces for row in tr.rows()))
        if config.per_rep:
            for rep in range(config.reps):
                _write_csv(_sidecar(out, f"rep{rep}"), "synth", SYNTH_COLUMNS,
                           (row for tr in traces if tr.rep == rep for row in tr.rows()))
        if config.timing:
            _write_csv(_sidecar(out, "timing"), "synth-timing", TIMING_COLUMNS,
                       (row for tr in traces for row in tr.timing_rows()))
    return traces


def run_bench(config: ExperimentConfig) -> dict[str, np.ndarray]:
    """Per-update wall clock of ``update_arm`` for each algorithm.

    Each algorithm plays ``config.reps`` synthetic replications of
    ``config.horizon`` rounds; only the update call is timed. Returns the
    raw microsecond samples per algorithm and writes median/p95 to CSV.
    """
    samples = {}
    for algo in config.algos:
        times = [simulate_synth(config, algo, rep).update_micros for rep in range(config.reps)]
        samples[algo] = np.concatenate(times)
    if config.out is not None:
        rows = [(algo, len(s), float(np.median(s)), float(np.percentile(s, 95)), float(np.mean(s)))
                for algo, s in samples.items()]
        _write_csv(Path(config.out), "bench", BENCH_COLUMNS, rows)
    return samples


# --------------------------------------------------------------------------
# streaming


def _trace_for(config: ExperimentConfig, rep: int):
    if config.trace_file is not None:
        return load_trace(config.trace_file)
    if config.constant_bandwidth is not None:
        return constant_trace(config.constant_bandwidth)
    abr = config.abr_config(rep)
    return bandwidth_trace(abr.bandwidth, seed=abr.seed)


def simulate_session(abr: AbrConfig, policy, trace) -> list:
    """Play ``abr.n_segments`` segments; returns the segment records."""
    state = SessionState()
    records = []
    for i in range(abr.n_segments):
        t = i + 1
        X = build_context(state, abr)
        a = policy.select(X, t)
        state, reward, rec = abr_session_step(state, a, abr, trace)
        policy.update(a, X[a], reward / abr.learner_scale, t, throughput=rec.throughput)
        records.append(rec)
    return records


def session_summary(records, abr: AbrConfig) -> dict:
    """Session metrics; the first segment's stall is the startup delay and
    is reported separately from the rebuffer ratio."""
    bitrates = np.array([r.bitrate for r in records])
    jumps = np.abs(np.diff(bitrates))
    switched = jumps[jumps > 0]
    stall = sum(r.stall for r in records[1:])
    return {
        "mean_bitrate": float(bitrates.mean()),
        "switches": int(switched.size),
        "switch_magnitude": float(switched.mean()) if switched.size else 0.0,
        "startup_delay": float(records[0].stall),
        "rebuffer_ratio": stall / (stall + abr.segment_len * len(records)),
        "cum_qoe": float(sum(r.reward for r in records)),
    }


def _abr_task(args):
    config, algo, rep = args
    abr = config.abr_config(rep)
    pconf = config.policy_config(algo)
    sessions = []
    for _client in range(2 if config.paired else 1):
        # paired clients are identical by construction: same seed, own link
        policy = make_policy(pconf, abr.K, context_dim(abr), seed=_policy_seed(config.seed + rep),
                             bitrates=abr.bitrates)
        sessions.append(simulate_session(abr, policy, _trace_for(config, rep)))
    return rep, algo, abr, sessions


def _fairness_trace(sessions) -> list[float]:
    if len(sessions) < 2:
        return [math.nan] * len(sessions[0])
    q1 = np.cumsum([r.reward for r in sessions[0]])
    q2 = np.cumsum([r.reward for r in sessions[1]])
    out = []
    for a, b in zip(q1, q2):
        try:
            out.append(fairness_entropy(float(a), float(b)))
        except UndefinedResultError:
            out.append(math.nan)
    return out


def run_abr(config: ExperimentConfig) -> list[dict]:
    """Simulate sessions per (algorithm, replication); returns summary dicts.

    Each summary carries ``records`` (per client) and ``fairness`` (per
    segment, NaN unless ``config.paired``) in addition to the metrics.
    """
    tasks = [(config, algo, rep) for algo in config.algos for rep in range(config.reps)]
    results = _map(_abr_task, tasks, config.workers)
    summaries, seg_rows, sum_rows = [], [], []
    for rep, algo, abr, sessions in results:
        fairness = _fairness_trace(sessions)
        for client, records in enumerate(sessions):
            s = session_summary(records, abr)
            summaries.append({"rep": rep, "algo": algo, "client": client, **s,
                              "records": records, "fairness": fairness})
            sum_rows.append((rep, algo, client, *(s[c] for c in ABR_SUMMARY_COLUMNS[3:])))
            cum = 0.0
            for rec, fair in zip(records, fairness):
                cum += rec.reward
                seg_rows.append((rep, algo, client, rec.index + 1, rec.action, rec.bitrate, rec.idle,
                                 rec.fetch_time, rec.stall, rec.buffer, rec.throughput, rec.reward, cum, fair))
    if config.out is not None:
        out = Path(config.out)
        _write_csv(out, "abr", ABR_COLUMNS, seg_rows)
        _write_csv(_sidecar(out, "summary"), "abr-summary", ABR_SUMMARY_COLUMNS, sum_rows)
    return summaries


# --------------------------------------------------------------------------
# oracle comparison


def oracle_fixture(M: int, D: int, sparsity: int, noise_sd: float, seed: int):
    """Regression data with a standard-normal design and a sparse truth."""
    rng = np.random.default_rng(seed)
    beta = np.zeros(D)
    k = sparsity if sparsity > 0 else D
    support = rng.choice(D, size=min(k, D), replace=False)
    beta[support] = rng.standard_normal(support.size)
    X = rng.standard_normal((M, D))
    r = X @ beta + noise_sd * rng.standard_normal(M)
    return ArmHistory(X, r), beta


def run_oracle(config: ExperimentConfig) -> list[tuple]:
    """Compare VB, SVI and Gibbs posteriors on one seeded regression problem.

    ``horizon`` is the row count and ``dims`` the dimension.
    """
    history, beta = oracle_fixture(config.horizon, config.dims, config.sparsity, config.noise_sd, config.seed)
    hyper = TpbnHyper()
    vb, _ = vb_fit(history, hyper, tol=1e-10, max_iter=5000)
    svi = svi_fit(history, hyper, tol=config.svi_tol, max_iter=max(config.svi_max_iter, 2000),
                  seed=_policy_seed(config.seed))
    gibbs = gibbs_run(history, hyper, n_samples=config.gibbs_samples, burn_in=config.gibbs_burn_in,
                      thin=config.gibbs_thin, seed=_policy_seed(config.seed))
    se = gibbs.beta_se
    rows = [
        (j, float(beta[j]), float(vb.mu_beta[j]), math.sqrt(vb.sigma_beta[j, j]), float(svi.mu_beta[j]),
         float(gibbs.beta_mean[j]), math.sqrt(gibbs.beta_cov[j, j]), float(se[j]))
        for j in range(history.dim)
    ]
    if config.out is not None:
        _write_csv(Path(config.out), "oracle", ORACLE_COLUMNS, rows)
    return rows
