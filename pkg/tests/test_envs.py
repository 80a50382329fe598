import math

import numpy as np
import pytest
from scipy import stats

from cbaucb.envs import (
    AbrConfig,
    BandwidthSpec,
    BandwidthTrace,
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
    qoe_reward,
)

W = (6.0, 2.0, 2.0)


class TestSynthetic:
    def test_exact_sparsity(self):
        env = gen_synthetic(SyntheticEnvConfig())
        assert env.beta_star.shape == (20, 20)
        np.testing.assert_array_equal((env.beta_star != 0).sum(axis=1), 5)
        assert env.contexts.shape == (1000, 20, 20)

    def test_dense(self):
        env = gen_synthetic(SyntheticEnvConfig(D=8, K=6, T=5, sparsity=0))
        assert np.all(env.beta_star != 0)

    def test_deterministic(self):
        cfg = SyntheticEnvConfig(D=5, K=3, T=40, seed=11)
        a, b = gen_synthetic(cfg), gen_synthetic(cfg)
        np.testing.assert_array_equal(a.beta_star, b.beta_star)
        np.testing.assert_array_equal(a.contexts, b.contexts)
        np.testing.assert_array_equal(a.noise, b.noise)
        c = gen_synthetic(SyntheticEnvConfig(D=5, K=3, T=40, seed=12))
        assert not np.array_equal(a.beta_star, c.beta_star)

    def test_beta_independent_of_horizon(self):
        # separate streams: the horizon does not shift the coefficient draw
        a = gen_synthetic(SyntheticEnvConfig(D=5, K=3, T=10, seed=1))
        b = gen_synthetic(SyntheticEnvConfig(D=5, K=3, T=500, seed=1))
        np.testing.assert_array_equal(a.beta_star, b.beta_star)
        np.testing.assert_array_equal(a.contexts, b.contexts[:10])

    def test_expected_and_optimal(self):
        env = gen_synthetic(SyntheticEnvConfig(D=4, K=3, T=3, sparsity=2, seed=0))
        exp = env.expected_rewards(1)
        np.testing.assert_allclose(exp, [env.contexts[1, a] @ env.beta_star[a] for a in range(3)], rtol=1e-14)
        assert env.optimal_action(1) == int(np.argmax(exp))
        assert env.reward(1, 2) == pytest.approx(exp[2] + env.noise[1, 2], rel=1e-14)

    def test_reward_mean(self):
        env = gen_synthetic(SyntheticEnvConfig(D=4, K=2, T=1, sparsity=4, noise_sd=0.5, seed=3))
        x = np.array([0.5, -1.0, 2.0, 0.1])
        n = 20000
        draws = np.array([env.draw_reward(x, 1) for _ in range(n)])
        assert draws.mean() == pytest.approx(x @ env.beta_star[1], abs=5 * 0.5 / math.sqrt(n))

    @pytest.mark.parametrize("kwargs", [{"D": 0}, {"sparsity": 21}, {"sparsity": -1}, {"noise_sd": -0.1}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SyntheticEnvConfig(**kwargs)


class TestQoe:
    def test_top_quality_steady(self):
        assert qoe_reward(3.5, 3.5, 0.0, W) == 21.0

    def test_drop(self):
        assert qoe_reward(1.0, 3.5, 0.0, W) == pytest.approx(1.0)

    def test_cold_start_stall(self):
        assert qoe_reward(3.5, None, 0.7, W) == pytest.approx(19.6)

    def test_increase_not_penalised(self):
        assert qoe_reward(3.5, 1.0, 0.0, W) == 21.0

    def test_monotone_in_stall(self):
        vals = [qoe_reward(2.1, 3.0, g, W) for g in np.linspace(0, 5, 11)]
        assert np.all(np.diff(vals) <= 0)


class TestSessionStep:
    cfg = AbrConfig()

    def test_warm_buffer_no_stall(self):
        state = SessionState(B=10.0, last_quality=4)
        new, reward, rec = abr_session_step(state, 4, self.cfg, constant_trace(10.0))
        assert rec.fetch_time == pytest.approx(0.7)
        assert rec.stall == 0.0 and reward == pytest.approx(21.0)
        assert new.B == pytest.approx(10.0 + 2.0 - 0.7)
        assert rec.throughput == pytest.approx(10.0)

    def test_cold_start(self):
        new, reward, rec = abr_session_step(SessionState(), 4, self.cfg, constant_trace(10.0))
        assert rec.stall == pytest.approx(0.7) and reward == pytest.approx(19.6)
        # the buffer holds at least the downloaded segment
        assert new.B == pytest.approx(2.0)
        assert new.cum_stall == pytest.approx(0.7) and new.segment_index == 1

    def test_idle_when_full(self):
        state = SessionState(B=29.0, last_quality=0, clock=5.0)
        new, _, rec = abr_session_step(state, 0, self.cfg, constant_trace(10.0))
        assert rec.idle == 2.0
        assert new.clock == pytest.approx(5.0 + 2.0 + 0.2)
        assert new.B == pytest.approx(29.0 - 2.0 + 2.0 - 0.2)

    def test_bad_action(self):
        with pytest.raises(ValueError):
            abr_session_step(SessionState(), 5, self.cfg, constant_trace(10.0))

    def test_buffer_invariants_random_session(self):
        rng = np.random.default_rng(0)
        trace = bandwidth_trace(BandwidthSpec(mean=3.0, sd=2.0), seed=1)
        state = SessionState()
        for _ in range(300):
            state, _, rec = abr_session_step(state, int(rng.integers(self.cfg.K)), self.cfg, trace)
            assert 0.0 <= state.B <= self.cfg.buf_max
            assert state.B >= self.cfg.segment_len
            assert rec.stall >= 0 and rec.fetch_time > 0

    def test_throughput_history_bounded(self):
        state = SessionState()
        trace = constant_trace(5.0)
        for _ in range(10):
            state, _, _ = abr_session_step(state, 1, self.cfg, trace)
        assert len(state.throughput[1]) == self.cfg.n_throughput_features
        assert state.throughput[0] == ()


class TestTraces:
    def test_constant_when_sd_zero(self):
        trace = bandwidth_trace(BandwidthSpec(sd=0.0), seed=0)
        assert all(trace.capacity_at(t) == 7.0 for t in np.linspace(0, 500, 50))

    def test_floor(self):
        trace = bandwidth_trace(BandwidthSpec(mean=1.5, sd=3.0, floor=1.0), seed=0)
        trace.capacity_at(5000.0)
        assert min(trace.capacities) >= 1.0

    def test_mean_of_truncated_normal(self):
        spec = BandwidthSpec()
        trace = bandwidth_trace(spec, seed=0)
        while len(trace.capacities) < 100_000:
            trace.capacity_at(trace._ends[-1])
        caps = np.array(trace.capacities[:100_000])
        a = (spec.floor - spec.mean) / spec.sd
        expected = stats.truncnorm.mean(a, np.inf, loc=spec.mean, scale=spec.sd)
        assert caps.mean() == pytest.approx(spec.mean, rel=0.02)
        assert caps.mean() == pytest.approx(expected, rel=0.005)

    def test_seeded(self):
        a = bandwidth_trace(BandwidthSpec(), seed=3)
        b = bandwidth_trace(BandwidthSpec(), seed=3)
        assert [a.capacity_at(t) for t in range(0, 400, 7)] == [b.capacity_at(t) for t in range(0, 400, 7)]

    def test_transfer_across_periods(self):
        trace = BandwidthTrace([2.0, 4.0], [1.0, 1.0])
        # 2 Mb in the first second, then 2 Mb at 4 Mbps
        assert trace.transfer_time(0.0, 4.0) == pytest.approx(1.5)
        assert trace.transfer_time(0.5, 1.0) == pytest.approx(0.5)
        # file traces repeat
        assert trace.capacity_at(2.5) == 2.0
        assert trace.transfer_time(0.0, 0.0) == 0.0

    def test_load(self, tmp_path):
        path = tmp_path / "trace.txt"
        path.write_text("# capacity duration\n3.0 2.0\n\n5.0 1.0  # burst\n")
        trace = load_trace(path)
        assert trace.capacities == [3.0, 5.0]
        assert trace.durations == [2.0, 1.0]

    def test_load_errors(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("3.0\n")
        with pytest.raises(ValueError, match="bad.txt:1"):
            load_trace(bad)
        empty = tmp_path / "empty.txt"
        empty.write_text("# nothing\n")
        with pytest.raises(ValueError):
            load_trace(empty)
        with pytest.raises(ValueError):
            BandwidthTrace([1.0], [0.0])


class TestContext:
    cfg = AbrConfig()

    def test_dimension(self):
        assert context_dim(self.cfg) == 1 + 5 * 4 + 1
        assert context_dim(AbrConfig(n_throughput_features=2, bitrates=(1.0, 2.0))) == 1 + 2 * 2 + 1

    def test_fresh_session(self):
        ctx = build_context(SessionState(), self.cfg)
        assert ctx.shape == (5, 22)
        np.testing.assert_array_equal(ctx[:, 0], 0.0)
        np.testing.assert_array_equal(ctx[:, 1:-1], 0.0)
        np.testing.assert_array_equal(ctx[:, -1], 1.0)

    def test_full_buffer(self):
        assert build_context(SessionState(B=30.0), self.cfg)[0, 0] == 1.0

    def test_newest_first_cycled(self):
        state = SessionState(throughput=((), (2.0, 6.0), (), (), ()))
        vec = build_context(state, self.cfg)[0]
        np.testing.assert_allclose(vec[5:9], [0.6, 0.2, 0.6, 0.2])

    def test_constant_dimension_over_session(self):
        state, trace = SessionState(), constant_trace(4.0)
        for a in [0, 3, 4, 1, 2, 2]:
            state, _, _ = abr_session_step(state, a, self.cfg, trace)
            assert build_context(state, self.cfg).shape == (5, context_dim(self.cfg))


class TestAbrConfig:
    def test_learner_scale(self):
        assert AbrConfig().learner_scale == 21.0
        assert AbrConfig(reward_scale=4.0).learner_scale == 4.0

    @pytest.mark.parametrize("kwargs", [{"bitrates": (2.0, 1.0)}, {"buf_max": 1.0}, {"weights": (1.0, 2.0)},
                                        {"reward_scale": 0.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            AbrConfig(**kwargs)


class TestFairness:
    def test_equal(self):
        assert fairness_entropy(5.0, 5.0) == 1.0

    def test_one_sided(self):
        assert fairness_entropy(10.0, 0.0) == 0.0
        assert fairness_entropy(10.0, 1e-12) < 1e-9

    def test_closed_form(self):
        assert fairness_entropy(3.0, 1.0) == pytest.approx(0.811278, abs=1e-6)

    @pytest.mark.parametrize("a,b", [(0.0, 0.0), (-1.0, -2.0), (3.0, -1.0)])
    def test_undefined(self, a, b):
        with pytest.raises(UndefinedResultError):
            fairness_entropy(a, b)
