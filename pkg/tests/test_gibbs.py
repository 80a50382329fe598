import numpy as np
import pytest

from cbaucb.gibbs import gibbs_run, sample_gig
from cbaucb.gig import gig_moments
from cbaucb.vb import ArmHistory

from .oracles import conjugate_beta_mean


class TestSampleGig:
    @pytest.mark.parametrize("p,a,b", [
        (0.0, 2.0, 1.0), (-0.5, 2.0, 8.0), (1.7, 0.3, 5.0), (-2.4, 4.0, 0.2), (0.0, 2.0, 1e-6), (3.0, 50.0, 50.0),
    ])
    def test_moments(self, p, a, b):
        rng = np.random.default_rng(0)
        n = 40000
        draws = np.array([sample_gig(p, a, b, rng) for _ in range(n)])
        assert np.all(draws > 0)
        mean, inv = gig_moments(p, a, b)
        assert draws.mean() == pytest.approx(mean, abs=5 * draws.std() / np.sqrt(n))
        inv_draws = 1.0 / draws
        assert inv_draws.mean() == pytest.approx(inv, abs=5 * inv_draws.std() / np.sqrt(n))

    def test_reproducible(self):
        a = [sample_gig(0.3, 1.0, 2.0, np.random.default_rng(9)) for _ in range(3)]
        b = [sample_gig(0.3, 1.0, 2.0, np.random.default_rng(9)) for _ in range(3)]
        assert a == b


class TestGibbsRun:
    def test_fixed_tau_matches_conjugate_mean(self, hyper, fixture_history):
        tau = np.array([2.0, 0.5, 0.1])
        g = gibbs_run(fixture_history, hyper, n_samples=8000, burn_in=500, thin=1, seed=1, fixed_tau=tau)
        ref = conjugate_beta_mean(fixture_history.X, fixture_history.r, tau)
        assert np.all(np.abs(g.beta_mean - ref) <= 3 * g.beta_se + 1e-12)

    def test_seed_reproducible(self, hyper, fixture_history):
        a = gibbs_run(fixture_history, hyper, n_samples=200, burn_in=50, seed=5)
        b = gibbs_run(fixture_history, hyper, n_samples=200, burn_in=50, seed=5)
        np.testing.assert_array_equal(a.beta, b.beta)
        np.testing.assert_array_equal(a.tau, b.tau)

    def test_thinning_count(self, hyper, fixture_history):
        g = gibbs_run(fixture_history, hyper, n_samples=101, burn_in=10, thin=5, seed=0)
        assert g.n_retained == 21
        assert len(g.draws) == 21
        assert g.beta_cov.shape == (3, 3)

    def test_draws_are_valid(self, hyper, fixture_history):
        g = gibbs_run(fixture_history, hyper, n_samples=300, burn_in=50, seed=2)
        assert np.all(g.tau > 0) and np.all(g.lam > 0)
        assert np.all(g.phi > 0) and np.all(g.omega > 0) and np.all(g.sigma2inv > 0)

    def test_recovers_fixture_coefficients(self, hyper, fixture_history):
        g = gibbs_run(fixture_history, hyper, n_samples=4000, burn_in=1000, seed=3)
        np.testing.assert_allclose(g.beta_mean, [2.0, -1.0, 0.0], atol=0.35)
        # the true-zero coordinate is shrunk harder than the others
        assert abs(g.beta_mean[2]) < 0.2

    @pytest.mark.parametrize("kwargs", [{"n_samples": 0}, {"burn_in": -1}, {"thin": 0}])
    def test_bad_arguments(self, hyper, fixture_history, kwargs):
        with pytest.raises(ValueError):
            gibbs_run(fixture_history, hyper, **kwargs)

    def test_empty_history_samples_prior(self, hyper):
        g = gibbs_run(ArmHistory(dim=2), hyper, n_samples=200, burn_in=10, seed=0)
        assert np.all(np.isfinite(g.beta))
