"""Sampler dynamics, the chain runner, thinning, and chain serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steinbandit import (Budget, InvalidArgument, SamplerConfig, concat_chains,
                         dump_chain, load_chain, run_chain, sgld_step,
                         sgnht_step, thin_chain)
from steinbandit.samplers import ChainState, sghmc_trajectory


def state1d(theta=0.0, v=None, alpha=None):
    return ChainState(theta=np.array([theta]),
                      momentum=None if v is None else np.array([v]),
                      thermostat=alpha)


class TestSgldStep:
    def test_fixed_point_with_zero_grad_and_noise(self):
        new = sgld_step(state1d(1.5), np.array([0.0]), h=0.01,
                        rng=np.random.default_rng(0), xi=np.zeros(1))
        assert new.theta[0] == 1.5
        assert new.iteration == 1

    def test_hand_arithmetic(self):
        new = sgld_step(state1d(0.0), np.array([2.0]), h=0.01,
                        rng=np.random.default_rng(0), xi=np.ones(1))
        assert new.theta[0] == pytest.approx(0.09, abs=1e-15)

    def test_injected_noise_variance(self):
        rng = np.random.default_rng(3)
        h, grad = 0.04, np.array([1.7])
        state = state1d(0.0)
        increments = []
        for _ in range(10_000):
            new = sgld_step(state, grad, h, rng)
            increments.append(new.theta[0] - state.theta[0] + 0.5 * h * grad[0])
        var = np.var(increments, ddof=1)
        assert var == pytest.approx(h, rel=0.05)


class TestSghmcTrajectory:
    def test_zero_dynamics(self):
        state = state1d(0.7)
        new, theta_end, _ = sghmc_trajectory(
            state, lambda t: np.zeros(1), h=0.01, L=1, alpha=0.05,
            beta_hat=0.0, rng=np.random.default_rng(0),
            v0=np.zeros(1), xis=np.zeros((1, 1)))
        assert new.theta[0] == 0.7
        assert theta_end[0] == 0.7

    def test_hand_unrolled_two_steps(self):
        new, theta_end, _ = sghmc_trajectory(
            state1d(0.0), lambda t: np.ones(1), h=0.01, L=2, alpha=0.01,
            beta_hat=0.0, rng=np.random.default_rng(0),
            v0=np.array([0.1]), xis=np.zeros((2, 1)))
        assert theta_end[0] == pytest.approx(0.189, abs=1e-15)
        assert new.momentum[0] == pytest.approx(0.07811, abs=1e-15)

    def test_scalar_reference_implementation(self):
        """Cross-check the vector code against a plain-float rewrite."""
        rng = np.random.default_rng(12)
        h, L, alpha, beta_hat = 0.02, 4, 0.05, 0.01
        v0 = 0.3
        xis = rng.standard_normal(L)
        grad = lambda t: 2.5 * t  # noqa: E731

        theta_ref, v_ref = 0.4, v0
        scale = np.sqrt(2 * (alpha - beta_hat) * h)
        for step in range(L):
            theta_ref = theta_ref + v_ref
            v_ref = v_ref - h * grad(theta_ref) - alpha * v_ref + scale * xis[step]

        new, theta_end, _ = sghmc_trajectory(
            state1d(0.4), lambda t: 2.5 * t, h=h, L=L, alpha=alpha,
            beta_hat=beta_hat, rng=np.random.default_rng(0),
            v0=np.array([v0]), xis=xis.reshape(L, 1))
        assert theta_end[0] == pytest.approx(theta_ref, rel=1e-12)
        assert new.momentum[0] == pytest.approx(v_ref, rel=1e-12)

    def test_zero_noise_variance_at_beta_equals_alpha(self):
        # 2(alpha - beta_hat)h = 0, so the noise term vanishes exactly
        # even though the generator is consumed
        rng = np.random.default_rng(5)
        new, _, _ = sghmc_trajectory(
            state1d(0.0), lambda t: np.zeros(1), h=0.01, L=3, alpha=0.01,
            beta_hat=0.01, rng=rng, v0=np.zeros(1))
        assert new.momentum[0] == 0.0
        assert new.theta[0] == 0.0


class TestSgnhtStep:
    def test_rest_state(self):
        a, h = 0.01, 0.004
        new = sgnht_step(state1d(1.0, v=0.0, alpha=a), np.zeros(1), h=h, a=a,
                         rng=np.random.default_rng(0), xi=np.zeros(1))
        assert new.momentum[0] == 0.0
        assert new.theta[0] == 1.0
        assert new.thermostat == pytest.approx(a - h, abs=1e-18)

    def test_hand_arithmetic(self):
        new = sgnht_step(state1d(0.0, v=0.1, alpha=0.01), np.zeros(1),
                         h=0.01, a=0.01, rng=np.random.default_rng(0),
                         xi=np.zeros(1))
        assert new.momentum[0] == pytest.approx(0.099, abs=1e-15)
        assert new.theta[0] == pytest.approx(0.099, abs=1e-15)
        assert new.thermostat == pytest.approx(0.009801, abs=1e-15)


class TestRunChain:
    def test_iteration_budget_counts_samples(self, gauss_model):
        config = SamplerConfig(kind="sgld", step_size=1e-3,
                               batch_fraction=0.1, seed=0)
        chain, state = run_chain(gauss_model, config, np.zeros(2),
                                 Budget("iterations", 100), record_every=1)
        assert len(chain) == 100
        assert state.iteration == 100
        assert not chain.diverged

    def test_record_every(self, gauss_model):
        config = SamplerConfig(kind="sgld", step_size=1e-3, seed=0)
        chain, _ = run_chain(gauss_model, config, np.zeros(2),
                             Budget("iterations", 100), record_every=10)
        assert len(chain) == 10

    @pytest.mark.parametrize("kind", ["sgld", "sghmc", "sgnht"])
    def test_resume_matches_single_run(self, gauss_model, kind):
        config = SamplerConfig(kind=kind, step_size=1e-4, batch_fraction=0.2,
                               leapfrog=3, seed=42)
        full, _ = run_chain(gauss_model, config, np.zeros(2),
                            Budget("iterations", 100))

        rng = np.random.default_rng(config.seed)
        first, state = run_chain(gauss_model, config, np.zeros(2),
                                 Budget("iterations", 50), rng=rng)
        second, _ = run_chain(gauss_model, config, np.zeros(2),
                              Budget("iterations", 50), state=state, rng=rng)
        joined = concat_chains(first, second)
        np.testing.assert_array_equal(joined.thetas, full.thetas)
        np.testing.assert_array_equal(joined.grads, full.grads)
        np.testing.assert_array_equal(joined.iterations, full.iterations)

    @pytest.mark.parametrize("kind", ["sgld", "sghmc", "sgnht"])
    def test_deterministic_given_config(self, gauss_model, kind):
        config = SamplerConfig(kind=kind, step_size=1e-4, seed=7)
        a, _ = run_chain(gauss_model, config, np.zeros(2),
                         Budget("iterations", 60))
        b, _ = run_chain(gauss_model, config, np.zeros(2),
                         Budget("iterations", 60))
        np.testing.assert_array_equal(a.thetas, b.thetas)
        np.testing.assert_array_equal(a.grads, b.grads)

    def test_sgld_long_run_recovers_posterior_mean(self, gauss_model_1d):
        mean, std = gauss_model_1d.exact_posterior_moments
        var = std[0] ** 2
        # h chosen as a small fraction of the posterior scale
        config = SamplerConfig(kind="sgld", step_size=0.05 * var,
                               batch_fraction=1.0, seed=3)
        chain, _ = run_chain(gauss_model_1d, config, mean,
                             Budget("iterations", 50_000))
        est = chain.thetas[:, 0].mean()
        # MC standard error with an autocorrelation-inflated factor
        rho = 1.0 - 0.5 * config.step_size / var
        ess = len(chain) * (1 - rho) / (1 + rho)
        se = std[0] / np.sqrt(ess)
        assert abs(est - mean[0]) < 3 * se

    def test_full_batch_cv_equivalence(self, gauss_model, map_result_mod):
        base = dict(kind="sgld", step_size=1e-3, batch_fraction=1.0, seed=9)
        plain, _ = run_chain(gauss_model, SamplerConfig(**base), np.zeros(2),
                             Budget("iterations", 50))
        cv, _ = run_chain(gauss_model, SamplerConfig(use_cv=True, **base),
                          np.zeros(2), Budget("iterations", 50),
                          map_result=map_result_mod)
        np.testing.assert_array_equal(plain.thetas, cv.thetas)

    def test_divergence_detected_within_one_iteration(self, gauss_model):
        config = SamplerConfig(kind="sgld", step_size=1e12, seed=0)
        chain, _ = run_chain(gauss_model, config, np.zeros(2),
                             Budget("iterations", 1000))
        assert chain.diverged
        assert chain.total_iterations < 10
        assert np.all(np.isfinite(chain.thetas))

    def test_wall_clock_budget_stops(self, gauss_model):
        config = SamplerConfig(kind="sgld", step_size=1e-4, seed=1)
        chain, state = run_chain(gauss_model, config, np.zeros(2),
                                 Budget("seconds", 0.05))
        assert state.iteration > 0
        assert np.all(np.diff(chain.wall_times) >= 0)

    def test_cv_without_map_rejected(self, gauss_model):
        config = SamplerConfig(kind="sgld", step_size=1e-4, use_cv=True)
        with pytest.raises(InvalidArgument):
            run_chain(gauss_model, config, np.zeros(2),
                      Budget("iterations", 5))


@pytest.fixture(scope="module")
def map_result_mod(gauss_model):
    from steinbandit import find_map
    return find_map(gauss_model, np.zeros(gauss_model.dim))


@pytest.fixture(scope="module")
def recorded_chain(gauss_model):
    config = SamplerConfig(kind="sgld", step_size=1e-3, batch_fraction=0.5,
                           seed=21)
    chain, _ = run_chain(gauss_model, config, np.zeros(2),
                         Budget("iterations", 100))
    return chain


class TestThinChain:
    def test_identity(self, recorded_chain):
        thinned = thin_chain(recorded_chain, thin=1, burn_in_fraction=0.0)
        np.testing.assert_array_equal(thinned.thetas, recorded_chain.thetas)

    def test_spec_index_arithmetic(self, recorded_chain):
        thinned = thin_chain(recorded_chain, thin=10, burn_in_fraction=0.1)
        # start at index 10, stride 10, keep the last
        np.testing.assert_array_equal(
            thinned.iterations,
            [10, 20, 30, 40, 50, 60, 70, 80, 90, 99])
        assert len(thinned) == 10

    def test_composition_when_divisible(self, gauss_model):
        config = SamplerConfig(kind="sgld", step_size=1e-3, seed=2)
        chain, _ = run_chain(gauss_model, config, np.zeros(2),
                             Budget("iterations", 101))
        once = thin_chain(chain, thin=10)
        twice = thin_chain(thin_chain(chain, thin=2), thin=5)
        np.testing.assert_array_equal(once.iterations, twice.iterations)

    def test_rejects_empty(self, gauss_model):
        from steinbandit.samplers import empty_chain
        with pytest.raises(InvalidArgument):
            thin_chain(empty_chain(2), thin=2)

    @settings(max_examples=50, deadline=None)
    @given(thin=st.integers(1, 20), burn=st.floats(0.0, 0.99),
           length=st.integers(1, 200))
    def test_properties(self, thin, burn, length):
        """Always non-empty, strictly increasing, last sample kept."""
        from steinbandit.samplers import Chain
        chain = Chain(np.arange(length, dtype=np.int64),
                      np.linspace(0, 1, length),
                      np.zeros((length, 1)), np.zeros((length, 1)),
                      diverged=False, total_iterations=length)
        thinned = thin_chain(chain, thin=thin, burn_in_fraction=burn)
        assert len(thinned) >= 1
        assert thinned.iterations[-1] == length - 1
        assert np.all(np.diff(thinned.iterations) > 0)


class TestChainCsv:
    def test_round_trip_bit_exact(self, recorded_chain, tmp_path):
        path = tmp_path / "chain.csv"
        dump_chain(recorded_chain, path)
        loaded = load_chain(path)
        np.testing.assert_array_equal(loaded.thetas, recorded_chain.thetas)
        np.testing.assert_array_equal(loaded.grads, recorded_chain.grads)
        np.testing.assert_array_equal(loaded.iterations,
                                      recorded_chain.iterations)

    def test_header_layout(self, recorded_chain, tmp_path):
        path = tmp_path / "chain.csv"
        dump_chain(recorded_chain, path)
        header = path.read_text().splitlines()[0]
        assert header == ("iteration,wall_time_sec,"
                          "theta_0,theta_1,grad_0,grad_1")

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(InvalidArgument):
            load_chain(path)


class TestConfigValidation:
    def test_sghmc_needs_positive_noise(self):
        with pytest.raises(InvalidArgument):
            SamplerConfig(kind="sghmc", alpha=0.0, beta_hat=0.0)

    def test_batch_fraction_bounds(self):
        with pytest.raises(InvalidArgument):
            SamplerConfig(batch_fraction=0.0)
        with pytest.raises(InvalidArgument):
            SamplerConfig(batch_fraction=1.5)

    def test_batch_size_floor(self, gauss_model):
        config = SamplerConfig(batch_fraction=0.001)
        assert config.batch_size(gauss_model.num_data) == 1
        assert SamplerConfig(batch_fraction=0.5).batch_size(100) == 50
