"""Reference-moment metrics, reward curves, and tuner comparisons."""

import numpy as np
import pytest

from steinbandit import (Budget, InvalidArgument, ReferenceMoments,
                         SamplerConfig, compare_tuners, find_map,
                         reference_from_model, relative_std_error,
                         reward_curve, run_chain)
from steinbandit.evaluation import (ComparisonCell, RewardCurve,
                                    comparison_table_rows, format_comparison)
from steinbandit.samplers import Chain
from steinbandit.stein import KernelSpec, SteinConfig


def chain_from_samples(thetas):
    thetas = np.asarray(thetas, dtype=float)
    n = thetas.shape[0]
    return Chain(np.arange(n, dtype=np.int64), np.linspace(0, 1, n),
                 thetas, np.zeros_like(thetas), diverged=False,
                 total_iterations=n)


class TestRelativeStdError:
    def test_exact_match_is_zero(self):
        rng = np.random.default_rng(0)
        thetas = rng.standard_normal((500, 2))
        chain = chain_from_samples(thetas)
        sigma = thetas.std(axis=0, ddof=1)
        ref = ReferenceMoments(mean=np.zeros(2), std=sigma)
        assert relative_std_error(chain, ref) == 0.0

    def test_doubled_std_gives_one(self):
        rng = np.random.default_rng(1)
        thetas = rng.standard_normal((500, 2))
        chain = chain_from_samples(thetas)
        sigma = thetas.std(axis=0, ddof=1)
        ref = ReferenceMoments(mean=np.zeros(2), std=0.5 * sigma)
        # sigma_hat = 2 * ref.std elementwise -> xi = ||ref.std|| / ||ref.std||
        assert relative_std_error(chain, ref) == pytest.approx(1.0)

    def test_exact_posterior_samples_score_small(self, gauss_model):
        mean, std = gauss_model.exact_posterior_moments
        rng = np.random.default_rng(2)
        thetas = mean + std * rng.standard_normal((100_000, 2))
        chain = chain_from_samples(thetas)
        ref = reference_from_model(gauss_model)
        assert relative_std_error(chain, ref) < 0.02

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        thetas = rng.standard_normal((200, 3)) * np.array([1.0, 2.0, 3.0])
        sigma = np.array([0.9, 2.1, 2.9])
        xi_base = relative_std_error(
            chain_from_samples(thetas),
            ReferenceMoments(mean=np.zeros(3), std=sigma))
        xi_scaled = relative_std_error(
            chain_from_samples(10.0 * thetas),
            ReferenceMoments(mean=np.zeros(3), std=10.0 * sigma))
        assert xi_scaled == pytest.approx(xi_base, rel=1e-12)

    def test_needs_two_samples(self):
        chain = chain_from_samples(np.zeros((1, 2)))
        ref = ReferenceMoments(mean=np.zeros(2), std=np.ones(2))
        with pytest.raises(InvalidArgument):
            relative_std_error(chain, ref)

    def test_burn_in_applied(self):
        thetas = np.vstack([np.full((50, 1), 100.0),
                            np.random.default_rng(4).standard_normal((50, 1))])
        chain = chain_from_samples(thetas)
        ref = ReferenceMoments(mean=np.zeros(1), std=np.ones(1))
        with_burn = relative_std_error(chain, ref, burn_in=0.5)
        without = relative_std_error(chain, ref, burn_in=0.0)
        assert with_burn < without

    def test_rejects_nonpositive_reference(self):
        with pytest.raises(InvalidArgument):
            ReferenceMoments(mean=np.zeros(1), std=np.zeros(1))


@pytest.fixture(scope="module")
def curve_setup(gauss_model):
    mean, std = gauss_model.exact_posterior_moments
    config = SamplerConfig(kind="sgld", step_size=0.05 * std[0] ** 2,
                           batch_fraction=1.0, seed=0)
    stein = SteinConfig(kernel=KernelSpec(), thin=5, burn_in=0.1)
    return gauss_model, config, stein, mean


class TestRewardCurve:
    def test_single_repeat_zero_band(self, curve_setup):
        model, config, stein, mean = curve_setup
        band = reward_curve(model, config, [100.0, 300.0], repeats=1,
                            stein=stein, init=mean, base_seed=1)
        np.testing.assert_array_equal(band.lower, band.mean)
        np.testing.assert_array_equal(band.upper, band.mean)

    def test_one_row_per_checkpoint(self, curve_setup):
        model, config, stein, mean = curve_setup
        band = reward_curve(model, config, [100.0, 200.0, 400.0], repeats=3,
                            stein=stein, init=mean, base_seed=2)
        assert band.mean.shape == (3,)
        assert band.checkpoints.tolist() == [100.0, 200.0, 400.0]

    def test_convergence_ordering(self, curve_setup):
        model, config, stein, mean = curve_setup
        band = reward_curve(model, config, [1000.0, 10_000.0], repeats=5,
                            stein=stein, init=mean, base_seed=3)
        assert band.mean[1] < band.mean[0]

    def test_identical_seeds_identical_curves(self, curve_setup):
        model, config, stein, mean = curve_setup
        a = reward_curve(model, config, [100.0, 200.0], repeats=2,
                         stein=stein, init=mean, base_seed=4)
        b = reward_curve(model, config, [100.0, 200.0], repeats=2,
                         stein=stein, init=mean, base_seed=4)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.upper, b.upper)

    def test_all_diverged_marks_missing(self, gauss_model):
        config = SamplerConfig(kind="sgld", step_size=1e12, seed=0)
        stein = SteinConfig(kernel=KernelSpec(), thin=1, burn_in=0.0)
        band = reward_curve(gauss_model, config, [50.0, 100.0], repeats=2,
                            stein=stein, base_seed=5)
        assert np.isnan(band.mean).all()

    def test_rejects_bad_checkpoints(self, curve_setup):
        model, config, stein, mean = curve_setup
        with pytest.raises(InvalidArgument):
            reward_curve(model, config, [200.0, 100.0], repeats=1,
                         stein=stein, init=mean)

    def test_curve_type_requires_increasing_abscissae(self):
        with pytest.raises(InvalidArgument):
            RewardCurve(points=[(1.0, 0.5), (1.0, 0.4)], label="ksd")


@pytest.fixture(scope="module")
def comparison_table(gauss_model):
    stein = SteinConfig(kernel=KernelSpec(), thin=5, burn_in=0.1)
    mp = find_map(gauss_model, np.zeros(gauss_model.dim))
    return compare_tuners(
        gauss_model, ["mamba-ksd", "heuristic"], "sgld",
        tune_budget=Budget("iterations", 400),
        final_budget=Budget("iterations", 600),
        ref=reference_from_model(gauss_model), stein=stein,
        log10_step_sizes=[-2.0, -3.0], batch_fractions=[1.0, 0.5],
        grid_iters=100, base_seed=0, map_result=mp)


class TestCompareTuners:
    def test_shape_and_metrics_populated(self, comparison_table):
        assert len(comparison_table) == 2
        for cell in comparison_table:
            assert cell.sampler == "sgld"
            assert cell.ksd is not None and np.isfinite(cell.ksd)
            assert cell.xi_std is not None
            assert cell.n_samples == 600

    def test_heuristic_cell_uses_inverse_n(self, comparison_table, gauss_model):
        heuristic = [c for c in comparison_table if c.tuner == "heuristic"][0]
        assert heuristic.config.step_size == 1.0 / gauss_model.num_data
        assert heuristic.config.batch_fraction == 0.1

    def test_deterministic(self, gauss_model, comparison_table):
        stein = SteinConfig(kernel=KernelSpec(), thin=5, burn_in=0.1)
        mp = find_map(gauss_model, np.zeros(gauss_model.dim))
        again = compare_tuners(
            gauss_model, ["mamba-ksd", "heuristic"], "sgld",
            tune_budget=Budget("iterations", 400),
            final_budget=Budget("iterations", 600),
            ref=reference_from_model(gauss_model), stein=stein,
            log10_step_sizes=[-2.0, -3.0], batch_fractions=[1.0, 0.5],
            grid_iters=100, base_seed=0, map_result=mp)
        for cell_a, cell_b in zip(comparison_table, again):
            assert cell_a.ksd == cell_b.ksd
            assert cell_a.xi_std == cell_b.xi_std

    def test_failed_tuner_becomes_missing_cell(self, gauss_model):
        stein = SteinConfig(kernel=KernelSpec(), thin=5, burn_in=0.1)
        mp = find_map(gauss_model, np.zeros(gauss_model.dim))
        cells = compare_tuners(
            gauss_model, ["grid", "heuristic"], "sgld",
            tune_budget=Budget("iterations", 100),
            final_budget=Budget("iterations", 200),
            ref=None, stein=stein,
            log10_step_sizes=[12.0],  # every grid point diverges
            batch_fractions=[1.0], grid_iters=50, base_seed=1,
            map_result=mp)
        grid_cell = [c for c in cells if c.tuner == "grid"][0]
        assert grid_cell.ksd is None
        assert grid_cell.error is not None
        heur = [c for c in cells if c.tuner == "heuristic"][0]
        assert heur.ksd is not None  # the run carried on

    def test_missing_reference_leaves_xi_absent(self, gauss_model):
        stein = SteinConfig(kernel=KernelSpec(), thin=5, burn_in=0.1)
        mp = find_map(gauss_model, np.zeros(gauss_model.dim))
        cells = compare_tuners(
            gauss_model, ["heuristic"], "sgld",
            tune_budget=Budget("iterations", 100),
            final_budget=Budget("iterations", 200),
            ref=None, stein=stein, log10_step_sizes=[-3.0],
            batch_fractions=[1.0], base_seed=2, map_result=mp)
        assert cells[0].xi_std is None
        rows = comparison_table_rows(cells)
        assert rows[0] == ["tuner", "sampler", "ksd", "xi_std", "n_samples"]
        assert rows[1][3] == ""  # absent, not zero

    def test_rejects_unknown_tuner(self, gauss_model):
        stein = SteinConfig(kernel=KernelSpec())
        with pytest.raises(InvalidArgument):
            compare_tuners(gauss_model, ["magic"], "sgld",
                           tune_budget=Budget("iterations", 10),
                           final_budget=Budget("iterations", 10),
                           ref=None, stein=stein, log10_step_sizes=[-3.0],
                           batch_fractions=[1.0])


def test_format_comparison_renders_missing_cells():
    cells = [ComparisonCell("grid", "sgld", None, None, None, None,
                            error="every grid point diverged"),
             ComparisonCell("heuristic", "sgld", 1.25, 0.1, 100, None)]
    text = format_comparison(cells)
    assert "every grid point diverged" in text
    assert "1.25" in text
