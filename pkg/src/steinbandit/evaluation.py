"""Quality metrics against reference moments and tuning-method comparisons."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .bandit import (arm_grid, grid_search_tune, heuristic_tune, mamba_run)
from .errors import InvalidArgument, SteinBanditError
from .model import MapResult, TargetModel, find_map
from .samplers import (Budget, Chain, SamplerConfig, concat_chains,
                       empty_chain, run_chain)
from .stein import SteinConfig, stein_reward

Array = np.ndarray


@dataclass(frozen=True)
class ReferenceMoments:
    """Ground-truth posterior mean and standard deviation."""

    mean: Array
    std: Array
    source: str = "analytic"

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise InvalidArgument("mean and std must have equal shapes")
        if np.any(self.std <= 0):
            raise InvalidArgument("reference std must be strictly positive")


def reference_from_model(model: TargetModel) -> ReferenceMoments | None:
    if model.exact_posterior_moments is None:
        return None
    mean, std = model.exact_posterior_moments
    return ReferenceMoments(mean=mean, std=std, source="analytic")


def load_reference_csv(path) -> ReferenceMoments:
    """Read `mean,std` rows (one-line header), one row per coordinate."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["mean", "std"]:
            raise InvalidArgument(f"{path}: expected header 'mean,std'")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    if not rows:
        raise InvalidArgument(f"{path}: no rows")
    data = np.asarray(rows)
    return ReferenceMoments(mean=data[:, 0], std=data[:, 1], source="file")


@dataclass(frozen=True)
class RewardCurve:
    """One metric trajectory over increasing budgets."""

    points: list[tuple[float, float]]
    label: str

    def __post_init__(self):
        xs = [x for x, _ in self.points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise InvalidArgument("curve abscissae must be strictly increasing")


@dataclass(frozen=True)
class CurveBand:
    """Pointwise mean of repeated curves with a +/- 2 std band."""

    checkpoints: Array
    mean: Array
    lower: Array
    upper: Array
    label: str
    repeats: int


def relative_std_error(chain: Chain, ref: ReferenceMoments,
                       burn_in: float = 0.0) -> float:
    """||sigma_hat - sigma_ref||_2 / ||sigma_ref||_2 on post-burn-in samples.

    The sample standard deviation uses the P-1 denominator.  Scaling both
    the chain and the reference by one positive constant leaves the value
    unchanged.
    """
    if not 0.0 <= burn_in < 1.0:
        raise InvalidArgument("burn_in must lie in [0, 1)")
    n = len(chain)
    start = int(burn_in * n)
    kept = chain.thetas[start:]
    if kept.shape[0] < 2:
        raise InvalidArgument("need at least two post-burn-in samples")
    if kept.shape[1] != ref.std.shape[0]:
        raise InvalidArgument(f"chain dimension {kept.shape[1]} does not "
                              f"match reference dimension {ref.std.shape[0]}")
    sigma_hat = kept.std(axis=0, ddof=1)
    return float(np.linalg.norm(sigma_hat - ref.std)
                 / np.linalg.norm(ref.std))


def reward_curve(model: TargetModel, config: SamplerConfig,
                 checkpoints: list[float], metric: str = "ksd",
                 repeats: int = 10, *, stein: SteinConfig | None = None,
                 init: Array | None = None,
                 map_result: MapResult | None = None,
                 budget_mode: str = "iterations", record_every: int = 1,
                 base_seed: int = 0) -> CurveBand:
    """Mean metric trajectory over fresh-seed repeats with a 2-sigma band.

    Each repeat runs one chain, pausing at every checkpoint to score the
    cumulative thinned chain.  Diverged repeats drop out of later
    checkpoints; a checkpoint where every repeat has diverged is reported
    as NaN.
    """
    if repeats < 1:
        raise InvalidArgument("repeats must be positive")
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise InvalidArgument("checkpoints must be strictly increasing")
    if stein is None:
        stein = SteinConfig()
    if init is None:
        init = np.zeros(model.dim)

    values = np.full((repeats, len(checkpoints)), np.nan)
    for rep in range(repeats):
        seed = int(np.random.SeedSequence((base_seed, config.seed, rep))
                   .generate_state(1)[0])
        rng = np.random.default_rng(seed)
        chain = empty_chain(model.dim)
        state = None
        consumed = 0.0
        for ci, checkpoint in enumerate(checkpoints):
            increment = checkpoint - consumed
            segment, state = run_chain(
                model, config, init, Budget(budget_mode, increment),
                record_every, state=state, rng=rng, map_result=map_result)
            consumed = checkpoint
            chain = concat_chains(chain, segment)
            if chain.diverged:
                break
            reward_rng = np.random.default_rng(
                np.random.SeedSequence((seed, ci)))
            value = stein_reward(chain, model, stein, metric, reward_rng)
            if np.isfinite(value):
                values[rep, ci] = value

    mean = np.full(len(checkpoints), np.nan)
    std = np.zeros(len(checkpoints))
    for ci in range(len(checkpoints)):
        available = values[np.isfinite(values[:, ci]), ci]
        if available.size:
            mean[ci] = available.mean()
            if available.size > 1:
                std[ci] = available.std(ddof=1)
    return CurveBand(checkpoints=np.asarray(checkpoints, dtype=float),
                     mean=mean, lower=mean - 2.0 * std,
                     upper=mean + 2.0 * std, label=metric, repeats=repeats)


@dataclass(frozen=True)
class ComparisonCell:
    """One (tuner, sampler) result in the comparison table."""

    tuner: str
    sampler: str
    ksd: float | None
    xi_std: float | None
    n_samples: int | None
    config: SamplerConfig | None
    error: str | None = None


TUNER_NAMES = ("mamba-ksd", "mamba-fssd", "grid", "heuristic")


def compare_tuners(model: TargetModel, tuners: list[str], sampler_kind: str, *,
                   tune_budget: Budget, final_budget: Budget,
                   ref: ReferenceMoments | None, stein: SteinConfig,
                   log10_step_sizes: list[float], batch_fractions: list[float],
                   leapfrogs: list[int] = (5,), eta: int = 3,
                   use_cv: bool = False, grid_iters: int = 2000,
                   noise_scale: float = 0.2, record_every: int = 1,
                   base_seed: int = 0, workers: int = 1,
                   map_result: MapResult | None = None) -> list[ComparisonCell]:
    """Tune with each method, rerun the winner, and score the final chain.

    Final runs start at the mode with no added noise.  A tuner that fails
    outright contributes a cell with an error note instead of aborting the
    whole comparison.
    """
    for tuner in tuners:
        if tuner not in TUNER_NAMES:
            raise InvalidArgument(f"unknown tuner {tuner!r}")
    if map_result is None:
        map_result = find_map(model, np.zeros(model.dim))

    cells: list[ComparisonCell] = []
    for tuner in tuners:
        try:
            config = _run_tuner(
                tuner, model, sampler_kind, tune_budget=tune_budget,
                stein=stein, log10_step_sizes=log10_step_sizes,
                batch_fractions=batch_fractions, leapfrogs=leapfrogs,
                eta=eta, use_cv=use_cv, grid_iters=grid_iters,
                noise_scale=noise_scale, record_every=record_every,
                base_seed=base_seed, workers=workers, map_result=map_result)
            final_seed = int(np.random.SeedSequence((base_seed, 97))
                             .generate_state(1)[0])
            final_config = replace(config, seed=final_seed)
            chain, _ = run_chain(model, final_config, map_result.theta_map,
                                 final_budget, record_every,
                                 map_result=map_result)
            if chain.diverged or len(chain) < 2:
                cells.append(ComparisonCell(tuner, sampler_kind, None, None,
                                            len(chain), final_config,
                                            error="final run diverged"))
                continue
            reward_rng = np.random.default_rng(
                np.random.SeedSequence((base_seed, 98)))
            ksd_value = stein_reward(chain, model, stein, "ksd", reward_rng)
            xi = relative_std_error(chain, ref, stein.burn_in) \
                if ref is not None else None
            cells.append(ComparisonCell(tuner, sampler_kind,
                                        float(ksd_value), xi, len(chain),
                                        final_config))
        except SteinBanditError as exc:
            cells.append(ComparisonCell(tuner, sampler_kind, None, None,
                                        None, None, error=str(exc)))
    return cells


def _run_tuner(tuner: str, model: TargetModel, sampler_kind: str, *,
               tune_budget, stein, log10_step_sizes, batch_fractions,
               leapfrogs, eta, use_cv, grid_iters, noise_scale, record_every,
               base_seed, workers, map_result) -> SamplerConfig:
    if tuner == "heuristic":
        return heuristic_tune(model.num_data, kind=sampler_kind,
                              use_cv=use_cv, seed=base_seed)
    if tuner == "grid":
        best, _ = grid_search_tune(
            model, sampler_kind, log10_step_sizes, grid_iters, map_result,
            noise_scale, metric="ksd", stein=stein, leapfrogs=leapfrogs,
            use_cv=use_cv, base_seed=base_seed, record_every=record_every)
        return best
    metric = "ksd" if tuner == "mamba-ksd" else "fssd"
    arms = arm_grid(sampler_kind, log10_step_sizes, batch_fractions,
                    leapfrogs, use_cv, base_seed)
    result = mamba_run(model, arms, metric=metric, budget=tune_budget,
                       eta=eta, stein=stein, init=map_result.theta_map,
                       map_result=map_result, record_every=record_every,
                       workers=workers)
    return result.best_config


def comparison_table_rows(cells: list[ComparisonCell]) -> list[list[str]]:
    """Rows for table.csv: `tuner,sampler,ksd,xi_std,n_samples`."""
    rows = [["tuner", "sampler", "ksd", "xi_std", "n_samples"]]
    for cell in cells:
        rows.append([
            cell.tuner, cell.sampler,
            repr(cell.ksd) if cell.ksd is not None else "",
            repr(cell.xi_std) if cell.xi_std is not None else "",
            str(cell.n_samples) if cell.n_samples is not None else "",
        ])
    return rows


def format_comparison(cells: list[ComparisonCell]) -> str:
    """Human-readable rendering of the comparison table."""
    header = f"{'tuner':<12} {'sampler':<8} {'ksd':>12} {'xi_std':>10} {'samples':>8}"
    lines = [header, "-" * len(header)]
    for cell in cells:
        ksd_s = f"{cell.ksd:.4g}" if cell.ksd is not None else "-"
        xi_s = f"{cell.xi_std:.4g}" if cell.xi_std is not None else "-"
        n_s = str(cell.n_samples) if cell.n_samples is not None else "-"
        note = f"  [{cell.error}]" if cell.error else ""
        lines.append(f"{cell.tuner:<12} {cell.sampler:<8} {ksd_s:>12} "
                     f"{xi_s:>10} {n_s:>8}{note}")
    return "\n".join(lines)
