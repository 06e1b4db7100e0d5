"""Successive-halving tuner for SGMCMC arms, plus baselines and diagnostics.

The tuner runs M competing sampler configurations under one shared budget:
each round every surviving arm's chain is resumed for r_i = T / (|S_i| *
floor(log_eta M)) budget units, arms are ranked by reward (the negated Stein
discrepancy of the cumulative thinned chain), and only the top floor(|S_i| /
eta) survive.  Budget freed by pruned arms flows to the survivors, so per-arm
budgets grow geometrically, r_{i+1} = eta * r_i, whenever M is a power of eta.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import AllArmsDiverged, InvalidArgument
from .model import MapResult, TargetModel
from .samplers import (Budget, Chain, ChainState, SamplerConfig, concat_chains,
                       empty_chain, run_chain)
from .stein import KernelSpec, SteinConfig, stein_kernel_matrix, stein_reward

Array = np.ndarray


@dataclass
class Arm:
    """One configuration with its live chain state (chains resume, never restart)."""

    arm_id: int
    config: SamplerConfig
    state: ChainState | None = None
    chain: Chain | None = None
    rng: np.random.Generator | None = None
    diverged: bool = False


@dataclass
class ArmSet:
    arms: list[Arm]
    round_index: int = 0

    def __post_init__(self):
        ids = [a.arm_id for a in self.arms]
        if len(set(ids)) != len(ids):
            raise InvalidArgument("arm ids must be unique")


@dataclass(frozen=True)
class RoundRecord:
    """What happened in one evaluate-and-prune round."""

    round_index: int
    budget: float
    entries: list[tuple[int, float, float]]  # (arm_id, budget, reward)
    pruned: list[int]
    survivors: list[int]


@dataclass(frozen=True)
class BanditDiagnostics:
    """Suboptimality gaps, complexity, reward variance, and the budget bound."""

    gaps: Array
    h2: float
    sigma2_ksd: float
    budget_bound_t: float
    h2_defined: bool


@dataclass(frozen=True)
class MambaResult:
    best_arm_id: int
    best_config: SamplerConfig
    rounds: list[RoundRecord]
    arms: list[Arm]

    def best(self) -> Arm:
        for arm in self.arms:
            if arm.arm_id == self.best_arm_id:
                return arm
        raise KeyError(self.best_arm_id)


def _int_log(M: int, eta: int) -> int:
    """floor(log_eta M) computed in integer arithmetic."""
    k, power = 0, eta
    while power <= M:
        k += 1
        power *= eta
    return k


def mamba_schedule(M: int, eta: int, T: float) -> list[tuple[int, int, float]]:
    """Rounds of (round index, surviving arm count, per-arm budget r_i).

    r_i = T / (|S_i| * floor(log_eta M)) with |S_0| = M and |S_{i+1}| =
    max(1, floor(|S_i| / eta)), for exactly floor(log_eta M) rounds.
    """
    if M < 2:
        raise InvalidArgument("need at least two arms")
    if eta < 2:
        raise InvalidArgument("eta must be at least 2")
    if T <= 0:
        raise InvalidArgument("budget must be positive")
    rounds = _int_log(M, eta)
    if rounds < 1:
        raise InvalidArgument(
            f"M={M} arms with eta={eta} yields zero rounds; need M >= eta")
    schedule = []
    size = M
    for i in range(rounds):
        schedule.append((i, size, T / (size * rounds)))
        size = max(1, size // eta)
    return schedule


def prune(rewards: Sequence[tuple[int, float]], eta: int) -> list[int]:
    """Ids of the max(1, floor(len/eta)) best arms; ties go to lower ids."""
    if not rewards:
        raise InvalidArgument("no rewards to prune")
    if eta < 2:
        raise InvalidArgument("eta must be at least 2")
    keep = max(1, len(rewards) // eta)
    ranked = sorted(rewards, key=lambda item: (-item[1], item[0]))
    return sorted(arm_id for arm_id, _ in ranked[:keep])


def successive_halving(arm_ids: Sequence[int],
                       pull: Callable[[int, float, int], float],
                       eta: int, total_budget: float,
                       ) -> tuple[int, list[RoundRecord]]:
    """Core fixed-budget best-arm loop with an injectable reward source.

    `pull(arm_id, r_i, round_index)` must advance the arm by budget r_i and
    return its current reward (higher is better; -inf marks divergence).
    This indirection is what lets tests drive the loop with synthetic
    Gaussian rewards instead of chains.
    """

    def pull_round(ids: list[int], r_i: float, round_index: int) -> list[float]:
        return [pull(arm_id, r_i, round_index) for arm_id in ids]

    return _halving_batched(arm_ids, pull_round, eta, total_budget)


def arm_grid(kind: str, log10_step_sizes: Sequence[float],
             batch_fractions: Sequence[float],
             leapfrogs: Sequence[int] = (5,), use_cv: bool = False,
             base_seed: int = 0) -> list[SamplerConfig]:
    """Enumerate configs: step sizes outer, batch fractions, leapfrog inner.

    Arm ids follow this enumeration order, which fixes tie-breaking; each
    arm gets an independent seed derived from (base_seed, arm_id).
    """
    if not log10_step_sizes or not batch_fractions:
        raise InvalidArgument("step-size and batch-fraction grids must be non-empty")
    leaps = list(leapfrogs) if kind == "sghmc" else [1]
    configs = []
    arm_id = 0
    for lh in log10_step_sizes:
        for tau in batch_fractions:
            for L in leaps:
                seed = int(np.random.SeedSequence((base_seed, arm_id))
                           .generate_state(1)[0])
                configs.append(SamplerConfig(kind=kind, step_size=10.0 ** lh,
                                             batch_fraction=tau, leapfrog=L,
                                             use_cv=use_cv, seed=seed))
                arm_id += 1
    return configs


def _round_iterations(r_i: float) -> int:
    return max(1, int(round(r_i)))


def mamba_run(model: TargetModel, arms: Sequence[SamplerConfig], *,
              metric: str = "ksd", budget: Budget, eta: int = 3,
              stein: SteinConfig, init: Array,
              map_result: MapResult | None = None, record_every: int = 1,
              workers: int = 1) -> MambaResult:
    """Tune by successive halving with Stein-discrepancy rewards.

    Each surviving arm resumes its own chain (own RNG stream, own state) for
    r_i budget units per round; its reward is the negated discrepancy of the
    cumulative thinned chain.  Diverged arms score -inf and are pruned ahead
    of any finite arm; if every arm diverges the run fails loudly.
    """
    if len(arms) < 2:
        raise InvalidArgument("need at least two arms")
    if metric not in ("ksd", "fssd"):
        raise InvalidArgument(f"unknown metric {metric!r}")
    arm_set = ArmSet(arms=[Arm(arm_id=i, config=cfg,
                               chain=empty_chain(model.dim),
                               rng=np.random.default_rng(cfg.seed))
                           for i, cfg in enumerate(arms)])
    arm_objs = {arm.arm_id: arm for arm in arm_set.arms}

    def advance(arm: Arm, r_i: float, round_index: int) -> float:
        if arm.diverged:
            return float("-inf")
        step_budget = (Budget("iterations", _round_iterations(r_i))
                       if budget.mode == "iterations"
                       else Budget("seconds", r_i))
        segment, arm.state = run_chain(model, arm.config, init, step_budget,
                                       record_every, state=arm.state,
                                       rng=arm.rng, map_result=map_result)
        arm.chain = concat_chains(arm.chain, segment)
        if arm.chain.diverged or len(arm.chain) == 0:
            arm.diverged = True
            return float("-inf")
        reward_rng = np.random.default_rng(
            np.random.SeedSequence((arm.config.seed, round_index)))
        value = stein_reward(arm.chain, model, stein, metric, reward_rng,
                             workers=1)
        return float("-inf") if not np.isfinite(value) else -value

    def pull(arm_id: int, r_i: float, round_index: int) -> float:
        return advance(arm_objs[arm_id], r_i, round_index)

    if workers > 1:
        # evaluate each round's arms concurrently, keeping arm order
        def pull_round(ids: list[int], r_i: float, round_index: int):
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(
                    lambda a: advance(arm_objs[a], r_i, round_index), ids))

        best, records = _halving_batched(list(arm_objs), pull_round, eta,
                                         budget.amount)
    else:
        best, records = successive_halving(list(arm_objs), pull, eta,
                                           budget.amount)
    return MambaResult(best_arm_id=best, best_config=arm_objs[best].config,
                       rounds=records, arms=list(arm_objs.values()))


def _halving_batched(arm_ids, pull_round, eta, total_budget):
    """successive_halving with whole rounds evaluated at once."""
    ids = list(arm_ids)
    schedule = mamba_schedule(len(ids), eta, total_budget)
    records = []
    for round_index, _, r_i in schedule:
        values = pull_round(ids, r_i, round_index)
        entries = [(arm_id, r_i, value) for arm_id, value in zip(ids, values)]
        rewards = [(arm_id, value) for arm_id, _, value in entries]
        if all(value == float("-inf") for _, value in rewards):
            raise AllArmsDiverged(f"every arm diverged in round {round_index}")
        survivors = prune(rewards, eta)
        pruned = sorted(set(ids) - set(survivors))
        records.append(RoundRecord(round_index=round_index, budget=r_i,
                                   entries=entries, pruned=pruned,
                                   survivors=survivors))
        ids = survivors
    if len(ids) == 1:
        return ids[0], records
    # when M is not a power of eta the last round can leave several arms;
    # the winner is the best of them by final-round reward
    final = [(arm_id, reward) for arm_id, _, reward in records[-1].entries
             if arm_id in ids]
    winner = sorted(final, key=lambda item: (-item[1], item[0]))[0][0]
    return winner, records


def synthetic_reward_sampler(means: Sequence[float], noise_sigma: float,
                             rng: np.random.Generator,
                             ) -> Callable[[int, float, int], float]:
    """Reward source for bandit property tests, bypassing chains entirely.

    Running arm s for budget r yields mean_s + Normal(0, sigma^2 / r): the
    averaging of a longer run shrinks the noise exactly as a Monte Carlo
    reward estimate would.
    """
    means = np.asarray(means, dtype=float)

    def pull(arm_id: int, r_i: float, round_index: int) -> float:
        return float(means[arm_id]
                     + rng.normal(0.0, noise_sigma / np.sqrt(r_i)))

    return pull


def heuristic_tune(N: int, kind: str = "sgld", use_cv: bool = False,
                   seed: int = 0) -> SamplerConfig:
    """Fixed rule: step size h = 1/N, 10% batches, everything else default."""
    if N < 1:
        raise InvalidArgument("dataset size must be positive")
    return SamplerConfig(kind=kind, step_size=1.0 / N, batch_fraction=0.1,
                         use_cv=use_cv, seed=seed)


@dataclass(frozen=True)
class GridPointResult:
    config: SamplerConfig
    metric_value: float


def grid_search_tune(model: TargetModel, kind: str,
                     log10_step_sizes: Sequence[float], iters_per_point: int,
                     map_result: MapResult, noise_scale: float, *,
                     metric: str = "ksd", stein: SteinConfig | None = None,
                     metric_fn: Callable[[Chain], float] | None = None,
                     leapfrogs: Sequence[int] = (5,), use_cv: bool = False,
                     batch_fraction: float = 0.1, base_seed: int = 0,
                     record_every: int = 1,
                     ) -> tuple[SamplerConfig, list[GridPointResult]]:
    """Baseline tuner: fixed 10% batches, one short run per step size.

    Every run starts from the mode plus Gaussian noise of scale
    `noise_scale` (without the noise the smallest step size always wins by
    simply not moving).  Returns the config minimizing the metric along with
    the per-point metric values; `metric_fn` (e.g. predictive log-loss for
    the logistic model) overrides the default Stein metric.
    """
    if not log10_step_sizes:
        raise InvalidArgument("step-size grid must be non-empty")
    if stein is None:
        stein = SteinConfig()
    configs = arm_grid(kind, list(log10_step_sizes), [batch_fraction],
                       leapfrogs, use_cv, base_seed)
    results: list[GridPointResult] = []
    for arm_id, config in enumerate(configs):
        rng = np.random.default_rng(config.seed)
        start = map_result.theta_map + noise_scale * rng.standard_normal(model.dim)
        chain, _ = run_chain(model, config, start,
                             Budget("iterations", iters_per_point),
                             record_every, rng=rng, map_result=map_result)
        if chain.diverged or len(chain) == 0:
            value = float("inf")
        elif metric_fn is not None:
            value = float(metric_fn(chain))
        else:
            reward_rng = np.random.default_rng(
                np.random.SeedSequence((config.seed, 1)))
            value = stein_reward(chain, model, stein, metric, reward_rng)
        results.append(GridPointResult(config=config, metric_value=value))
    finite = [r for r in results if np.isfinite(r.metric_value)]
    if not finite:
        raise AllArmsDiverged("every grid point diverged")
    best = min(enumerate(results),
               key=lambda item: (item[1].metric_value, item[0]))[1]
    return best.config, results


def diagnostics(rewards: Sequence[float],
                ksd_sample_sets: Sequence | None, eta: int, M: int,
                delta: float, kernel_spec=None) -> BanditDiagnostics:
    """Gap/complexity summary and the explicit success-budget bound.

    `rewards` must be sorted descending.  The reward variance proxy is the
    empirical variance (over sample points) of the row-mean of the Stein
    kernel matrix, maximized over the provided sample sets; the budget bound
    T = (4 sigma^2 H2 (log_eta M + 1) / eta) * ln((2 eta - 1) log_eta M /
    delta) inverts the success-probability bound exactly, so it scales
    linearly in sigma^2.
    """
    rewards = list(rewards)
    if len(rewards) < 2:
        raise InvalidArgument("need at least two ranked rewards")
    if any(rewards[i] < rewards[i + 1] for i in range(len(rewards) - 1)):
        raise InvalidArgument("rewards must be sorted descending")
    if not 0.0 < delta < 1.0:
        raise InvalidArgument("delta must lie in (0, 1)")
    gaps = np.asarray([rewards[0] - r for r in rewards])
    h2_defined = bool(gaps[1] > 0.0)
    if h2_defined:
        ranks = np.arange(2, len(rewards) + 1, dtype=float)
        h2 = float(np.max(ranks / gaps[1:] ** 2))
    else:
        h2 = float("nan")

    sigma2 = 0.0
    if ksd_sample_sets:
        spec = kernel_spec if kernel_spec is not None else KernelSpec()
        for sample_set in ksd_sample_sets:
            mat = stein_kernel_matrix(spec, sample_set)
            row_means = mat.mean(axis=1)
            if row_means.size >= 2:
                sigma2 = max(sigma2, float(np.var(row_means, ddof=1)))

    log_m = float(np.log(M) / np.log(eta))
    if h2_defined and sigma2 > 0.0:
        bound_t = (4.0 * sigma2 * h2 * (log_m + 1.0) / eta) \
            * float(np.log((2.0 * eta - 1.0) * log_m / delta))
    else:
        bound_t = float("nan")
    return BanditDiagnostics(gaps=gaps, h2=h2, sigma2_ksd=sigma2,
                             budget_bound_t=bound_t, h2_defined=h2_defined)


def theorem_failure_bound(eta: int, M: int, T: float, sigma2: float,
                          h2: float) -> float:
    """Probability bound on pruning the best arm, at known sigma^2 and H2."""
    log_m = float(np.log(M) / np.log(eta))
    return float((2.0 * eta - 1.0) * log_m
                 * np.exp(-eta * T / (4.0 * sigma2 * h2 * (log_m + 1.0))))
