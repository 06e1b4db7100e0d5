"""Configuration-driven command-line front end.

Commands: `tune`, `evaluate`, `schedule`, `curve`.  Configuration is a flat
`key = value` text file ('#' comments allowed); unknown keys are rejected so
typos cannot silently fall back to defaults.  Iteration-mode runs are fully
reproducible; wall-clock runs are marked non-reproducible in their outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import plots
from .bandit import (BanditDiagnostics, MambaResult, arm_grid, diagnostics,
                     grid_search_tune, heuristic_tune, mamba_run,
                     mamba_schedule)
from .errors import (AllArmsDiverged, ConfigError, InvalidArgument,
                     SteinBanditError)
from .evaluation import (comparison_table_rows, compare_tuners,
                         format_comparison, load_reference_csv,
                         reference_from_model, reward_curve,
                         relative_std_error)
from .model import (TargetModel, build_gaussian_conjugate_model,
                    build_logistic_model, find_map, load_logistic_csv,
                    make_logistic_data)
from .samplers import (Budget, SamplerConfig, dump_chain, load_chain,
                       run_chain)
from .stein import (FssdConfig, KernelSpec, SteinConfig, fssd,
                    optimize_test_locations, resolve_gaussian_kernel,
                    sample_set_from_chain, stein_reward)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ALL_DIVERGED = 3


@dataclass
class RunConfig:
    """Validated run configuration with every default materialized."""

    model_kind: str = ""
    model_n: int = 100
    model_d: int = 2
    model_obs_noise: float = 1.0
    model_prior_var: float | None = None
    model_data: str | None = None
    model_seed: int = 0

    tuner_method: str = "mamba"
    tuner_metric: str = "ksd"
    tuner_sampler: str = "sgld"
    tuner_use_cv: bool = False
    tuner_eta: int = 3
    tuner_budget: float = 2000.0
    tuner_budget_mode: str = "iterations"
    tuner_log10_step_sizes: list[float] = field(
        default_factory=lambda: [-3.0, -4.0, -5.0, -6.0])
    tuner_batch_fractions: list[float] = field(
        default_factory=lambda: [1.0, 0.1, 0.01])
    tuner_leapfrogs: list[int] = field(default_factory=lambda: [5, 10])
    tuner_grid_iters: int = 2000
    tuner_noise_scale: float = 0.2
    tuner_compare: list[str] = field(
        default_factory=lambda: ["mamba-ksd", "grid", "heuristic"])

    stein_kernel: str = "imq"
    stein_c: float = 1.0
    stein_beta: float = -0.5
    stein_bandwidth: float | None = None  # None = median heuristic
    stein_thin: int = 10
    stein_burn_in: float = 0.1
    stein_grad_mode: str = "fullbatch"
    stein_j: int = 10
    stein_opt_steps: int = 10
    stein_opt_lr: float = 0.1

    run_out: str = "out"
    run_seed: int = 0
    run_workers: int = 1
    run_record_every: int = 1

    final_budget: float = 5000.0
    final_budget_mode: str = "iterations"

    curve_log10_h: float | None = None
    curve_batch_fraction: float = 0.1
    curve_checkpoints: list[float] = field(
        default_factory=lambda: [500.0, 1000.0, 2000.0])
    curve_repeats: int = 10
    curve_metric: str = "ksd"

    eval_reference: str | None = None


def _parse_bool(raw: str) -> bool:
    if raw.lower() in ("true", "yes", "1"):
        return True
    if raw.lower() in ("false", "no", "0"):
        return False
    raise ValueError(raw)


def _parse_float_list(raw: str) -> list[float]:
    return [float(v) for v in raw.split(",") if v.strip()]


def _parse_int_list(raw: str) -> list[int]:
    return [int(v) for v in raw.split(",") if v.strip()]


def _parse_str_list(raw: str) -> list[str]:
    return [v.strip() for v in raw.split(",") if v.strip()]


def _parse_bandwidth(raw: str) -> float | None:
    if raw.lower() == "median":
        return None
    value = float(raw)
    if value <= 0:
        raise ValueError(raw)
    return value


# key -> (RunConfig attribute, parser, human-readable expected type)
CONFIG_KEYS: dict[str, tuple[str, Any, str]] = {
    "model.kind": ("model_kind", str, "gaussian | logistic"),
    "model.n": ("model_n", int, "positive integer"),
    "model.d": ("model_d", int, "positive integer"),
    "model.obs_noise": ("model_obs_noise", float, "positive real"),
    "model.prior_var": ("model_prior_var", float, "positive real"),
    "model.data": ("model_data", str, "path to CSV"),
    "model.seed": ("model_seed", int, "integer"),
    "tuner.method": ("tuner_method", str,
                     "mamba | grid | heuristic | compare"),
    "tuner.metric": ("tuner_metric", str, "ksd | fssd"),
    "tuner.sampler": ("tuner_sampler", str, "sgld | sghmc | sgnht"),
    "tuner.use_cv": ("tuner_use_cv", _parse_bool, "true | false"),
    "tuner.eta": ("tuner_eta", int, "integer >= 2"),
    "tuner.budget": ("tuner_budget", float, "positive real"),
    "tuner.budget_mode": ("tuner_budget_mode", str, "iterations | seconds"),
    "tuner.log10_step_sizes": ("tuner_log10_step_sizes", _parse_float_list,
                               "comma-separated reals"),
    "tuner.batch_fractions": ("tuner_batch_fractions", _parse_float_list,
                              "comma-separated reals in (0, 1]"),
    "tuner.leapfrogs": ("tuner_leapfrogs", _parse_int_list,
                        "comma-separated positive integers"),
    "tuner.grid_iters": ("tuner_grid_iters", int, "positive integer"),
    "tuner.noise_scale": ("tuner_noise_scale", float, "nonnegative real"),
    "tuner.compare": ("tuner_compare", _parse_str_list,
                      "comma-separated tuner names"),
    "stein.kernel": ("stein_kernel", str, "imq | gaussian"),
    "stein.c": ("stein_c", float, "positive real"),
    "stein.beta": ("stein_beta", float, "real in (-1, 0)"),
    "stein.bandwidth": ("stein_bandwidth", _parse_bandwidth,
                        "'median' or positive real"),
    "stein.thin": ("stein_thin", int, "positive integer"),
    "stein.burn_in": ("stein_burn_in", float, "real in [0, 1)"),
    "stein.grad_mode": ("stein_grad_mode", str, "fullbatch | stochastic"),
    "stein.j": ("stein_j", int, "positive integer"),
    "stein.opt_steps": ("stein_opt_steps", int, "nonnegative integer"),
    "stein.opt_lr": ("stein_opt_lr", float, "positive real"),
    "run.out": ("run_out", str, "directory path"),
    "run.seed": ("run_seed", int, "integer"),
    "run.workers": ("run_workers", int, "positive integer"),
    "run.record_every": ("run_record_every", int, "positive integer"),
    "final.budget": ("final_budget", float, "positive real"),
    "final.budget_mode": ("final_budget_mode", str, "iterations | seconds"),
    "curve.log10_h": ("curve_log10_h", float, "real"),
    "curve.batch_fraction": ("curve_batch_fraction", float,
                             "real in (0, 1]"),
    "curve.checkpoints": ("curve_checkpoints", _parse_float_list,
                          "comma-separated increasing reals"),
    "curve.repeats": ("curve_repeats", int, "positive integer"),
    "curve.metric": ("curve_metric", str, "ksd | fssd"),
    "eval.reference": ("eval_reference", str, "path to CSV"),
}

_CHOICES = {
    "model.kind": ("gaussian", "logistic"),
    "tuner.method": ("mamba", "grid", "heuristic", "compare"),
    "tuner.metric": ("ksd", "fssd"),
    "tuner.sampler": ("sgld", "sghmc", "sgnht"),
    "tuner.budget_mode": ("iterations", "seconds"),
    "stein.kernel": ("imq", "gaussian"),
    "stein.grad_mode": ("fullbatch", "stochastic"),
    "final.budget_mode": ("iterations", "seconds"),
    "curve.metric": ("ksd", "fssd"),
}


def parse_config(path) -> RunConfig:
    """Strictly parse a flat key=value config file.

    Unknown keys, malformed values, out-of-range values, and missing
    referenced files are all rejected with the offending key and line.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    config = RunConfig()
    seen: set[str] = set()
    for lineno, raw_line in enumerate(lines, start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        attr, parser, expected = CONFIG_KEYS[key]
        try:
            value = parser(raw_value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(
                f"{path}:{lineno}: bad value for {key!r}: {raw_value!r} "
                f"(expected {expected})") from exc
        setattr(config, attr, value)
    _validate(config, path)
    return config


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _validate(config: RunConfig, path) -> None:
    _require(config.model_kind in _CHOICES["model.kind"],
             f"model.kind must be one of {_CHOICES['model.kind']}, "
             f"got {config.model_kind!r}")
    _require(config.model_n >= 1 and config.model_d >= 1,
             "model.n and model.d must be positive")
    _require(config.model_obs_noise > 0, "model.obs_noise must be positive")
    if config.model_prior_var is None:
        config.model_prior_var = 10.0 if config.model_kind == "logistic" else 1.0
    _require(config.model_prior_var > 0, "model.prior_var must be positive")
    for key, choices in _CHOICES.items():
        attr = CONFIG_KEYS[key][0]
        value = getattr(config, attr)
        _require(value in choices,
                 f"{key} must be one of {choices}, got {value!r}")
    _require(config.tuner_eta >= 2,
             f"tuner.eta must be at least 2, got {config.tuner_eta}")
    _require(config.tuner_budget > 0, "tuner.budget must be positive")
    _require(-1.0 < config.stein_beta < 0.0,
             f"stein.beta must lie in (-1, 0), the regime in which the IMQ "
             f"kernel detects non-convergence; got {config.stein_beta}")
    _require(config.stein_c > 0, "stein.c must be positive")
    _require(config.stein_thin >= 1, "stein.thin must be positive")
    _require(0.0 <= config.stein_burn_in < 1.0,
             "stein.burn_in must lie in [0, 1)")
    _require(config.stein_j >= 1, "stein.j must be positive")
    _require(config.stein_opt_steps >= 0,
             "stein.opt_steps must be nonnegative")
    _require(config.stein_opt_lr > 0, "stein.opt_lr must be positive")
    _require(config.run_workers >= 1, "run.workers must be positive")
    _require(config.run_record_every >= 1, "run.record_every must be positive")
    _require(config.final_budget > 0, "final.budget must be positive")
    _require(config.tuner_grid_iters >= 1, "tuner.grid_iters must be positive")
    _require(config.tuner_noise_scale >= 0,
             "tuner.noise_scale must be nonnegative")
    if config.tuner_method in ("mamba", "grid", "compare"):
        _require(bool(config.tuner_log10_step_sizes),
                 "tuner.log10_step_sizes must be non-empty for this method")
    if config.tuner_method in ("mamba", "compare"):
        _require(bool(config.tuner_batch_fractions),
                 "tuner.batch_fractions must be non-empty for this method")
    _require(all(0.0 < tau <= 1.0 for tau in config.tuner_batch_fractions),
             "tuner.batch_fractions must lie in (0, 1]")
    _require(all(L >= 1 for L in config.tuner_leapfrogs),
             "tuner.leapfrogs must be positive")
    for tuner in config.tuner_compare:
        _require(tuner in ("mamba-ksd", "mamba-fssd", "grid", "heuristic"),
                 f"unknown tuner {tuner!r} in tuner.compare")
    _require(config.curve_repeats >= 1, "curve.repeats must be positive")
    _require(all(b > a for a, b in zip(config.curve_checkpoints,
                                       config.curve_checkpoints[1:])),
             "curve.checkpoints must be strictly increasing")
    _require(0.0 < config.curve_batch_fraction <= 1.0,
             "curve.batch_fraction must lie in (0, 1]")
    for key, file_path in (("model.data", config.model_data),
                           ("eval.reference", config.eval_reference)):
        if file_path is not None:
            _require(os.path.exists(file_path),
                     f"{key} references a missing file: {file_path}")


def build_model(config: RunConfig) -> TargetModel:
    if config.model_kind == "gaussian":
        return build_gaussian_conjugate_model(
            config.model_n, config.model_d, config.model_obs_noise,
            config.model_prior_var, data_seed=config.model_seed)
    if config.model_data is not None:
        X, y = load_logistic_csv(config.model_data)
    else:
        X, y = make_logistic_data(config.model_n, config.model_d,
                                  seed=config.model_seed)
    return build_logistic_model(X, y, prior_var=config.model_prior_var)


def build_stein(config: RunConfig) -> SteinConfig:
    if config.stein_kernel == "imq":
        kernel = KernelSpec(family="imq", c=config.stein_c,
                            beta=config.stein_beta)
    else:
        kernel = KernelSpec(family="gaussian",
                            bandwidth=config.stein_bandwidth or 1.0)
    return SteinConfig(kernel=kernel, grad_mode=config.stein_grad_mode,
                       thin=config.stein_thin, burn_in=config.stein_burn_in,
                       fssd=FssdConfig(J=config.stein_j,
                                       opt_steps=config.stein_opt_steps,
                                       opt_lr=config.stein_opt_lr),
                       bandwidth=config.stein_bandwidth)


ROUNDS_HEADER = ["round", "arm_id", "sampler", "log10_h", "batch_fraction",
                 "leapfrog", "budget", "reward", "pruned"]


def write_rounds_csv(path, records, configs: dict[int, SamplerConfig]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_HEADER)
        for rec in records:
            for arm_id, budget, reward in rec.entries:
                cfg = configs[arm_id]
                writer.writerow([
                    rec.round_index, arm_id, cfg.kind,
                    repr(math.log10(cfg.step_size)),
                    repr(cfg.batch_fraction), cfg.leapfrog,
                    repr(float(budget)), repr(float(reward)),
                    "true" if arm_id in rec.pruned else "false",
                ])


def _config_json(config: SamplerConfig) -> dict:
    return {
        "sampler": config.kind,
        "step_size": config.step_size,
        "log10_step_size": math.log10(config.step_size),
        "batch_fraction": config.batch_fraction,
        "leapfrog": config.leapfrog,
        "use_cv": config.use_cv,
        "seed": config.seed,
    }


def _diagnostics_json(diag: BanditDiagnostics | None) -> dict | None:
    if diag is None:
        return None
    return {
        "gaps": [float(g) for g in diag.gaps],
        "h2": None if not diag.h2_defined else float(diag.h2),
        "h2_defined": diag.h2_defined,
        "sigma2_ksd": float(diag.sigma2_ksd),
        "budget_bound_t": None if math.isnan(diag.budget_bound_t)
        else float(diag.budget_bound_t),
    }


def write_selection_json(path, config: SamplerConfig, run_config: RunConfig,
                         diag: BanditDiagnostics | None) -> None:
    payload = {
        "method": run_config.tuner_method,
        "metric": run_config.tuner_metric,
        "budget": run_config.tuner_budget,
        "budget_mode": run_config.tuner_budget_mode,
        "reproducible": run_config.tuner_budget_mode == "iterations",
        "selection": _config_json(config),
        "diagnostics": _diagnostics_json(diag),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mamba_diagnostics(result: MambaResult, model, stein: SteinConfig,
                       eta: int, M: int) -> BanditDiagnostics | None:
    """Diagnostics from the final round's ranked rewards and sample sets."""
    final = result.rounds[-1]
    ranked = sorted((reward for _, _, reward in final.entries), reverse=True)
    if len(ranked) < 2 or not all(np.isfinite(ranked)):
        return None
    sets = []
    final_ids = [arm_id for arm_id, _, _ in final.entries]
    for arm in result.arms:
        if arm.arm_id in final_ids and arm.chain is not None \
                and len(arm.chain) >= 2 and not arm.chain.diverged:
            sets.append(sample_set_from_chain(
                arm.chain, model, stein.thin, stein.burn_in, stein.grad_mode))
    try:
        return diagnostics(ranked, sets, eta, M, delta=0.05,
                           kernel_spec=stein.kernel)
    except InvalidArgument:
        return None


def cmd_tune(config: RunConfig, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(config)
    stein = build_stein(config)
    budget = Budget(config.tuner_budget_mode, config.tuner_budget)
    map_result = find_map(model, np.zeros(model.dim))

    if config.tuner_method == "compare":
        return _run_compare(config, out_dir, model, stein, budget, map_result)

    if config.tuner_method == "heuristic":
        best = heuristic_tune(model.num_data, kind=config.tuner_sampler,
                              use_cv=config.tuner_use_cv, seed=config.run_seed)
        write_rounds_csv(os.path.join(out_dir, "rounds.csv"), [], {})
        write_selection_json(os.path.join(out_dir, "selection.json"),
                             best, config, None)
        print(f"selected: {_config_json(best)}")
        return EXIT_OK

    if config.tuner_method == "grid":
        best, results = grid_search_tune(
            model, config.tuner_sampler, config.tuner_log10_step_sizes,
            config.tuner_grid_iters, map_result, config.tuner_noise_scale,
            metric=config.tuner_metric, stein=stein,
            leapfrogs=config.tuner_leapfrogs, use_cv=config.tuner_use_cv,
            base_seed=config.run_seed,
            record_every=config.run_record_every)
        # one pseudo-round: every grid point evaluated once, best kept
        from .bandit import RoundRecord
        entries = [(i, float(config.tuner_grid_iters), -r.metric_value)
                   for i, r in enumerate(results)]
        best_id = max(range(len(results)),
                      key=lambda i: (entries[i][2], -i))
        record = RoundRecord(round_index=0,
                             budget=float(config.tuner_grid_iters),
                             entries=entries,
                             pruned=[i for i in range(len(results))
                                     if i != best_id],
                             survivors=[best_id])
        configs = {i: r.config for i, r in enumerate(results)}
        write_rounds_csv(os.path.join(out_dir, "rounds.csv"), [record], configs)
        plots.plot_rounds([record], configs,
                          os.path.join(out_dir, "rounds.png"))
        write_selection_json(os.path.join(out_dir, "selection.json"),
                             best, config, None)
        print(f"selected: {_config_json(best)}")
        return EXIT_OK

    arms = arm_grid(config.tuner_sampler, config.tuner_log10_step_sizes,
                    config.tuner_batch_fractions, config.tuner_leapfrogs,
                    config.tuner_use_cv, base_seed=config.run_seed)
    result = mamba_run(model, arms, metric=config.tuner_metric, budget=budget,
                       eta=config.tuner_eta, stein=stein,
                       init=map_result.theta_map, map_result=map_result,
                       record_every=config.run_record_every,
                       workers=config.run_workers)
    configs = {arm.arm_id: arm.config for arm in result.arms}
    write_rounds_csv(os.path.join(out_dir, "rounds.csv"), result.rounds, configs)
    plots.plot_rounds(result.rounds, configs,
                      os.path.join(out_dir, "rounds.png"))
    diag = _mamba_diagnostics(result, model, stein, config.tuner_eta,
                              len(arms))
    write_selection_json(os.path.join(out_dir, "selection.json"),
                         result.best_config, config, diag)
    winner = result.best()
    if winner.chain is not None and len(winner.chain) > 0:
        dump_chain(winner.chain, os.path.join(out_dir, "chain.csv"))
    for rec in result.rounds:
        survivors = ",".join(str(s) for s in rec.survivors)
        print(f"round {rec.round_index}: budget {rec.budget:g} per arm, "
              f"survivors [{survivors}]")
    print(f"selected arm {result.best_arm_id}: "
          f"{_config_json(result.best_config)}")
    return EXIT_OK


def _run_compare(config, out_dir, model, stein, budget, map_result) -> int:
    ref = reference_from_model(model)
    if config.eval_reference is not None:
        ref = load_reference_csv(config.eval_reference)
    cells = compare_tuners(
        model, list(config.tuner_compare), config.tuner_sampler,
        tune_budget=budget,
        final_budget=Budget(config.final_budget_mode, config.final_budget),
        ref=ref, stein=stein,
        log10_step_sizes=config.tuner_log10_step_sizes,
        batch_fractions=config.tuner_batch_fractions,
        leapfrogs=config.tuner_leapfrogs, eta=config.tuner_eta,
        use_cv=config.tuner_use_cv, grid_iters=config.tuner_grid_iters,
        noise_scale=config.tuner_noise_scale,
        record_every=config.run_record_every, base_seed=config.run_seed,
        workers=config.run_workers, map_result=map_result)
    table_path = os.path.join(out_dir, "table.csv")
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(comparison_table_rows(cells))
    plots.plot_table(cells, os.path.join(out_dir, "table.png"))
    print(format_comparison(cells))
    return EXIT_OK


def cmd_schedule(M: int, eta: int, T: float) -> int:
    schedule = mamba_schedule(M, eta, T)
    print(f"{'round':>5} {'arms':>6} {'r_i':>12}")
    for round_index, size, r_i in schedule:
        print(f"{round_index:>5} {size:>6} {r_i:>12g}")
    total = sum(size * r_i for _, size, r_i in schedule)
    print(f"total allocated budget: {total:g}")
    return EXIT_OK


def cmd_evaluate(config: RunConfig, out_dir: str,
                 chain_path: str | None = None,
                 selection_path: str | None = None) -> int:
    if (chain_path is None) == (selection_path is None):
        raise ConfigError("evaluate needs exactly one of --chain/--selection")
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(config)
    stein = build_stein(config)

    if chain_path is not None:
        chain = load_chain(chain_path)
    else:
        with open(selection_path, encoding="utf-8") as fh:
            selection = json.load(fh)["selection"]
        sampler = SamplerConfig(kind=selection["sampler"],
                                step_size=selection["step_size"],
                                batch_fraction=selection["batch_fraction"],
                                leapfrog=selection["leapfrog"],
                                use_cv=selection["use_cv"],
                                seed=selection["seed"])
        map_result = find_map(model, np.zeros(model.dim))
        chain, _ = run_chain_for_eval(model, sampler, config, map_result)

    if chain.dim != model.dim:
        raise InvalidArgument(f"chain dimension {chain.dim} does not match "
                              f"model dimension {model.dim}")

    metrics: dict[str, Any] = {}
    reward_rng = np.random.default_rng(
        np.random.SeedSequence((config.run_seed, 11)))
    metrics["ksd"] = stein_reward(chain, model, stein, "ksd", reward_rng)
    sample_set = sample_set_from_chain(chain, model, stein.thin,
                                       stein.burn_in, stein.grad_mode)
    if len(sample_set) >= 2:
        gauss = resolve_gaussian_kernel(stein, sample_set.points)
        placed = optimize_test_locations(sample_set, stein.fssd, gauss,
                                         reward_rng)
        metrics["fssd"] = fssd(sample_set, placed, gauss)
    ref = reference_from_model(model)
    if config.eval_reference is not None:
        ref = load_reference_csv(config.eval_reference)
    if ref is not None and len(chain) >= 2:
        metrics["xi_std"] = relative_std_error(chain, ref, stein.burn_in)
    metrics["n_samples"] = len(chain)

    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    with open(os.path.join(out_dir, "metrics.json"), "w",
              encoding="utf-8") as fh:
        fh.write(text + "\n")
    return EXIT_OK


def run_chain_for_eval(model, sampler, config, map_result):
    return run_chain(model, sampler, map_result.theta_map,
                     Budget(config.final_budget_mode, config.final_budget),
                     config.run_record_every, map_result=map_result)


def cmd_curve(config: RunConfig, out_dir: str) -> int:
    if config.curve_log10_h is None:
        raise ConfigError("curve.log10_h is required for the curve command")
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(config)
    stein = build_stein(config)
    map_result = find_map(model, np.zeros(model.dim))
    sampler = SamplerConfig(kind=config.tuner_sampler,
                            step_size=10.0 ** config.curve_log10_h,
                            batch_fraction=config.curve_batch_fraction,
                            use_cv=config.tuner_use_cv, seed=config.run_seed)
    band = reward_curve(model, sampler, list(config.curve_checkpoints),
                        config.curve_metric, config.curve_repeats,
                        stein=stein, init=map_result.theta_map,
                        map_result=map_result,
                        budget_mode=config.tuner_budget_mode,
                        record_every=config.run_record_every,
                        base_seed=config.run_seed)
    curve_path = os.path.join(out_dir, "curve.csv")
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["checkpoint", "mean", "lower", "upper"])
        for i in range(len(band.checkpoints)):
            writer.writerow([repr(float(band.checkpoints[i])),
                             repr(float(band.mean[i])),
                             repr(float(band.lower[i])),
                             repr(float(band.upper[i]))])
    plots.plot_curve(band, os.path.join(out_dir, "curve.png"))
    print(f"wrote {curve_path}")
    return EXIT_OK


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config.run_seed = args.seed
    if getattr(args, "out", None) is not None:
        config.run_out = args.out
    if getattr(args, "workers", None) is not None:
        config.run_workers = args.workers
    if getattr(args, "budget_mode", None) is not None:
        config.tuner_budget_mode = args.budget_mode
        config.final_budget_mode = args.budget_mode
    return config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steinbandit",
        description="Tune stochastic-gradient MCMC samplers with a "
                    "successive-halving bandit scored by Stein discrepancies.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="run config file")
        p.add_argument("--out", help="output directory (overrides run.out)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--workers", type=int, help="override run.workers")
        p.add_argument("--budget-mode", choices=("seconds", "iterations"),
                       dest="budget_mode", help="override budget mode")

    p_tune = sub.add_parser("tune", help="run the configured tuner")
    add_common(p_tune)

    p_eval = sub.add_parser("evaluate", help="score a chain or a selection")
    add_common(p_eval)
    p_eval.add_argument("--chain", help="chain CSV to score")
    p_eval.add_argument("--selection", help="selection.json to rerun and score")

    p_curve = sub.add_parser("curve", help="metric trajectory over budgets")
    add_common(p_curve)

    p_sched = sub.add_parser("schedule", help="preview the round budgets")
    p_sched.add_argument("M", type=int, help="number of arms")
    p_sched.add_argument("eta", type=int, help="pruning rate")
    p_sched.add_argument("T", type=float, help="total budget")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "schedule":
            return cmd_schedule(args.M, args.eta, args.T)
        config = _apply_overrides(parse_config(args.config), args)
        out_dir = config.run_out
        if args.command == "tune":
            return cmd_tune(config, out_dir)
        if args.command == "evaluate":
            return cmd_evaluate(config, out_dir, chain_path=args.chain,
                                selection_path=args.selection)
        return cmd_curve(config, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllArmsDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_DIVERGED
    except (InvalidArgument, SteinBanditError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, InvalidArgument) else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
