"""SGLD, SGHMC, and SGNHT dynamics plus a budgeted, resumable chain runner.

All stochastic terms can be overridden with explicit arrays in the low-level
step functions, which makes hand-computed single-step values assertable in
tests.  The runner records every `record_every`-th state together with the
stochastic gradient actually evaluated at that state, so stochastic Stein
estimators can reuse them without extra gradient passes.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument
from .model import GradientEstimate, MapResult, TargetModel, grad_cv, grad_minibatch

Array = np.ndarray

SAMPLER_KINDS = ("sgld", "sghmc", "sgnht")
DIVERGENCE_NORM = 1e10


@dataclass(frozen=True)
class SamplerConfig:
    """One hyperparameter configuration (a bandit arm).

    `batch_fraction` maps to a batch size n = max(1, floor(tau * N)).
    SGHMC uses `leapfrog` inner steps per recorded sample, friction `alpha`
    and noise estimate `beta_hat` with injected noise variance 2(alpha -
    beta_hat)h, which must be positive.  SGNHT uses the thermostat parameter
    `a` (also the initial thermostat value).
    """

    kind: str = "sgld"
    step_size: float = 1e-4
    batch_fraction: float = 0.1
    leapfrog: int = 5
    alpha: float = 0.01
    beta_hat: float = 0.0
    a: float = 0.01
    use_cv: bool = False
    resample_momentum: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise InvalidArgument(f"unknown sampler kind {self.kind!r}")
        if self.step_size <= 0:
            raise InvalidArgument("step_size must be positive")
        if not 0.0 < self.batch_fraction <= 1.0:
            raise InvalidArgument("batch_fraction must lie in (0, 1]")
        if self.leapfrog < 1:
            raise InvalidArgument("leapfrog count must be positive")
        if self.kind == "sghmc" and self.alpha <= self.beta_hat:
            raise InvalidArgument(
                "SGHMC requires alpha > beta_hat for positive noise variance")
        if self.kind == "sgnht" and self.a <= 0:
            raise InvalidArgument("SGNHT thermostat parameter must be positive")

    def batch_size(self, num_data: int) -> int:
        return max(1, int(self.batch_fraction * num_data))


@dataclass(frozen=True)
class ChainState:
    """Live state of one chain; `momentum`/`thermostat` used as needed."""

    theta: Array
    momentum: Array | None = None
    thermostat: float | None = None
    iteration: int = 0
    elapsed_sec: float = 0.0


@dataclass(frozen=True)
class Budget:
    """Either a wall-clock allowance in seconds or an exact iteration count."""

    mode: str
    amount: float

    def __post_init__(self):
        if self.mode == "wall_clock_seconds":
            object.__setattr__(self, "mode", "seconds")
        if self.mode not in ("iterations", "seconds"):
            raise InvalidArgument(f"unknown budget mode {self.mode!r}")
        if self.amount <= 0:
            raise InvalidArgument("budget amount must be positive")


@dataclass
class Chain:
    """Recorded samples with their stochastic gradients and timestamps."""

    iterations: Array
    wall_times: Array
    thetas: Array
    grads: Array
    diverged: bool
    total_iterations: int

    def __len__(self) -> int:
        return self.thetas.shape[0]

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]


def empty_chain(dim: int) -> Chain:
    return Chain(np.zeros(0, dtype=np.int64), np.zeros(0),
                 np.zeros((0, dim)), np.zeros((0, dim)),
                 diverged=False, total_iterations=0)


def concat_chains(first: Chain, second: Chain) -> Chain:
    """Join two consecutive segments of the same chain."""
    if len(first) == 0:
        return second
    if len(second) == 0:
        return replace(first, diverged=first.diverged or second.diverged,
                       total_iterations=max(first.total_iterations,
                                            second.total_iterations))
    return Chain(np.concatenate([first.iterations, second.iterations]),
                 np.concatenate([first.wall_times, second.wall_times]),
                 np.vstack([first.thetas, second.thetas]),
                 np.vstack([first.grads, second.grads]),
                 diverged=first.diverged or second.diverged,
                 total_iterations=second.total_iterations)


def sgld_step(state: ChainState, grad: GradientEstimate | Array, h: float,
              rng: np.random.Generator, xi: Array | None = None) -> ChainState:
    """theta' = theta - (h/2) grad + sqrt(h) xi with xi ~ Normal(0, I)."""
    g = grad.value if isinstance(grad, GradientEstimate) else np.asarray(grad, float)
    if xi is None:
        xi = rng.standard_normal(g.shape[0])
    theta = state.theta - 0.5 * h * g + np.sqrt(h) * xi
    return replace(state, theta=theta, iteration=state.iteration + 1)


def sghmc_trajectory(state: ChainState, grad_fn, h: float, L: int,
                     alpha: float, beta_hat: float, rng: np.random.Generator,
                     v0: Array | None = None,
                     xis: Array | None = None) -> tuple[ChainState, Array, Array]:
    """One L-step SGHMC trajectory with momentum resampled at the start.

    Inner update: theta <- theta + v; v <- v - h grad(theta) - alpha v + xi,
    xi ~ Normal(0, 2(alpha - beta_hat) h I).  Returns the new state plus the
    final position and the last stochastic gradient (evaluated there), which
    is what gets recorded.
    """
    if alpha < beta_hat:
        raise InvalidArgument("SGHMC requires alpha >= beta_hat")
    if L < 1:
        raise InvalidArgument("leapfrog count must be positive")
    d = state.theta.shape[0]
    if v0 is None:
        v0 = np.sqrt(h) * rng.standard_normal(d)
    noise_scale = np.sqrt(2.0 * (alpha - beta_hat) * h)
    theta, v = state.theta, np.asarray(v0, dtype=float)
    last_grad = np.zeros(d)
    for step in range(L):
        theta = theta + v
        last_grad = grad_fn(theta)
        if xis is not None:
            xi = np.asarray(xis[step], dtype=float)
        else:
            xi = rng.standard_normal(d)
        v = v - h * last_grad - alpha * v + noise_scale * xi
    new = replace(state, theta=theta, momentum=v,
                  iteration=state.iteration + 1)
    return new, theta, last_grad


def sgnht_step(state: ChainState, grad: GradientEstimate | Array, h: float,
               a: float, rng: np.random.Generator,
               xi: Array | None = None) -> ChainState:
    """Thermostatted update.

    v' = v - h grad - alpha_n v + sqrt(2 a h) xi;  theta' = theta + v';
    alpha' = alpha_n + v'.v'/D - h.  The thermostat starts at alpha_0 = a.
    """
    if a <= 0:
        raise InvalidArgument("thermostat parameter must be positive")
    g = grad.value if isinstance(grad, GradientEstimate) else np.asarray(grad, float)
    d = state.theta.shape[0]
    v = state.momentum if state.momentum is not None else np.zeros(d)
    alpha_n = state.thermostat if state.thermostat is not None else a
    if xi is None:
        xi = rng.standard_normal(d)
    v_new = v - h * g - alpha_n * v + np.sqrt(2.0 * a * h) * xi
    theta = state.theta + v_new
    alpha_new = alpha_n + float(v_new @ v_new) / d - h
    return replace(state, theta=theta, momentum=v_new, thermostat=alpha_new,
                   iteration=state.iteration + 1)


def _make_estimator(model: TargetModel, config: SamplerConfig,
                    map_result: MapResult | None, rng: np.random.Generator):
    n = config.batch_size(model.num_data)
    if config.use_cv:
        if map_result is None:
            raise InvalidArgument("use_cv requires a MapResult")

        def estimate(theta: Array) -> Array:
            return grad_cv(model, theta, map_result, n, rng).value
    else:

        def estimate(theta: Array) -> Array:
            return grad_minibatch(model, theta, n, rng).value

    return estimate


def _state_ok(theta: Array) -> bool:
    return bool(np.all(np.isfinite(theta))
                and np.linalg.norm(theta) <= DIVERGENCE_NORM)


def run_chain(model: TargetModel, config: SamplerConfig, init: Array,
              budget: Budget, record_every: int = 1, *,
              state: ChainState | None = None,
              rng: np.random.Generator | None = None,
              map_result: MapResult | None = None) -> tuple[Chain, ChainState]:
    """Run the configured dynamics until the budget is exhausted.

    Passing the `(state, rng)` pair returned by a previous call continues the
    same trajectory: a 50-iteration run resumed for 50 more is elementwise
    identical to a single 100-iteration run.  The budget is the increment for
    this call.  Wall-clock budgets are checked once per iteration against a
    monotonic clock and the final partial iteration completes; a chain whose
    state becomes non-finite (or exceeds norm 1e10) halts immediately and is
    returned with `diverged=True` and the samples recorded so far.
    """
    if record_every < 1:
        raise InvalidArgument("record_every must be positive")
    init = np.asarray(init, dtype=float)
    if init.shape != (model.dim,):
        raise InvalidArgument(f"init shape {init.shape} does not match "
                              f"model dim {model.dim}")
    if not np.all(np.isfinite(init)):
        raise InvalidArgument("init must be finite")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if state is None:
        state = ChainState(theta=init,
                           momentum=np.zeros(model.dim),
                           thermostat=config.a if config.kind == "sgnht" else None,
                           iteration=0, elapsed_sec=0.0)

    estimate = _make_estimator(model, config, map_result, rng)
    h = config.step_size
    rec_iters: list[int] = []
    rec_times: list[float] = []
    rec_thetas: list[Array] = []
    rec_grads: list[Array] = []
    diverged = False

    start = time.monotonic()
    time_offset = state.elapsed_sec
    iters_done = 0
    iter_target = int(budget.amount) if budget.mode == "iterations" else None

    def record(iteration: int, theta: Array, grad: Array) -> None:
        rec_iters.append(iteration)
        rec_times.append(time_offset + (time.monotonic() - start))
        rec_thetas.append(theta)
        rec_grads.append(grad)

    while True:
        if iter_target is not None:
            if iters_done >= iter_target:
                break
        elif time.monotonic() - start >= budget.amount:
            break

        recorded_after = False
        if config.kind in ("sgld", "sgnht"):
            # record the pre-step state with the gradient evaluated there
            g = estimate(state.theta)
            if state.iteration % record_every == 0:
                record(state.iteration, state.theta, g)
            if config.kind == "sgld":
                state = sgld_step(state, g, h, rng)
            else:
                state = sgnht_step(state, g, h, config.a, rng)
        else:  # sghmc records the trajectory end, where its last gradient sits
            v0 = None if config.resample_momentum else state.momentum
            state, theta_end, g_end = sghmc_trajectory(
                state, estimate, h, config.leapfrog,
                config.alpha, config.beta_hat, rng, v0=v0)
            if state.iteration % record_every == 0:
                record(state.iteration, theta_end, g_end)
                recorded_after = True

        iters_done += 1
        if not _state_ok(state.theta):
            diverged = True
            if recorded_after:  # drop the non-finite record
                rec_iters.pop()
                rec_times.pop()
                rec_thetas.pop()
                rec_grads.pop()
            break

    state = replace(state,
                    elapsed_sec=state.elapsed_sec + (time.monotonic() - start))
    if rec_thetas:
        chain = Chain(np.asarray(rec_iters, dtype=np.int64),
                      np.asarray(rec_times),
                      np.vstack(rec_thetas), np.vstack(rec_grads),
                      diverged=diverged, total_iterations=state.iteration)
    else:
        chain = replace(empty_chain(model.dim), diverged=diverged,
                        total_iterations=state.iteration)
    return chain, state


def thin_chain(chain: Chain, thin: int = 1, burn_in_fraction: float = 0.0) -> Chain:
    """Drop the leading burn-in fraction, then keep every `thin`-th sample.

    The final sample is always kept.  Ordering and metadata are preserved.
    """
    if len(chain) == 0:
        raise InvalidArgument("cannot thin an empty chain")
    if thin < 1:
        raise InvalidArgument("thin must be positive")
    if not 0.0 <= burn_in_fraction < 1.0:
        raise InvalidArgument("burn_in_fraction must lie in [0, 1)")
    n = len(chain)
    start = int(burn_in_fraction * n)
    idx = list(range(start, n, thin))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    sel = np.asarray(idx)
    return Chain(chain.iterations[sel], chain.wall_times[sel],
                 chain.thetas[sel], chain.grads[sel],
                 diverged=chain.diverged,
                 total_iterations=chain.total_iterations)


CHAIN_CSV_FLOAT = repr  # shortest round-tripping decimal form


def chain_csv_header(dim: int) -> list[str]:
    return (["iteration", "wall_time_sec"]
            + [f"theta_{i}" for i in range(dim)]
            + [f"grad_{i}" for i in range(dim)])


def dump_chain(chain: Chain, path) -> None:
    """Write one row per recorded sample; floats round-trip exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(chain_csv_header(chain.dim))
        for i in range(len(chain)):
            row = [str(int(chain.iterations[i])),
                   CHAIN_CSV_FLOAT(float(chain.wall_times[i]))]
            row += [CHAIN_CSV_FLOAT(float(v)) for v in chain.thetas[i]]
            row += [CHAIN_CSV_FLOAT(float(v)) for v in chain.grads[i]]
            writer.writerow(row)


def load_chain(path) -> Chain:
    """Inverse of `dump_chain` (divergence flags are not serialized)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["iteration", "wall_time_sec"]:
            raise InvalidArgument(f"{path}: not a chain CSV")
        dim = sum(1 for name in header if name.startswith("theta_"))
        if dim == 0 or len(header) != 2 + 2 * dim:
            raise InvalidArgument(f"{path}: malformed chain header")
        rows = [row for row in reader if row]
    if not rows:
        raise InvalidArgument(f"{path}: no samples")
    iters = np.asarray([int(r[0]) for r in rows], dtype=np.int64)
    times = np.asarray([float(r[1]) for r in rows])
    thetas = np.asarray([[float(v) for v in r[2:2 + dim]] for r in rows])
    grads = np.asarray([[float(v) for v in r[2 + dim:]] for r in rows])
    return Chain(iters, times, thetas, grads, diverged=False,
                 total_iterations=int(iters[-1]) + 1)
