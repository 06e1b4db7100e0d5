"""Target posteriors as differentiable potentials with per-datum decomposition.

A target is represented by the potential U(theta) = sum_i U_i(theta), where
U_i = -log f(y_i | theta) - (1/N) log p(theta), so the prior is spread evenly
across data terms and the full-batch and minibatch gradient paths share one
code path.  Gradients are hand-coded per model; there is no autodiff.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import InvalidArgument, NumericalFailure

Array = np.ndarray


@dataclass(frozen=True)
class TargetModel:
    """A differentiable unnormalized log-posterior, decomposed per datum.

    ``grad_potential_datum(theta, i)`` returns grad U_i(theta) for one data
    index; ``grad_potential_sum(theta, indices)`` returns the sum of those
    gradients over an index array (vectorized, same values).  ``potential``
    is the full U(theta).  ``exact_posterior_moments`` is only present for
    analytic models and holds (mean, std) vectors.

    Immutable after construction; safe to share across concurrent chains.
    """

    dim: int
    num_data: int
    grad_potential_datum: Callable[[Array, int], Array]
    grad_potential_sum: Callable[[Array, Array], Array]
    potential: Callable[[Array], float]
    exact_posterior_moments: tuple[Array, Array] | None = None
    name: str = "model"

    def grad_full(self, theta: Array) -> Array:
        """Full-data gradient of the potential, grad U(theta)."""
        return self.grad_potential_sum(np.asarray(theta, dtype=float),
                                       np.arange(self.num_data))


@dataclass(frozen=True)
class GradientEstimate:
    """A (possibly subsampled) estimate of grad U(theta)."""

    value: Array
    indices: Array
    is_full: bool


@dataclass(frozen=True)
class MapResult:
    """Result of a mode search: the point, its full gradient, and the norm."""

    theta_map: Array
    full_grad_at_map: Array
    grad_norm: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class AdamState:
    """State of the Adam recursion (also carries its hyperparameters)."""

    step_count: int
    first_moment: Array
    second_moment: Array
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam(dim: int, learning_rate: float = 1e-2, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    """Fresh Adam state with zero moments."""
    if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
        raise InvalidArgument("Adam betas must lie in [0, 1)")
    return AdamState(0, np.zeros(dim), np.zeros(dim),
                     learning_rate, beta1, beta2, epsilon)


def adam_update(state: AdamState, grad: Array) -> tuple[AdamState, Array]:
    """One bias-corrected Adam step; returns (new state, additive step)."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.first_moment.shape:
        raise InvalidArgument(
            f"gradient shape {grad.shape} does not match moment shape "
            f"{state.first_moment.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad ** 2
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    step = -state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, step_count=t, first_moment=m, second_moment=v), step


def build_gaussian_conjugate_model(N: int, d: int, obs_noise: float = 1.0,
                                   prior_var: float = 1.0,
                                   data_seed: int = 0) -> TargetModel:
    """Gaussian mean model with a conjugate Gaussian prior.

    y_i ~ Normal(theta_true, obs_noise^2 I) with theta_true drawn once from
    the seed, prior theta ~ Normal(0, prior_var I).  The posterior is Gaussian
    with closed-form moments, which are stored on the model and serve as the
    ground truth for every downstream quality metric.
    """
    if N < 1 or d < 1:
        raise InvalidArgument("N and d must be positive")
    if obs_noise <= 0 or prior_var <= 0:
        raise InvalidArgument("obs_noise and prior_var must be positive")

    rng = np.random.default_rng(data_seed)
    theta_true = rng.standard_normal(d)
    ys = theta_true + obs_noise * rng.standard_normal((N, d))

    noise_var = obs_noise ** 2
    y_sum = ys.sum(axis=0)
    precision = N / noise_var + 1.0 / prior_var
    post_var = 1.0 / precision
    post_mean = post_var * y_sum / noise_var
    post_std = np.full(d, np.sqrt(post_var))

    # U_i = ||y_i - theta||^2 / (2 s^2) + ||theta||^2 / (2 N pv) + const
    def grad_datum(theta: Array, i: int) -> Array:
        return (theta - ys[i]) / noise_var + theta / (N * prior_var)

    def grad_sum(theta: Array, indices: Array) -> Array:
        indices = np.asarray(indices)
        k = indices.size
        return (k * theta - ys[indices].sum(axis=0)) / noise_var \
            + k * theta / (N * prior_var)

    def potential(theta: Array) -> float:
        theta = np.asarray(theta, dtype=float)
        lik = float(((ys - theta) ** 2).sum()) / (2.0 * noise_var)
        return lik + float(theta @ theta) / (2.0 * prior_var)

    return TargetModel(dim=d, num_data=N,
                       grad_potential_datum=grad_datum,
                       grad_potential_sum=grad_sum,
                       potential=potential,
                       exact_posterior_moments=(post_mean, post_std),
                       name="gaussian_conjugate")


def build_logistic_model(X: Array, y: Array, prior_var: float = 10.0) -> TargetModel:
    """Bayesian logistic regression with a zero-mean Gaussian prior.

    grad U_i(theta) = (sigmoid(theta^T x_i) - y_i) x_i + theta / (prior_var N).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise InvalidArgument("X must be a 2-d matrix")
    N, d = X.shape
    if y.shape != (N,):
        raise InvalidArgument(f"y must have shape ({N},), got {y.shape}")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise InvalidArgument("labels must be 0 or 1")
    if not np.all(np.isfinite(X)):
        raise InvalidArgument("X must be finite")
    if prior_var <= 0:
        raise InvalidArgument("prior_var must be positive")

    def grad_datum(theta: Array, i: int) -> Array:
        z = float(X[i] @ theta)
        return (_sigmoid(z) - y[i]) * X[i] + theta / (prior_var * N)

    def grad_sum(theta: Array, indices: Array) -> Array:
        indices = np.asarray(indices)
        Xb = X[indices]
        z = Xb @ theta
        resid = _sigmoid(z) - y[indices]
        return Xb.T @ resid + indices.size * theta / (prior_var * N)

    def potential(theta: Array) -> float:
        theta = np.asarray(theta, dtype=float)
        z = X @ theta
        # -log f = softplus(z) - y z, stable for large |z|
        softplus = np.logaddexp(0.0, z)
        lik = float((softplus - y * z).sum())
        return lik + float(theta @ theta) / (2.0 * prior_var)

    return TargetModel(dim=d, num_data=N,
                       grad_potential_datum=grad_datum,
                       grad_potential_sum=grad_sum,
                       potential=potential,
                       name="logistic")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def make_logistic_data(N: int, d: int, seed: int = 0,
                       theta_true: Array | None = None) -> tuple[Array, Array]:
    """Synthetic covariates and binary labels for a logistic benchmark."""
    if N < 1 or d < 1:
        raise InvalidArgument("N and d must be positive")
    rng = np.random.default_rng(seed)
    if theta_true is None:
        theta_true = rng.standard_normal(d)
    X = rng.standard_normal((N, d))
    p = _sigmoid(X @ theta_true)
    y = (rng.random(N) < p).astype(float)
    return X, y


def load_logistic_csv(path) -> tuple[Array, Array]:
    """Read `y,x_0,...,x_{d-1}` rows (one-line header) into (X, y)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not header or header[0] != "y":
            raise InvalidArgument(f"{path}: expected header starting with 'y'")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise InvalidArgument(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    return data[:, 1:], data[:, 0]


def logistic_predictive_logloss(thetas: Array, X: Array, y: Array) -> float:
    """Mean negative log-likelihood of the posterior-averaged probabilities."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    p = _sigmoid(X @ thetas.T).mean(axis=1)
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def grad_minibatch(model: TargetModel, theta: Array, n: int,
                   rng: np.random.Generator) -> GradientEstimate:
    """Unbiased subsampled gradient (N/n) sum_{i in S_n} grad U_i(theta).

    S_n is drawn uniformly without replacement.  When n == N no randomness
    is consumed and the exact full gradient is returned.
    """
    N = model.num_data
    if not 1 <= n <= N:
        raise InvalidArgument(f"batch size {n} outside [1, {N}]")
    theta = np.asarray(theta, dtype=float)
    if n == N:
        indices = np.arange(N)
        return GradientEstimate(model.grad_potential_sum(theta, indices),
                                indices, True)
    indices = rng.permutation(N)[:n]
    value = (N / n) * model.grad_potential_sum(theta, indices)
    return GradientEstimate(value, indices, False)


def grad_cv(model: TargetModel, theta: Array, map_result: MapResult, n: int,
            rng: np.random.Generator) -> GradientEstimate:
    """Control-variate gradient anchored at the mode.

    value = grad U(theta_map) + (N/n) sum_{i in S_n} [grad U_i(theta)
    - grad U_i(theta_map)], with one index set shared by both terms.  At
    theta == theta_map the correction cancels exactly; at n == N the exact
    full gradient is returned.
    """
    N = model.num_data
    if not 1 <= n <= N:
        raise InvalidArgument(f"batch size {n} outside [1, {N}]")
    theta = np.asarray(theta, dtype=float)
    if n == N:
        indices = np.arange(N)
        return GradientEstimate(model.grad_potential_sum(theta, indices),
                                indices, True)
    indices = rng.permutation(N)[:n]
    correction = model.grad_potential_sum(theta, indices) \
        - model.grad_potential_sum(map_result.theta_map, indices)
    value = map_result.full_grad_at_map + (N / n) * correction
    return GradientEstimate(value, indices, False)


def find_map(model: TargetModel, init: Array, adam: AdamState | None = None,
             max_iters: int = 10_000, tol: float = 1e-6) -> MapResult:
    """Full-batch Adam descent on U; returns the best iterate seen.

    The reported gradient norm is honest: convergence is only claimed when
    it actually fell below `tol` within the iteration budget.
    """
    if max_iters < 1:
        raise InvalidArgument("max_iters must be at least 1")
    theta = np.asarray(init, dtype=float).copy()
    if adam is None:
        adam = init_adam(model.dim)
    best_theta, best_grad, best_norm = theta, None, np.inf
    iters = 0
    for k in range(max_iters):
        grad = model.grad_full(theta)
        if not np.all(np.isfinite(grad)):
            raise NumericalFailure(f"non-finite gradient at iteration {k}")
        norm = float(np.linalg.norm(grad))
        if norm < best_norm:
            best_theta, best_grad, best_norm = theta.copy(), grad, norm
        iters = k + 1
        if norm <= tol:
            break
        adam, step = adam_update(adam, grad)
        theta = theta + step
    return MapResult(theta_map=best_theta, full_grad_at_map=best_grad,
                     grad_norm=best_norm, converged=best_norm <= tol,
                     iterations=iters)
