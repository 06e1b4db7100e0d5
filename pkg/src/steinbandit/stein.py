"""Stein discrepancies for scoring sample quality.

Implements base kernels (inverse multi-quadric and Gaussian) with analytic
first and mixed second derivatives, the Stein kernel

    k_pi(x, y) = gx.gy k(x,y) - gx.grad_y k - gy.grad_x k + trace grad_x grad_y k

with gx = grad U(x) (the negative score), the quadratic-cost KSD estimator,
and the linear-time finite-set discrepancy (FSSD) built from the Stein
witness function evaluated at a small set of test locations.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .model import AdamState, TargetModel, adam_update, init_adam
from .samplers import Chain, thin_chain

Array = np.ndarray

_KSD_CLAMP = -1e-10  # tolerated negative float noise in the V-statistic
_DEFAULT_BLOCK = 256


@dataclass(frozen=True)
class KernelSpec:
    """Base kernel choice.

    The IMQ kernel (c^2 + ||x-y||^2)^beta detects non-convergence exactly
    when c > 0 and beta in (-1, 0), so those bounds are enforced.  The
    Gaussian kernel requires a positive bandwidth and is the only family
    allowed for FSSD (which needs a real analytic kernel).
    """

    family: str = "imq"
    c: float = 1.0
    beta: float = -0.5
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in ("imq", "gaussian"):
            raise InvalidArgument(f"unknown kernel family {self.family!r}")
        if self.family == "imq":
            if self.c <= 0:
                raise InvalidArgument("IMQ requires c > 0")
            if not -1.0 < self.beta < 0.0:
                raise InvalidArgument(
                    "IMQ exponent beta must lie in (-1, 0), the regime that "
                    "detects non-convergence")
        elif self.bandwidth <= 0:
            raise InvalidArgument("Gaussian bandwidth must be positive")


@dataclass(frozen=True)
class KernelEval:
    """Kernel value and derivatives at one pair of points."""

    k: float
    grad_x: Array
    grad_y: Array
    trace_grad_xy: float


@dataclass(frozen=True)
class SteinSampleSet:
    """Points with grad U evaluated (or estimated) at each point."""

    points: Array
    grads: Array
    grad_mode: str = "fullbatch"

    def __post_init__(self):
        if self.points.shape != self.grads.shape:
            raise InvalidArgument("points and grads must have equal shapes")
        if self.points.ndim != 2:
            raise InvalidArgument("points must be a P x d matrix")
        if not (np.all(np.isfinite(self.points))
                and np.all(np.isfinite(self.grads))):
            raise InvalidArgument("sample set must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class FssdConfig:
    """Test locations and the optimization budget used to place them."""

    J: int = 10
    locations: Array | None = None
    opt_steps: int = 0
    opt_lr: float = 0.1

    def __post_init__(self):
        if self.J < 1:
            raise InvalidArgument("FSSD needs at least one test location")
        if self.locations is not None:
            if self.locations.shape[0] != self.J:
                raise InvalidArgument("locations row count must equal J")
            if not np.all(np.isfinite(self.locations)):
                raise InvalidArgument("locations must be finite")


@dataclass(frozen=True)
class SteinConfig:
    """How rewards are computed from a chain: kernel, estimator, thinning."""

    kernel: KernelSpec = field(default_factory=KernelSpec)
    grad_mode: str = "fullbatch"
    thin: int = 10
    burn_in: float = 0.1
    fssd: FssdConfig = field(default_factory=FssdConfig)
    bandwidth: float | None = None  # None -> median pairwise distance

    def __post_init__(self):
        if self.grad_mode not in ("fullbatch", "stochastic"):
            raise InvalidArgument(f"unknown grad mode {self.grad_mode!r}")


def _imq_terms(spec: KernelSpec, r2: Array, d: int):
    base = spec.c ** 2 + r2
    k = base ** spec.beta
    coeff = 2.0 * spec.beta * base ** (spec.beta - 1.0)
    trace = (-2.0 * spec.beta * d * base ** (spec.beta - 1.0)
             - 4.0 * spec.beta * (spec.beta - 1.0) * base ** (spec.beta - 2.0) * r2)
    return k, coeff, trace


def _gaussian_terms(spec: KernelSpec, r2: Array, d: int):
    s2 = spec.bandwidth ** 2
    k = np.exp(-0.5 * r2 / s2)
    coeff = -k / s2  # grad_x k = coeff * (x - y)
    trace = k * (d / s2 - r2 / s2 ** 2)
    return k, coeff, trace


def _kernel_terms(spec: KernelSpec, r2: Array, d: int):
    if spec.family == "imq":
        return _imq_terms(spec, r2, d)
    return _gaussian_terms(spec, r2, d)


def kernel_eval(spec: KernelSpec, x: Array, y: Array) -> KernelEval:
    """Kernel value, both gradients, and the mixed-derivative trace."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgument("x and y must be vectors of equal dimension")
    diff = x - y
    r2 = float(diff @ diff)
    k, coeff, trace = _kernel_terms(spec, np.asarray(r2), x.shape[0])
    grad_x = float(coeff) * diff
    return KernelEval(k=float(k), grad_x=grad_x, grad_y=-grad_x,
                      trace_grad_xy=float(trace))


def stein_kernel(spec: KernelSpec, x: Array, y: Array,
                 gx: Array, gy: Array) -> float:
    """Stein kernel k_pi at one pair, with gx = grad U(x), gy = grad U(y)."""
    gx = np.asarray(gx, dtype=float)
    gy = np.asarray(gy, dtype=float)
    ev = kernel_eval(spec, x, y)
    if gx.shape != ev.grad_x.shape or gy.shape != ev.grad_x.shape:
        raise InvalidArgument("gradient dimensions must match the points")
    return (float(gx @ gy) * ev.k - float(gx @ ev.grad_y)
            - float(gy @ ev.grad_x) + ev.trace_grad_xy)


def stein_kernel_pairs(spec: KernelSpec, X: Array, Y: Array,
                       GX: Array, GY: Array) -> Array:
    """Elementwise k_pi(x_i, y_i) for paired rows (no cross terms)."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    GX, GY = np.asarray(GX, float), np.asarray(GY, float)
    diff = X - Y
    r2 = np.einsum("ij,ij->i", diff, diff)
    d = X.shape[1]
    k, coeff, trace = _kernel_terms(spec, r2, d)
    dot_gg = np.einsum("ij,ij->i", GX, GY)
    gx_diff = np.einsum("ij,ij->i", GX, diff)
    gy_diff = np.einsum("ij,ij->i", GY, diff)
    # grad_y k = -coeff * diff, grad_x k = coeff * diff
    return dot_gg * k + coeff * gx_diff - coeff * gy_diff + trace


def _stein_block(spec: KernelSpec, X: Array, G: Array, rows: slice) -> Array:
    """Rows [rows] of the P x P Stein kernel matrix."""
    Xb, Gb = X[rows], G[rows]
    diff = Xb[:, None, :] - X[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    d = X.shape[1]
    k, coeff, trace = _kernel_terms(spec, r2, d)
    dot_gg = Gb @ G.T
    gx_diff = np.einsum("ik,ijk->ij", Gb, diff)
    gy_diff = np.einsum("jk,ijk->ij", G, diff)
    return dot_gg * k + coeff * gx_diff - coeff * gy_diff + trace


def stein_kernel_matrix(spec: KernelSpec, sample_set: SteinSampleSet,
                        block_size: int = _DEFAULT_BLOCK,
                        workers: int = 1) -> Array:
    """Full P x P matrix of k_pi over the sample set.

    Computed in row blocks; with `workers > 1` blocks are evaluated
    concurrently but always assembled in block order, so the result is
    identical to the sequential one.
    """
    X = sample_set.points
    G = sample_set.grads
    P = X.shape[0]
    blocks = [slice(lo, min(lo + block_size, P))
              for lo in range(0, P, block_size)]
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _stein_block(spec, X, G, b), blocks))
    else:
        parts = [_stein_block(spec, X, G, b) for b in blocks]
    return np.vstack(parts)


def ksd(sample_set: SteinSampleSet, spec: KernelSpec, *,
        estimator: str = "v", block_size: int = _DEFAULT_BLOCK,
        workers: int = 1) -> float:
    """Kernel Stein discrepancy of the empirical sample distribution.

    Default is the V-statistic sqrt(sum_ij k_pi(theta_i, theta_j) / P^2)
    with the diagonal included, which is nonnegative up to float noise;
    sums in (-1e-10, 0) are clamped to zero before the root.  The
    U-statistic (diagonal removed) is available for variance diagnostics.
    """
    P = len(sample_set)
    if P < 1:
        raise InvalidArgument("need at least one sample")
    if estimator not in ("v", "u"):
        raise InvalidArgument(f"unknown estimator {estimator!r}")
    if estimator == "u" and P < 2:
        raise InvalidArgument("U-statistic needs at least two samples")
    mat = stein_kernel_matrix(spec, sample_set, block_size=block_size,
                              workers=workers)
    if not np.all(np.isfinite(mat)):
        i, j = np.argwhere(~np.isfinite(mat))[0]
        raise NumericalFailure(f"non-finite Stein kernel at pair ({i}, {j})")
    if estimator == "v":
        mean = float(mat.sum()) / (P * P)
    else:
        mean = float(mat.sum() - np.trace(mat)) / (P * (P - 1))
    if mean < 0.0:
        if mean > _KSD_CLAMP:
            mean = 0.0
        elif estimator == "v":
            raise NumericalFailure(f"V-statistic mean {mean} is negative "
                                   "beyond float tolerance")
        else:
            mean = 0.0  # the U-statistic may be legitimately negative
    return float(np.sqrt(mean))


def median_heuristic_bandwidth(points: Array) -> float:
    """Median pairwise Euclidean distance (positive fallback 1.0)."""
    points = np.asarray(points, dtype=float)
    P = points.shape[0]
    if P < 2:
        return 1.0
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    med = float(np.median(dist[np.triu_indices(P, k=1)]))
    return med if med > 0 else 1.0


def resolve_gaussian_kernel(config: SteinConfig, points: Array) -> KernelSpec:
    """Gaussian kernel with the configured or median-heuristic bandwidth."""
    bw = config.bandwidth
    if bw is None:
        bw = median_heuristic_bandwidth(points)
    return KernelSpec(family="gaussian", bandwidth=bw)


def sample_set_from_chain(chain: Chain, model: TargetModel, thin: int,
                          burn_in: float, grad_mode: str) -> SteinSampleSet:
    """Thin a chain and pair each point with a gradient.

    `fullbatch` recomputes exact gradients at the thinned points;
    `stochastic` reuses the per-sample gradients stored while sampling.
    """
    if len(chain) == 0:
        raise InvalidArgument("chain has no recorded samples")
    thinned = thin_chain(chain, thin=thin, burn_in_fraction=burn_in)
    if grad_mode == "stochastic":
        grads = thinned.grads
    elif grad_mode == "fullbatch":
        grads = np.vstack([model.grad_full(theta) for theta in thinned.thetas])
    else:
        raise InvalidArgument(f"unknown grad mode {grad_mode!r}")
    return SteinSampleSet(points=thinned.thetas, grads=grads,
                          grad_mode=grad_mode)


def ksd_reward(chain: Chain, model: TargetModel, thin: int, burn_in: float,
               grad_mode: str, spec: KernelSpec, *, workers: int = 1) -> float:
    """KSD of a chain's thinned samples; +inf for a diverged chain.

    The bandit negates this, so the +inf sentinel becomes the -inf reward
    that ranks a diverged arm below every finite one.
    """
    if chain.diverged:
        return float("inf")
    sample_set = sample_set_from_chain(chain, model, thin, burn_in, grad_mode)
    return ksd(sample_set, spec, workers=workers)


def fssd_witness(sample_set: SteinSampleSet, spec: KernelSpec,
                 v: Array) -> Array:
    """Stein witness g(v): empirical mean of the Stein operator applied to k.

    g_i(v) = mean_p [ -grads[p, i] k(theta_p, v) + d k(theta_p, v)/d theta_p,i ].
    Requires the (real analytic) Gaussian kernel family.
    """
    if spec.family != "gaussian":
        raise InvalidArgument("FSSD requires the real analytic Gaussian kernel")
    v = np.asarray(v, dtype=float)
    return _witness_matrix(sample_set, spec, v[None, :])[0]


def _witness_matrix(sample_set: SteinSampleSet, spec: KernelSpec,
                    V: Array) -> Array:
    """(J x d) witness values at each location row of V."""
    X, G = sample_set.points, sample_set.grads
    s2 = spec.bandwidth ** 2
    diff = X[:, None, :] - V[None, :, :]              # P x J x d
    r2 = np.einsum("pjd,pjd->pj", diff, diff)
    k = np.exp(-0.5 * r2 / s2)                        # P x J
    score_term = -np.einsum("pd,pj->jd", G, k)
    grad_term = -np.einsum("pjd,pj->jd", diff, k) / s2
    return (score_term + grad_term) / X.shape[0]


def fssd(sample_set: SteinSampleSet, config: FssdConfig,
         spec: KernelSpec) -> float:
    """Root mean square of witness components over the test locations."""
    if config.locations is None:
        raise InvalidArgument("FSSD locations are not set; call "
                              "optimize_test_locations or provide them")
    if spec.family != "gaussian":
        raise InvalidArgument("FSSD requires the real analytic Gaussian kernel")
    W = _witness_matrix(sample_set, spec, config.locations)
    d = sample_set.points.shape[1]
    return float(np.sqrt((W ** 2).sum() / (d * config.J)))


def gaussian_fit_locations(sample_set: SteinSampleSet, J: int,
                           rng: np.random.Generator) -> Array:
    """Draw J locations from a diagonal Gaussian fit to the samples."""
    X = sample_set.points
    if X.shape[0] < 2:
        raise InvalidArgument("need at least two samples for a Gaussian fit")
    mean = X.mean(axis=0)
    var = X.var(axis=0, ddof=1) + 1e-6
    degenerate = var <= 1e-6
    if np.any(degenerate):
        warnings.warn("zero sample variance in some coordinates; "
                      "falling back to jitter 1e-3", RuntimeWarning)
        var = np.where(degenerate, 1e-3 ** 2, var)
    return mean + np.sqrt(var) * rng.standard_normal((J, X.shape[1]))


def optimize_test_locations(sample_set: SteinSampleSet, config: FssdConfig,
                            spec: KernelSpec,
                            rng: np.random.Generator) -> FssdConfig:
    """Place test locations: Gaussian-fit init, then ascent on FSSD^2.

    The ascent uses Adam with central-finite-difference gradients (step
    1e-5 (1 + |v|) per entry) and keeps the best iterate, so the returned
    locations never score below the initialization.
    """
    V = gaussian_fit_locations(sample_set, config.J, rng)
    out = replace(config, locations=V)
    if config.opt_steps == 0:
        return out

    def objective(locs: Array) -> float:
        W = _witness_matrix(sample_set, spec, locs)
        return float((W ** 2).sum())  # FSSD^2 up to the constant 1/(dJ)

    best_V, best_val = V, objective(V)
    adam: AdamState = init_adam(V.size, learning_rate=config.opt_lr)
    flat = V.ravel().copy()
    for _ in range(config.opt_steps):
        grad = np.empty_like(flat)
        for idx in range(flat.size):
            eps = 1e-5 * (1.0 + abs(flat[idx]))
            up, down = flat.copy(), flat.copy()
            up[idx] += eps
            down[idx] -= eps
            grad[idx] = (objective(up.reshape(V.shape))
                         - objective(down.reshape(V.shape))) / (2.0 * eps)
        # adam minimizes, so feed the negated gradient to ascend
        adam, step = adam_update(adam, -grad)
        flat = flat + step
        val = objective(flat.reshape(V.shape))
        if val > best_val:
            best_val, best_V = val, flat.reshape(V.shape).copy()
    return replace(config, locations=best_V)


def fssd_reward(chain: Chain, model: TargetModel, config: SteinConfig,
                rng: np.random.Generator) -> float:
    """FSSD of a chain's thinned samples; +inf for a diverged chain."""
    if chain.diverged:
        return float("inf")
    sample_set = sample_set_from_chain(chain, model, config.thin,
                                       config.burn_in, config.grad_mode)
    spec = resolve_gaussian_kernel(config, sample_set.points)
    if len(sample_set) < 2:
        raise InvalidArgument("FSSD needs at least two thinned samples")
    placed = optimize_test_locations(sample_set, config.fssd, spec, rng)
    return fssd(sample_set, placed, spec)


def stein_reward(chain: Chain, model: TargetModel, config: SteinConfig,
                 metric: str, rng: np.random.Generator | None = None, *,
                 workers: int = 1) -> float:
    """Dispatch to the configured discrepancy; lower is better."""
    if metric == "ksd":
        return ksd_reward(chain, model, config.thin, config.burn_in,
                          config.grad_mode, config.kernel, workers=workers)
    if metric == "fssd":
        if rng is None:
            rng = np.random.default_rng(0)
        return fssd_reward(chain, model, config, rng)
    raise InvalidArgument(f"unknown metric {metric!r}")
