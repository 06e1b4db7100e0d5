"""Stochastic-gradient MCMC with bandit-based hyperparameter tuning.

Samplers (SGLD, SGHMC, SGNHT, each with optional control-variate gradients)
compete under a shared budget; a successive-halving bandit prunes the worst
configurations round by round, scoring each arm by the kernel Stein
discrepancy (or its linear-time finite-set variant) of its cumulative chain.
"""

from .bandit import (
    Arm,
    ArmSet,
    BanditDiagnostics,
    MambaResult,
    RoundRecord,
    arm_grid,
    diagnostics,
    grid_search_tune,
    heuristic_tune,
    mamba_run,
    mamba_schedule,
    prune,
    successive_halving,
    synthetic_reward_sampler,
    theorem_failure_bound,
)
from .errors import (
    AllArmsDiverged,
    ConfigError,
    InvalidArgument,
    NumericalFailure,
    SteinBanditError,
)
from .evaluation import (
    ComparisonCell,
    CurveBand,
    ReferenceMoments,
    RewardCurve,
    compare_tuners,
    reference_from_model,
    relative_std_error,
    reward_curve,
)
from .model import (
    AdamState,
    GradientEstimate,
    MapResult,
    TargetModel,
    adam_update,
    build_gaussian_conjugate_model,
    build_logistic_model,
    find_map,
    grad_cv,
    grad_minibatch,
    init_adam,
    load_logistic_csv,
    logistic_predictive_logloss,
    make_logistic_data,
)
from .samplers import (
    Budget,
    Chain,
    ChainState,
    SamplerConfig,
    concat_chains,
    dump_chain,
    load_chain,
    run_chain,
    sghmc_trajectory,
    sgld_step,
    sgnht_step,
    thin_chain,
)
from .stein import (
    FssdConfig,
    KernelEval,
    KernelSpec,
    SteinConfig,
    SteinSampleSet,
    fssd,
    fssd_reward,
    fssd_witness,
    kernel_eval,
    ksd,
    ksd_reward,
    median_heuristic_bandwidth,
    optimize_test_locations,
    stein_kernel,
    stein_kernel_matrix,
    stein_kernel_pairs,
    stein_reward,
)

__version__ = "0.1.0"
