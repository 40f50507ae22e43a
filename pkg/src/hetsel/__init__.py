"""Prioritized ranking and selection with FDR control for heteroscedastic units.

The package estimates the effect-size prior nonparametrically, scores each
unit by its conditional local FDR, selects units by trading observed effect
size against error budget, and ranks them by r-values. A simulation harness
and a small CLI tie the pieces together.
"""

__version__ = "0.1.0"

from .model import (
    MetricsRecord,
    Observation,
    TestingProblem,
    TruthLabels,
    etp,
    etp_star,
    fdp,
    normal_cdf,
    zvalue_pvalue,
)
from .deconv import (
    BandwidthPair,
    ConstantSigma,
    DiscreteSigma,
    FitConvergenceError,
    FittedPrior,
    JointModel,
    NormalComponent,
    PointMass,
    PriorGrid,
    TruePrior,
    UniformInterval,
    UniformSigma,
    build_grid,
    clfdr_by_group,
    clfdr_from_fit,
    fit_prior,
    fit_prior_by_group,
    fit_weights,
    kernel_marginal,
    kernel_marginals,
    oracle_clfdr,
    silverman_bandwidths,
    simplex_project,
)
from .selection import (
    Group,
    ScoredUnit,
    SelectionResult,
    ThresholdPair,
    TraceStep,
    build_units,
    calibrate_thresholds,
    classify_group,
    classify_groups,
    clfdr_stepup_threshold,
    oracle_thresholds,
    score,
    score_arrays,
    select_bh,
    select_clfdr_stepup,
    select_dd,
    select_oracle,
)
from .rvalue import (
    RValueEntry,
    RValueTable,
    dd_alpha_evaluator,
    dd_mu0_evaluator,
    default_alpha_grid,
    default_mu0_grid,
    rvalue_vary_alpha,
    rvalue_vary_mu0,
)
from .sim import (
    CorrelatedTwoGroup,
    MethodSummary,
    Replicate,
    ReplicationReport,
    SimDesign,
    TwoComponent,
    UniformIndep,
    generate,
    joint_model,
    run_replications,
)
