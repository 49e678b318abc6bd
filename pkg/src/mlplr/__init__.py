"""Likelihood-ratio analysis for one-hidden-layer MLP regression.

Constrained maximum-likelihood fitting, LR statistics, penalized width
selection, and a Monte Carlo simulator of the asymptotic LR law under
over-parameterization.
"""

from .estimation import FitConfig, FitResult, ProfileEntry, fit_mle, profile_lr_curve
from .harness import (
    ExperimentConfig,
    ReplicateMatrix,
    SummaryStats,
    expansion_decay,
    gradcheck,
    ks_distance,
    run_experiment,
    run_replicates,
    summarize,
)
from .likelihood import (
    FdCheckReport,
    Reparameterization,
    TaylorTerms,
    base_reparameterization,
    conditional_loglik,
    density_ratio,
    fd_check_derivatives,
    lr_statistic,
    reparameterize,
    residual_score,
    taylor_terms,
)
from .limit_law import (
    ConeOptSettings,
    ConeSpec,
    GramMatrix,
    H4Report,
    LimitSample,
    Partition,
    ScoreBasis,
    check_h4,
    delta_feasible,
    enumerate_partitions,
    eval_score_basis,
    gram_matrix,
    gram_matrix_gh,
    normalize_score,
    simulate_limit,
)
from .model import (
    ConstraintBox,
    Dataset,
    FeasibilityReport,
    HiddenUnit,
    MlpParams,
    ProjectionError,
    RegressionSpec,
    TransferFunction,
    check_constraints,
    generate_dataset,
    mlp_forward,
    mlp_forward_batch,
    project_to_box,
    transfer_eval,
)
from .selection import (
    PenaltySchedule,
    SelectionReport,
    penalty_value,
    select_architecture,
    validate_schedule,
)

__version__ = "0.1.0"
