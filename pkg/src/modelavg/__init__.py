"""Model averaging laboratory.

Criterion-based and optimal model averaging estimators for linear
regression, a cross-validation stacking meta-estimator, a sequential
g-formula for longitudinal counterfactual means, and a reproducible
Monte Carlo harness for three simulation studies.
"""

__version__ = "0.1.0"

from .classic import (
    AveragedFit,
    average_coefficients,
    bayes_variance,
    bma_fit,
    buckland_se,
    criterion_weights,
    fma_fit,
    ms_fit,
    normal_interval,
    ols_fit,
)
from .gformula import (
    ALWAYS,
    THRESHOLD,
    GFormulaResult,
    TreatmentRule,
    apply_rule,
    sequential_gformula,
    truth_oracle,
)
from .kernel import (
    ConvergenceError,
    LsqFit,
    norm_quantile,
    project_to_simplex,
    solve_least_squares,
    solve_nnls,
    solve_simplex_qp,
)
from .models import (
    Dataset,
    FittedModel,
    ModelSpec,
    enumerate_all_subsets,
    enumerate_nested,
    fit_candidates,
    read_dataset,
    stepwise_aic,
)
from .optimal import (
    LassoPath,
    default_lambda_sequence,
    jma_fit,
    lae_fit,
    lasso_fit,
    lasso_path,
    mma_fit,
)
from .rng import kfold_split, make_rng
from .simdata import (
    LongitudinalPanel,
    MarginalSpec,
    clayton_sample,
    gen_forecast_study,
    gen_linear_study,
    simulate_longitudinal,
    transform_marginals,
    truncated_normal,
)
from .superlearner import (
    CAUSAL_LEARNERS,
    CAUSAL_PLUS_LEARNERS,
    SL_LEARNERS,
    SL_PLUS_LEARNERS,
    LearnerSpec,
    SuperLearnerFit,
    cv_level_one,
    expand_features,
    fit_super_learner,
    meta_weights,
    sl_predict,
)
