"""Survey-weighted GLM Lasso with post-selection inference.

Fits l1-penalized survey-weighted GLMs (logit supplied) and performs
inference on coefficients and average marginal effects by selective
inference, the debiased Lasso and the C(alpha) score test, plus a
stratified-sampling Monte Carlo harness.
"""

from .ame import AmeTarget, ame_estimate, ame_infer, ame_jacobian, ame_target
from .calpha import (
    AuxiliaryEstimate,
    auxiliary_ame_solve,
    auxiliary_coordinate_pin,
    c_alpha_coordinate,
    c_alpha_stat,
)
from .debiased import (
    db_one_step,
    db_rho,
    db_wald,
    db_wald_coordinate,
    fit_unpenalized,
    survey_t,
    survey_t_coordinate,
)
from .glm import (
    LOGIT,
    CurvatureSet,
    Dataset,
    GlmFamily,
    ModelPartition,
    NumericError,
    curvature,
    partition,
    weighted_loglik,
)
from .lasso import (
    ConvergenceError,
    CvSpec,
    DataError,
    KktReport,
    LassoFit,
    cv_select_lambda,
    fit_penalized,
    kkt_certificate,
    lambda_max,
)
from .results import InferenceResult
from .selective import (
    PolyhedralSlice,
    RhoAugmentation,
    SelectionEvent,
    augment_for_rho,
    build_selection_event,
    decorrelated_score,
    one_step_selected,
    polyhedral_slice,
    si_ci_coordinate,
    si_ci_rho,
)
from .simulate import (
    Population,
    RejectionTable,
    SimulationConfig,
    StratificationScheme,
    draw_sample,
    generate_population,
    run_rejection_study,
    true_ame_oracle,
)
from .truncnorm import TruncatedNormal, TailDegenerateError, cdf, invert_mean

__version__ = "0.1.0"
