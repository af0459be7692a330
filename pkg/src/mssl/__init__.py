"""Mixed semi-supervised regression toolkit.

Estimators that blend a supervised fit with a pool-informed semi-supervised
one (for least squares, general monotone links, and over-parameterized
interpolators), closed-form and data-driven selection of the mixing ratio,
asymptotic limits, and a reproducible Monte Carlo experiment harness.
"""

from .asymptotics import (
    AsymptoticSetting,
    LimitReport,
    eta_from_ols_terms,
    finite_m_limits,
    interp_limits,
    ols_limits,
)
from .core import (
    LabeledSet,
    PopulationMoments,
    ResampleSpec,
    UnlabeledPool,
    build_moments,
    center_pool,
    resample_block,
    resample_blocks,
    seeded_rng,
)
from .errors import (
    DataValidationError,
    LinkValidationError,
    MsslError,
    RegimeError,
    ResampleBudgetError,
    SingularMatrixError,
)
from .glm import (
    GlmFitReport,
    GlmPoolStats,
    GlmProblem,
    GlmQuadratic,
    alpha_M_dispersion,
    alpha_dot_glm,
    estimate_noise_glm,
    fit_glm_loss_mixed,
    fit_glm_semisupervised,
    fit_glm_supervised,
    glm_risk_terms,
    grid_search_alpha_ddot_glm,
    r_dot_glm_curve,
    v_M_terms,
)
from .interp import (
    InterpRiskTerms,
    NoiseSignalInterp,
    RffMap,
    alpha_star_interp,
    fit_min_norm,
    fit_min_variance,
    gaussian_sampler,
    interp_eta,
    interp_risk_terms,
    interp_terms_spiked_closed_form,
    iterate_sigma_tau,
    make_rff_map,
    pool_sampler,
    rff_features,
    rff_scaler,
    sigma2_known_tau,
)
from .io import (
    read_labeled_csv,
    read_pool_binary,
    read_pool_csv,
    write_pool_binary,
)
from .links import (
    LinkReport,
    LinkSpec,
    custom_link,
    elu_link,
    identity_link,
    link_by_name,
    link_eval,
    validate_link,
)
from .ols import (
    DdotRiskModel,
    MixDiagnostics,
    NoiseSignalOls,
    OlsPoolModel,
    OlsRiskTerms,
    RiskCurve,
    alpha_star_finite_m,
    alpha_star_ols,
    fit_finite_m_semisupervised,
    fit_loss_mixed_ols,
    fit_ols_semisupervised,
    fit_ols_supervised,
    grid_search_alpha_ddot,
    mix_linear,
    noise_signal_ols,
    ols_risk_terms,
    r_dot_curve,
)
from .simulate import (
    BetaMode,
    CovarianceSpec,
    ExperimentConfig,
    ExperimentResult,
    PairRow,
    PairSummary,
    ResultRow,
    constant_beta,
    draw_dataset,
    gen_sigma,
    load_config,
    preset_names,
    random_beta,
    run_experiment,
    summarize_pairwise,
    write_result_csv,
)

__version__ = "0.1.0"
