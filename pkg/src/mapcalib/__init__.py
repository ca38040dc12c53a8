"""mapcalib: calibrated estimation from error-prone map predictions.

Combines a large set of model predictions (the "map") with a small
probability sample of ground truth to produce bias-corrected point
estimates and honest confidence intervals for GLM regression coefficients,
means, and class areas, plus a simulation harness that measures how map
noise and bias distort naive estimators.
"""

from .data import (
    ColumnRole,
    Dataset,
    RngSeed,
    binarize_threshold,
    load_dataset,
    save_dataset,
    simple_random_subsample,
)
from .errors import (
    ConfigError,
    DegenerateResamples,
    DimensionMismatch,
    DuplicateCalibrationIndex,
    EmptyMapStratum,
    MapcalibError,
    MissingColumn,
    NegativeValues,
    NoCalibrationRows,
    NoConvergence,
    NonNumericCell,
    NonPositiveWeight,
    NonPositiveWidth,
    NotBinary,
    RankDeficient,
    SampleTooLarge,
    ScenarioError,
    SchemaError,
    Separation,
    SingularMatrix,
    TooFewPoints,
    TooFewPointsInStratum,
    ZeroVariance,
)
from .glm import (
    LINEAR,
    LOGISTIC,
    GlmFit,
    ModelFamily,
    fit_glm,
    fit_linear,
    fit_logistic,
    get_family,
)
from .means import (
    ConfusionCounts,
    EquivalenceReport,
    LambdaTuning,
    MeanEstimate,
    StratumSpec,
    gt_only_mean,
    map_only_mean,
    plugin_lambda,
    post_stratified_area,
    ppi_mean,
    ppi_mean_tuned,
    ppi_post_stratified_equivalence,
    regression_mean,
    stratified_mean,
    weighted_ppi_mean,
    z_value,
)
from .ppi import (
    BootstrapConfig,
    ClassicalEstimate,
    PpiComponents,
    PpiEstimate,
    SandwichMatrices,
    TuningMatrix,
    analytic_covariance,
    classical_estimate,
    effective_sample_size,
    fit_components,
    fit_components_arrays,
    optimal_omega,
    ppi_analytic,
    ppi_analytic_arrays,
    ppi_bootstrap,
    ppi_bootstrap_arrays,
    ppi_point,
    resolve_omega,
    sandwich_matrices,
    sandwich_matrices_arrays,
)
from .simulate import (
    BernoulliErrorSpec,
    BiasCurve,
    NoiseSpec,
    ScenarioSpec,
    SweepRow,
    fit_sqrt_bias_curve,
    inject_bernoulli_error,
    inject_bias,
    inject_gaussian_noise,
    level_grid,
    run_scenario,
    summarize_sweep,
    write_sweep,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
