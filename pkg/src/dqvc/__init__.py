"""Directional quantile varying-coefficient models for bivariate functional responses."""

from .admm import AdmmOptions, AdmmResult, factorize, penalized_objective, solve_pqr, solve_pqr_many
from .envelope import Envelope, build_envelope, contains, coverage, curvature, directional_quantiles
from .estimator import DirectionalQuantileRegressor, PenalizedQuantileRegressor
from .exceptions import (
    ConfigError,
    DataValidationError,
    DomainError,
    DqvcError,
    InvalidInputError,
    NumericalError,
    UndefinedMetricError,
)
from .ps import (
    CoefficientField,
    PsOptions,
    chi2_upper_quantile,
    estimate_variances,
    ps_weights,
    run_multistage,
    select_lambda,
    stage1_fit,
    stage2_update,
    stage3_check,
)
from .quantile import (
    DirectionGrid,
    FunctionalDataset,
    check_loss,
    check_prox,
    design_matrix,
    project_responses,
    read_dataset_csv,
    soft_threshold,
    write_dataset_csv,
)
from .simulation import SimConfig, analytic_coverage, gen_dataset, oracle_quantiles, run_replications
from .splines import SplineBasis, build_basis, eval_basis, penalty_matrix

__version__ = "0.1.0"
