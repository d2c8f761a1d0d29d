"""Precision matrix estimation with ordered weighted l1 (OWL) penalties.

Two estimators are provided: :func:`estimate_gowl` penalizes the whole
off-diagonal of the precision matrix inside the Gaussian likelihood, and
:func:`estimate_ccgowl` solves one OWL-penalized regression per column.
"""
__version__ = "0.1.0"

from .ccgowl import assemble_precision, estimate_ccgowl, grouping_certificate, owl_regression
from .evaluation import (
    CvResult,
    EvalReport,
    cross_validate,
    default_grid,
    error_metrics,
    evaluate,
    fit_gmm_1d,
    gmm_cluster_entries,
    weighted_f1,
)
from .gowl import (
    duality_gap,
    estimate_gowl,
    gowl_objective,
    matrix_prox,
    nll_gradient,
    primal_dual_gap,
    unvechs,
    vechs,
)
from .owl import OscarParams, oscar_weights, owl_norm, pav_nonincreasing, prox_owl
from .structures import ColumnEstimate, PrecisionEstimate, SolverConfig, SolverError
from .synth import (
    GroundTruth,
    SynthConfig,
    add_noise,
    generate_grouped_precision,
    make_instance,
    sample_covariance,
    sample_gaussian,
    standardize,
)
