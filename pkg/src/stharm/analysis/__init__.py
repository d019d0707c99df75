"""Estimators, statistical tests and bound pipelines built on simulated ensembles."""

from .cutoff import CutoffField, compute_cpR, cpr_expression_fd, curvature_sup, drift_estimate_check
from .firstfactor import (
    EllObserver,
    EllProcess,
    build_ell,
    f_supermartingale_check,
    first_factor,
    first_factor_rhs,
    integrability_estimate,
)
from .liouville import liouville_bound, small_image_tools, subsqrt_chain
from .martingale import (
    DifferentialObserver,
    estimate_representation,
    martingale_drift_test,
    transported_differential,
)
from .report import Assertion, ExperimentReport, mean_se
from .secondfactor import EnergyObserver, inv_damped_bound_check, second_factor_bounds

__all__ = [
    "Assertion",
    "CutoffField",
    "DifferentialObserver",
    "EllObserver",
    "EllProcess",
    "EnergyObserver",
    "ExperimentReport",
    "build_ell",
    "compute_cpR",
    "cpr_expression_fd",
    "curvature_sup",
    "drift_estimate_check",
    "estimate_representation",
    "f_supermartingale_check",
    "first_factor",
    "first_factor_rhs",
    "inv_damped_bound_check",
    "integrability_estimate",
    "liouville_bound",
    "martingale_drift_test",
    "mean_se",
    "second_factor_bounds",
    "small_image_tools",
    "subsqrt_chain",
    "transported_differential",
]
