"""Time-varying, covariate-dependent correlation models for bivariate longitudinal data."""

__version__ = "0.1.0"

from .dataset import LongitudinalDataset, SubjectRecord, center_by_group, load_csv, quantile_transform, write_csv
from .inference import BandConfig, BandResult, bootstrap_scb, significant_intervals
from .likelihood import eta_of_rho, rho_float, rho_of_eta
from .model import (
    FitConfig, FittedModel, coefficient_curve, coefficient_curves, correlation_surface, default_grid, fit,
    load_model, save_model,
)
from .splines import basis_matrix, difference_penalty, eval_basis, make_spec

__all__ = [
    "BandConfig", "BandResult", "FitConfig", "FittedModel", "LongitudinalDataset", "SubjectRecord",
    "basis_matrix", "bootstrap_scb", "center_by_group", "coefficient_curve", "coefficient_curves",
    "correlation_surface", "default_grid",
    "difference_penalty", "eta_of_rho", "eval_basis", "fit", "load_csv", "load_model", "make_spec",
    "quantile_transform", "rho_float", "rho_of_eta", "save_model", "significant_intervals", "write_csv",
]
