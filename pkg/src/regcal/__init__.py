"""Recalibration and evaluation of predictive uncertainty for regression.

Consumes Monte-Carlo prediction dumps (ground truth plus N stochastic
forward-pass outputs per sample), fits sigma scaling or a small auxiliary
network to recalibrate the predicted uncertainty, and evaluates calibration
through the uncertainty calibration error, negative log-likelihood,
prediction-interval coverage, rejection curves, and out-of-distribution
comparisons. A self-contained MC-dropout toy regressor reproduces the
underestimation phenomenon on synthetic data.
"""

from .analysis import OodComparison, RejectionCurve, UncertaintyHistogram, ood_compare, rejection_curve
from .calibrate import (
    AuxConfig,
    CalibrationError,
    SigmaFitOptions,
    apply_calibration,
    aux_fit,
    fit_sigma,
    sigma_closed_form_gaussian,
    sigma_closed_form_laplace,
    sigma_fit_gd,
)
from .core import (
    BinStats,
    CalibrationArtifact,
    McPredictionSet,
    McRecord,
    McSample,
    UncertaintyRecord,
    identity_artifact,
    validate,
)
from .intervals import CoverageTable, coverage, probit
from .io import DumpFormatError, load_artifact, load_dump, save_artifact, save_dump
from .likelihood import batch_nll, gaussian_nll, laplace_nll
from .metrics import UceReport, calibration_diagram, mse, predictive_variance, uce, uncertainty_records
from .toymodel import (
    SyntheticSpec,
    ToyModel,
    ToyModelConfig,
    TrainingTrace,
    generate,
    intra_training_calibrate,
    mc_predict,
    simulate_unbiasedness,
    toy_experiment_config,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AuxConfig",
    "BinStats",
    "CalibrationArtifact",
    "CalibrationError",
    "CoverageTable",
    "DumpFormatError",
    "McPredictionSet",
    "McRecord",
    "McSample",
    "OodComparison",
    "RejectionCurve",
    "SigmaFitOptions",
    "SyntheticSpec",
    "ToyModel",
    "ToyModelConfig",
    "TrainingTrace",
    "UceReport",
    "UncertaintyHistogram",
    "UncertaintyRecord",
    "apply_calibration",
    "aux_fit",
    "batch_nll",
    "calibration_diagram",
    "coverage",
    "fit_sigma",
    "gaussian_nll",
    "generate",
    "identity_artifact",
    "intra_training_calibrate",
    "laplace_nll",
    "load_artifact",
    "load_dump",
    "mc_predict",
    "mse",
    "ood_compare",
    "predictive_variance",
    "probit",
    "rejection_curve",
    "save_artifact",
    "save_dump",
    "sigma_closed_form_gaussian",
    "sigma_closed_form_laplace",
    "sigma_fit_gd",
    "simulate_unbiasedness",
    "toy_experiment_config",
    "train",
    "uce",
    "uncertainty_records",
    "validate",
]
