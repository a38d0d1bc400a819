"""Calibrated data augmentation samplers for rare-event and imbalanced-data models."""

from .binomial import HierBinomialData, HierBinomialModel, generate_hier_binomial_data
from .data import BinaryData, GlmDataset, generate_rare_event_data, glm_start
from .diagnostics import ChainSummary, acf, ess, fmi_estimate, summarize
from .dist import RngStream
from .errors import ChainError, InvariantViolation, NumericalError, ParameterError
from .experiments import ExperimentConfig, emit_adaptation_diagnostics, run_experiment
from .logistic import CollapsedLogisticModel, LogisticModel, SubsampledLogisticModel
from .mcmc import CalibrationParams, ChainState, SamplerConfig, Trace, cda_mh_step, run_chain
from .poisson import PoissonData, PoissonLogNormalModel, generate_poisson_data
from .polyagamma import sample_polya_gamma
from .probit import ProbitModel

__version__ = "0.1.0"

__all__ = [
    "BinaryData", "CalibrationParams", "ChainError", "ChainState", "ChainSummary", "CollapsedLogisticModel",
    "ExperimentConfig", "GlmDataset", "HierBinomialData", "HierBinomialModel", "InvariantViolation",
    "LogisticModel", "NumericalError", "ParameterError", "PoissonData", "PoissonLogNormalModel", "ProbitModel",
    "RngStream", "SamplerConfig", "SubsampledLogisticModel", "Trace", "acf", "cda_mh_step",
    "emit_adaptation_diagnostics", "ess", "fmi_estimate", "generate_hier_binomial_data", "generate_poisson_data",
    "generate_rare_event_data", "glm_start", "run_chain", "run_experiment", "sample_polya_gamma", "summarize",
]
