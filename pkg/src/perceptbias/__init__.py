"""Within-driver estimates of how perceived race affects police search decisions.

The pipeline runs raw state files through :mod:`~perceptbias.ingest`,
:mod:`~perceptbias.linkage` and :mod:`~perceptbias.cohorts` and then fits the
fixed-effects estimators in :mod:`~perceptbias.fitting`.
:mod:`~perceptbias.simulate` generates panels with a known effect to check the
estimators against.
"""

__version__ = "0.1.0"

from .cohorts import (
    CohortStats,
    analysis_sample,
    build_cohorts,
    cohort_frames,
    descriptive_stats,
    filter_inconsistent,
    filter_multiply_stopped,
    filter_white_hispanic,
)
from .clogit import ConditionalLogit, conditional_loglik
from .design import ModelSpec, build_design
from .exceptions import (
    ConfigError,
    ConvergenceError,
    EmptySampleError,
    IdentificationError,
    InferenceError,
    PerceptBiasError,
    SchemaError,
    SeparationError,
    SpecificationError,
    VarianceWarning,
)
from .feglm import FixedEffectsLogit
from .fitting import FitResult, fit, fit_conditional_logit, fit_feglm_logit, fit_linear_fe
from .ingest import StateConfig, apply_validity_filters, load_stops
from .linear import LinearFixedEffects
from .absorb import FixedEffectAbsorber, demean
from .linkage import DriverKey, LinkageReport, link_drivers, remove_overmatched
from .records import DriverPanel, StopRecord, read_panels, write_panels
from .simulate import GroundTruth, SimConfig, generate_panel, ground_truth, simulate_frame

__all__ = [
    "CohortStats", "ConditionalLogit", "ConfigError", "ConvergenceError", "DriverKey",
    "DriverPanel", "EmptySampleError", "FitResult", "FixedEffectAbsorber", "FixedEffectsLogit",
    "GroundTruth", "IdentificationError", "InferenceError", "LinearFixedEffects", "LinkageReport",
    "ModelSpec", "PerceptBiasError", "SchemaError", "SeparationError", "SimConfig",
    "SpecificationError", "StateConfig", "VarianceWarning", "StopRecord", "analysis_sample", "apply_validity_filters",
    "build_cohorts", "build_design", "cohort_frames", "conditional_loglik", "demean",
    "descriptive_stats", "filter_inconsistent", "filter_multiply_stopped", "filter_white_hispanic",
    "fit", "fit_conditional_logit", "fit_feglm_logit", "fit_linear_fe", "generate_panel",
    "ground_truth", "link_drivers", "load_stops", "read_panels", "remove_overmatched",
    "simulate_frame", "write_panels",
]
