"""Subjective divergence estimation for sampling-based inference programs."""
from .core import (AssessableInference, Dataset, DivergenceEstimate, InferenceProgram,
                   MetaInferenceProgram, ModelProgram, ReferenceProgram, as_inference, estimate,
                   estimate_subjective_divergence_assessable,
                   estimate_subjective_divergence_general, log_weight_estimate,
                   summarize_log_weights, trivial_meta)
from .errors import (AllWeightsZero, ConfigError, EmptyConditional, EnumerationTooLarge,
                     InconsistentHistory, InsufficientSamples, MixedTargets, SingularCovariance,
                     SubdivError, SupportMismatch, SupportViolation, TargetMismatch, ZeroEvidence)

__version__ = "0.1.0"

__all__ = [
    "AssessableInference", "Dataset", "DivergenceEstimate", "InferenceProgram",
    "MetaInferenceProgram", "ModelProgram", "ReferenceProgram", "as_inference", "estimate",
    "estimate_subjective_divergence_assessable", "estimate_subjective_divergence_general",
    "log_weight_estimate", "summarize_log_weights", "trivial_meta",
    "AllWeightsZero", "ConfigError", "EmptyConditional", "EnumerationTooLarge",
    "InconsistentHistory", "InsufficientSamples", "MixedTargets", "SingularCovariance",
    "SubdivError", "SupportMismatch", "SupportViolation", "TargetMismatch", "ZeroEvidence",
]
