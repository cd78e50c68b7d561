"""Contamination-robust Bayesian random-feature regression.

Core pieces: a random-feature ridge model with a conjugate Gaussian
predictive (`RandomFeatureRidge`), mixture-contamination envelopes around
that predictive, robust credible regions and variance bounds, and a
reproducible experiment harness for ratio sweeps.
"""

__version__ = "0.1.0"

from .rf import (
    ACTIVATIONS,
    Dataset,
    FeatureBank,
    FittedRF,
    ModelConfig,
    PredictiveGaussian,
    RandomFeatureRidge,
    feature_map,
    gaussian_pdf,
    posterior_predictive,
    predictive_arrays,
    ridge_fit,
    sample_sphere,
)
from .contamination import (
    ContaminatingDensity,
    ContaminationBudget,
    EnvelopePair,
    EventDensityBound,
    SpikeDensity,
    discrete_envelope_oracle,
    envelope_density,
    envelope_mass,
    lower_set_prob,
    predictive_envelopes,
    upper_set_prob,
)
from .robust import (
    IhdrResult,
    TruncationWindow,
    VarianceChain,
    WindowMassUnderflow,
    ihdr_outer,
    lower_variance_bound,
    normal_cdf,
    normal_quantile,
    truncated_normal_variance,
    truncation_mass,
    upper_variance_bound,
    variance_chain,
)
from .experiments import (
    EnvelopeRow,
    HuberCorruption,
    MisspecRow,
    PeakReport,
    SweepConfig,
    SweepRow,
    Teacher,
    TeacherConfig,
    bias_variance_sweep,
    contamination_envelope_curves,
    derived_rng,
    generate_teacher_data,
    huber_contaminate,
    misspecification_sweep,
    peak_report,
)

__all__ = [
    "__version__",
    # rf
    "ACTIVATIONS", "Dataset", "FeatureBank", "FittedRF", "ModelConfig",
    "PredictiveGaussian", "RandomFeatureRidge", "feature_map", "gaussian_pdf",
    "posterior_predictive", "predictive_arrays", "ridge_fit", "sample_sphere",
    # contamination
    "ContaminatingDensity", "ContaminationBudget", "EnvelopePair",
    "EventDensityBound", "SpikeDensity", "discrete_envelope_oracle",
    "envelope_density", "envelope_mass", "lower_set_prob",
    "predictive_envelopes", "upper_set_prob",
    # robust
    "IhdrResult", "TruncationWindow", "VarianceChain", "WindowMassUnderflow",
    "ihdr_outer", "lower_variance_bound", "normal_cdf", "normal_quantile",
    "truncated_normal_variance", "truncation_mass", "upper_variance_bound",
    "variance_chain",
    # experiments
    "EnvelopeRow", "HuberCorruption", "MisspecRow", "PeakReport", "SweepConfig",
    "SweepRow", "Teacher", "TeacherConfig", "bias_variance_sweep",
    "contamination_envelope_curves", "derived_rng", "generate_teacher_data",
    "huber_contaminate", "misspecification_sweep", "peak_report",
]
