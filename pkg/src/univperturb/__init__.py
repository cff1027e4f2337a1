"""Universal adversarial perturbations for small differentiable classifiers."""

from .errors import (AnalysisError, ConfigError, DomainError, InfeasibleError, NumericalError, ParseError,
                     ShapeError, UnivPerturbError, UnsupportedVersionError)
from .kernels import BACKEND
from .models import Model, SampleSet, TrainConfig, affine_model, init_mlp, load_model, save_model, train
from .universal import (Perturbation, UniversalConfig, compute_universal, fooling_rate, load_perturbation,
                        project_lp, save_perturbation)

__version__ = "0.1.0"

__all__ = [
    "AnalysisError", "ConfigError", "DomainError", "InfeasibleError", "NumericalError", "ParseError",
    "ShapeError", "UnivPerturbError", "UnsupportedVersionError", "BACKEND", "Model", "SampleSet",
    "TrainConfig", "affine_model", "init_mlp", "load_model", "save_model", "train", "Perturbation",
    "UniversalConfig", "compute_universal", "fooling_rate", "load_perturbation", "project_lp",
    "save_perturbation",
]
