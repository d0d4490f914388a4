"""Blind separation of crosstalk-contaminated image pairs with untrained priors."""

__version__ = "0.1.0"

from .analysis import depth_of_field, power_spectrum, std_map, streak_energy
from .config import SeparationConfig, config_from_file, config_from_text
from .errors import (
    ConfigurationError,
    NonFiniteGradientError,
    RawFormatError,
    TrainingDivergedError,
    UsageError,
)
from .imaging import ImagePlane, destandardize, load_raw, save_raw, standardize
from .model import FilterMode, alpha_from_dip3, synthesize, total_loss
from .networks import DipNetwork, build_deep_dip, build_shallow_dip
from .phantom import PhantomBundle, PhantomSpec, generate, score
from .tensor import Tensor
from .training import (
    Adam,
    RunReport,
    UncertaintyReport,
    persist_run,
    persist_uncertainty,
    regenerate,
    run_separation,
    run_uncertainty,
)

__all__ = [
    "Adam",
    "ConfigurationError",
    "DipNetwork",
    "FilterMode",
    "ImagePlane",
    "NonFiniteGradientError",
    "PhantomBundle",
    "PhantomSpec",
    "RawFormatError",
    "RunReport",
    "SeparationConfig",
    "Tensor",
    "TrainingDivergedError",
    "UncertaintyReport",
    "UsageError",
    "__version__",
    "alpha_from_dip3",
    "build_deep_dip",
    "build_shallow_dip",
    "config_from_file",
    "config_from_text",
    "depth_of_field",
    "destandardize",
    "generate",
    "load_raw",
    "persist_run",
    "persist_uncertainty",
    "power_spectrum",
    "regenerate",
    "run_separation",
    "run_uncertainty",
    "save_raw",
    "score",
    "standardize",
    "std_map",
    "streak_energy",
    "synthesize",
    "total_loss",
]
