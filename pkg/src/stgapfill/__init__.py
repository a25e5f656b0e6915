"""Gap filling for multi-band image time series.

A multi-scale restoration network built on masked spatial-temporal
attention, trained with a joint pixel / structural / perceptual objective,
plus the data synthesis, metrics, and verification tooling around it.
"""

__version__ = "0.1.0"

from .core import (MaskCube, ModelConfig, ParameterStore, ScaleConfig,
                   SequenceCube, init_parameters, preset_config, validate_pair)
from .network import RestorationTrace, multiscale_forward, replace_observed

__all__ = [
    "MaskCube",
    "ModelConfig",
    "ParameterStore",
    "RestorationTrace",
    "ScaleConfig",
    "SequenceCube",
    "init_parameters",
    "multiscale_forward",
    "preset_config",
    "replace_observed",
    "validate_pair",
    "__version__",
]
