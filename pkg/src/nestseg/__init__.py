"""Nested-class segmentation with a multi-level activation.

A single-channel network output is squashed into ``(0, m)`` by a sum of
shifted sigmoids; ordinal thresholds turn it into ``m + 1`` hierarchically
nested classes.  Everything (autodiff, U-Net, losses, data, statistics)
runs on numpy.
"""

from .activation import ActivationConfig, activation_array, multi_level_activation
from .config import ExperimentConfig, parse_config
from .data import SceneSpec, generate_scene, validate_nesting
from .errors import ConfigError
from .metrics import dice, threshold_map, wilcoxon_signed_rank
from .segnet import NetworkConfig, SegNet

__all__ = [
    "ActivationConfig",
    "ConfigError",
    "ExperimentConfig",
    "NetworkConfig",
    "SceneSpec",
    "SegNet",
    "activation_array",
    "dice",
    "generate_scene",
    "multi_level_activation",
    "parse_config",
    "threshold_map",
    "validate_nesting",
    "wilcoxon_signed_rank",
]

__version__ = "0.1.0"
