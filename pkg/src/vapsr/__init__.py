"""VapSR super-resolution toolkit.

A self-contained numpy implementation of the VapSR architecture:
forward inference, analytic backward passes with a toy trainer, and a
complexity-analysis engine for the model family, wired to a CLI.
"""

from .analysis import (
    attention_receptive_field,
    multi_adds,
    param_count,
    receptive_field,
    roadmap_report,
)
from .autograd import (
    EmaState,
    GradTape,
    OptimizerState,
    adam_step,
    ema_update,
    l1_loss,
    train_toy,
)
from .model import PRESETS, ModelConfig, Network, build, variant_catalog
from .nn_ops import ConvSpec, PixelNormParams, conv2d, gelu, pixel_norm, pixel_shuffle
from .tensor import Tensor, from_values, full, zeros

__version__ = "0.1.0"

__all__ = [
    "ConvSpec",
    "EmaState",
    "GradTape",
    "ModelConfig",
    "Network",
    "OptimizerState",
    "PRESETS",
    "PixelNormParams",
    "Tensor",
    "adam_step",
    "attention_receptive_field",
    "build",
    "conv2d",
    "ema_update",
    "from_values",
    "full",
    "gelu",
    "l1_loss",
    "multi_adds",
    "param_count",
    "pixel_norm",
    "pixel_shuffle",
    "receptive_field",
    "roadmap_report",
    "train_toy",
    "variant_catalog",
    "zeros",
]
