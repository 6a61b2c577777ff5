"""Conditional normalizing flows plugged into frozen autoencoder latents."""

__version__ = "0.1.0"

from .autoencoder import Autoencoder, AutoencoderConfig, train_autoencoder
from .errors import (
    ConfigError,
    FlowPluginError,
    NumericError,
    ParseError,
    PreconditionError,
    ShapeError,
)
from .flow import FlowModel, build_flow, coupling_flow, maf_flow
from .numerics import GradientTape, Rng, Tensor, backward
from .tasks import (
    ClassPrior,
    class_log_posteriors,
    classify,
    conditional_generate,
    manipulate_attributes,
)
from .trainer import LatentDataset, TrainConfig, build_latent_dataset, train_flow
from .transforms import (
    AffineCouplingLayer,
    InvertibleBatchNorm,
    MaskedAutoregressiveLayer,
    ReversePermutation,
)

__all__ = [
    "AffineCouplingLayer",
    "Autoencoder",
    "AutoencoderConfig",
    "ClassPrior",
    "ConfigError",
    "FlowModel",
    "FlowPluginError",
    "GradientTape",
    "InvertibleBatchNorm",
    "LatentDataset",
    "MaskedAutoregressiveLayer",
    "NumericError",
    "ParseError",
    "PreconditionError",
    "ReversePermutation",
    "Rng",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "backward",
    "build_flow",
    "build_latent_dataset",
    "class_log_posteriors",
    "classify",
    "conditional_generate",
    "coupling_flow",
    "maf_flow",
    "manipulate_attributes",
    "train_autoencoder",
    "train_flow",
    "__version__",
]
