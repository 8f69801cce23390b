"""Context-conditioned cascaded MRI reconstruction with dynamic weight prediction."""

from .autodiff import Tensor
from .model import ModelConfig, ReconModel, load_checkpoint, save_checkpoint
from .sampling import AcquisitionContext, SamplingMask, encode_context, undersample

__all__ = [
    "AcquisitionContext",
    "ModelConfig",
    "ReconModel",
    "SamplingMask",
    "Tensor",
    "encode_context",
    "load_checkpoint",
    "save_checkpoint",
    "undersample",
]
__version__ = "0.1.0"
