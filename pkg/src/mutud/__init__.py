"""Multimodal training, unimodal deployment.

Trains a speech enhancer with audio and video features, then runs inference
from audio alone by estimating the missing video features through a pair of
modality-specific codebooks. Includes the numeric substrate (tensors with
reverse-mode differentiation), DSP and synthetic scene generation, the
codebook module, losses, toy system variants, a deterministic training loop,
and efficiency/behavior diagnostics.
"""

__version__ = "0.1.0"

from .tensor import Tensor, backward, no_grad, tensor

__all__ = ["Tensor", "backward", "no_grad", "tensor", "__version__"]
