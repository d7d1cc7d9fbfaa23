"""Uncertainty-aware multimodal sentiment fusion with ordinal regression.

Per-modality Gaussian uncertainty estimation, product-of-Gaussians
Bayesian fusion, Wasserstein triplet ordinal loss, and a multitask
training/evaluation/robustness harness, all on a small self-contained
reverse-mode autodiff core.
"""

from .diffcore import Tensor, Tape, backward, grad_check
from .uncertainty import GaussianEmbedding
from .model import ModelConfig, TMSONModel
from .training import LossWeights, OptimizerGroups, TrainConfig, train

__all__ = [
    "Tensor", "Tape", "backward", "grad_check",
    "GaussianEmbedding", "ModelConfig", "TMSONModel",
    "LossWeights", "OptimizerGroups", "TrainConfig", "train",
]

__version__ = "0.1.0"
