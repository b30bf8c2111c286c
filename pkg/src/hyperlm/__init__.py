"""Fully hyperbolic (Lorentz-model) transformer language models."""

from .lorentz import (Curvature, LorentzBatch, LorentzPoint, check_on_manifold,
                      lift, lorentz_centroid, lorentz_inner, lorentz_norm,
                      origin, rescale_curvature, sq_distance)
from .model import LanguageModel, ModelConfig
from .tensor import AdamW, Tensor

__version__ = "0.1.0"

__all__ = [
    "AdamW", "Curvature", "LanguageModel", "LorentzBatch", "LorentzPoint",
    "ModelConfig", "Tensor", "check_on_manifold", "lift", "lorentz_centroid",
    "lorentz_inner", "lorentz_norm", "origin", "rescale_curvature",
    "sq_distance",
]
