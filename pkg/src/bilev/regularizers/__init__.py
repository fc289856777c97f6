"""Parametric convex regularizers with analytic derivatives."""

from .base import Regularizer, ZeroRegularizer
from .conv import (
    ConvStack,
    center_kernels,
    convolve_same_adjoint,
    correlate_same,
    kernel_gradient,
    operator_norm,
    spectral_normalize,
)
from .crr import CRRRegularizer
from .icnn import ICNNRegularizer, clamp_nonneg
from .params import CheckpointError, ThetaParams, load_checkpoint, save_checkpoint
from .potentials import Potential, PotentialKind, potential_eval, smoothed_clipped_relu
from .quad import QuadToyRegularizer

__all__ = [
    "Regularizer",
    "ZeroRegularizer",
    "ConvStack",
    "center_kernels",
    "correlate_same",
    "convolve_same_adjoint",
    "kernel_gradient",
    "operator_norm",
    "spectral_normalize",
    "CRRRegularizer",
    "ICNNRegularizer",
    "clamp_nonneg",
    "ThetaParams",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "Potential",
    "PotentialKind",
    "potential_eval",
    "smoothed_clipped_relu",
    "QuadToyRegularizer",
]
