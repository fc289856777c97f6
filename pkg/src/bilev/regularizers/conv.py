"""Multi-layer 2-D convolution operators (linear, zero padded) used as the
filter bank of learned regularizers.

Images are channel-first float arrays (C, H, W). A stack applies its
layers in order; layer kernels have shape (out_c, in_c, kh, kw) with odd
kh, kw. The forward op is cross-correlation with 'same' zero padding; the
exact adjoint is the corresponding zero-padded convolution. Everything is
built on batched FFT convolution, which is exact to machine precision at
these sizes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.signal import fftconvolve

__all__ = [
    "ConvStack",
    "correlate_same",
    "convolve_same_adjoint",
    "kernel_gradient",
    "center_kernels",
    "operator_norm",
    "spectral_normalize",
]


def _check_kernel(k: np.ndarray) -> None:
    if k.ndim != 4:
        raise ValueError("kernel must have shape (out_c, in_c, kh, kw)")
    if k.shape[2] % 2 == 0 or k.shape[3] % 2 == 0:
        raise ValueError("kernel sizes must be odd for symmetric zero padding")


def correlate_same(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' cross-correlation: (in_c, H, W) -> (out_c, H, W)."""
    _check_kernel(k)
    if x.ndim != 3 or x.shape[0] != k.shape[1]:
        raise ValueError(f"input shape {x.shape} incompatible with kernel {k.shape}")
    cy, cx = k.shape[2] // 2, k.shape[3] // 2
    full = fftconvolve(x[None], k[:, :, ::-1, ::-1], mode="full", axes=(2, 3))
    h, w = x.shape[1], x.shape[2]
    return full[:, :, cy : cy + h, cx : cx + w].sum(axis=1)


def convolve_same_adjoint(u: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Exact adjoint of ``correlate_same``: (out_c, H, W) -> (in_c, H, W)."""
    _check_kernel(k)
    if u.ndim != 3 or u.shape[0] != k.shape[0]:
        raise ValueError(f"input shape {u.shape} incompatible with kernel {k.shape}")
    cy, cx = k.shape[2] // 2, k.shape[3] // 2
    full = fftconvolve(u[:, None], k, mode="full", axes=(2, 3))
    h, w = u.shape[1], u.shape[2]
    return full[:, :, cy : cy + h, cx : cx + w].sum(axis=0)


def kernel_gradient(x_in: np.ndarray, upstream: np.ndarray, ksize: tuple[int, int]) -> np.ndarray:
    """Gradient of ``<upstream, correlate_same(x_in, K)>`` with respect to K.

    Returns an array of shape (out_c, in_c, kh, kw).
    """
    kh, kw = ksize
    cy, cx = kh // 2, kw // 2
    xp = np.pad(x_in, ((0, 0), (cy, cy), (cx, cx)))
    return fftconvolve(xp[None], upstream[:, None, ::-1, ::-1], mode="valid", axes=(2, 3))


def center_kernels(k: np.ndarray) -> np.ndarray:
    """Subtract the spatial mean of each (out, in) kernel slice."""
    return k - k.mean(axis=(2, 3), keepdims=True)


@dataclass(eq=False)
class ConvStack:
    """Composite linear operator W = W_L ... W_1 of zero-padded conv layers.

    Kernel FFTs are cached per image size, so repeated applications (the
    dominant cost of lower-level solves) pay only for the image
    transforms. Kernels are treated as immutable once the stack is built.
    """

    kernels: list[np.ndarray]
    _fft_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.kernels:
            raise ValueError("conv stack needs at least one layer")
        for k in self.kernels:
            _check_kernel(k)
        for a, b in zip(self.kernels, self.kernels[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError("channel plan mismatch between consecutive layers")

    @property
    def in_channels(self) -> int:
        return self.kernels[0].shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernels[-1].shape[0]

    def _plan(self, h: int, w: int):
        plan = self._fft_cache.get((h, w))
        if plan is None:
            plan = []
            for k in self.kernels:
                kh, kw = k.shape[2], k.shape[3]
                fshape = (h + kh - 1, w + kw - 1)
                corr_f = sfft.rfft2(k[:, :, ::-1, ::-1], s=fshape, axes=(2, 3))
                conv_f = sfft.rfft2(k, s=fshape, axes=(2, 3))
                plan.append((fshape, (kh // 2, kw // 2), corr_f, conv_f))
            self._fft_cache[(h, w)] = plan
        return plan

    def _layer(self, x: np.ndarray, step, adjoint: bool) -> np.ndarray:
        fshape, (cy, cx), corr_f, conv_f = step
        h, w = x.shape[1], x.shape[2]
        xf = sfft.rfft2(x, s=fshape, axes=(1, 2))
        if adjoint:
            yf = np.einsum("ofg,oifg->ifg", xf, conv_f)
        else:
            yf = np.einsum("ifg,oifg->ofg", xf, corr_f)
        y = sfft.irfft2(yf, s=fshape, axes=(1, 2))
        return y[:, cy : cy + h, cx : cx + w]

    def apply(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ValueError(f"input shape {x.shape} incompatible with the stack")
        plan = self._plan(x.shape[1], x.shape[2])
        for step in plan:
            x = self._layer(x, step, adjoint=False)
        return x

    def apply_with_intermediates(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Apply the stack, returning the input of every layer as well."""
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ValueError(f"input shape {x.shape} incompatible with the stack")
        plan = self._plan(x.shape[1], x.shape[2])
        inputs = []
        for step in plan:
            inputs.append(x)
            x = self._layer(x, step, adjoint=False)
        return x, inputs

    def apply_adjoint(self, u: np.ndarray) -> np.ndarray:
        if u.ndim != 3 or u.shape[0] != self.out_channels:
            raise ValueError(f"input shape {u.shape} incompatible with the stack")
        plan = self._plan(u.shape[1], u.shape[2])
        for step in reversed(plan):
            u = self._layer(u, step, adjoint=True)
        return u

    def backprop_kernel_grads(
        self, inputs: list[np.ndarray], upstream: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Per-layer kernel gradients of ``<upstream, W x>``.

        ``inputs`` are the layer inputs from ``apply_with_intermediates``.
        Also returns the fully backpropagated adjoint ``W^T upstream``.
        """
        grads: list[np.ndarray | None] = [None] * len(self.kernels)
        u = upstream
        for idx in range(len(self.kernels) - 1, -1, -1):
            k = self.kernels[idx]
            grads[idx] = kernel_gradient(inputs[idx], u, (k.shape[2], k.shape[3]))
            u = convolve_same_adjoint(u, k)
        return grads, u


def operator_norm(stack: ConvStack, input_shape: tuple[int, ...], iters: int = 50) -> float:
    """Spectral norm estimate of the composite operator by power iteration
    on W^T W at the given input shape. Deterministic (fixed probe seed)."""
    if iters < 1:
        raise ValueError("power iteration needs iters >= 1")
    rng = np.random.default_rng(0x5EED)
    v = rng.normal(size=input_shape)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValueError("degenerate probe")
    v /= nv
    sigma = 0.0
    for _ in range(iters):
        w = stack.apply(v)
        v = stack.apply_adjoint(w)
        nv = np.linalg.norm(v)
        if nv == 0:
            return 0.0
        sigma = np.sqrt(nv)  # ||W^T W v|| -> lambda_max for unit v
        v /= nv
    return float(sigma)


def spectral_normalize(
    stack: ConvStack, input_shape: tuple[int, ...], iters: int = 50
) -> tuple[ConvStack, float]:
    """Rescale the stack so the composite spectral norm is ~1.

    A single global scale is spread evenly across the layers (each divided
    by sigma**(1/L)). Returns the normalized stack and the estimated norm
    of the input stack. A zero operator is returned unchanged with a
    warning.
    """
    sigma = operator_norm(stack, input_shape, iters=iters)
    if sigma == 0.0:
        warnings.warn("spectral_normalize: zero operator left unchanged", stacklevel=2)
        return stack, sigma
    scale = sigma ** (1.0 / len(stack.kernels))
    return ConvStack(kernels=[k / scale for k in stack.kernels]), sigma
