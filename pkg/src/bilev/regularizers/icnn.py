"""Input-convex network regularizer (two conv layers).

    R_theta(x) = sum[ exp(s) .* phi( W_z phi(W_x x + b_x) + b_z ) ]

with phi the smoothed clipped ReLU. Convexity in x requires the inner
weights W_z to be entrywise non-negative; the constraint is enforced by
clamping after each parameter update, and the analytic operations raise
if it is violated. W_x is initialized with zero-mean filters (an
initialization choice, not a reparametrization).
"""

from __future__ import annotations

import numpy as np

from .base import Regularizer
from .conv import ConvStack, center_kernels, kernel_gradient
from .params import ThetaParams
from .potentials import smoothed_clipped_relu

__all__ = ["ICNNRegularizer", "clamp_nonneg"]


def clamp_nonneg(theta: ThetaParams, names: tuple[str, ...] = ("w_z",)) -> ThetaParams:
    """Clamp negative entries of the named tensors to zero (idempotent)."""
    out = theta.copy()
    for name in names:
        t = out.view(name)
        np.maximum(t, 0.0, out=t)
    return out


class ICNNRegularizer(Regularizer):
    name = "icnn"

    def __init__(
        self,
        channels: tuple[int, int] = (4, 8),
        kernel_size: int = 5,
        in_channels: int = 1,
        nu: float = 1e-3,
    ):
        if kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        if not nu > 0:
            raise ValueError("nu must be > 0")
        self.channels = tuple(channels)
        self.kernel_size = kernel_size
        self.in_channels = in_channels
        self.nu = nu

    def init_theta(self, image_shape, rng) -> ThetaParams:
        c1, c2 = self.channels
        k = self.kernel_size
        wx_shape = (c1, self.in_channels, k, k)
        wz_shape = (c2, c1, k, k)
        std_x = np.sqrt(2.0 / ((self.in_channels + c1) * k * k))
        std_z = np.sqrt(2.0 / ((c1 + c2) * k * k))
        w_x = center_kernels(rng.normal(scale=std_x, size=wx_shape))
        w_z = np.abs(rng.normal(scale=std_z, size=wz_shape))
        return ThetaParams.from_tensors(
            [
                ("w_x", w_x),
                ("w_z", w_z),
                ("b_x", np.zeros(c1)),
                ("b_z", np.zeros(c2)),
                ("log_scale", np.zeros(c2)),
            ]
        )

    def project(self, theta: ThetaParams) -> ThetaParams:
        return clamp_nonneg(theta)

    def _unpack(self, theta: ThetaParams):
        """Single-layer conv stacks for W_x and W_z, cached on theta.

        The non-negativity invariant of W_z is checked when the cache
        entry is built (theta is immutable afterwards).
        """
        key = ("icnn_ops", id(self))
        ops = theta.runtime_cache.get(key)
        if ops is None:
            w_z = theta.view("w_z")
            if w_z.min() < 0.0:
                raise ValueError("ICNN invariant violated: W_z has negative entries")
            ops = (ConvStack(kernels=[theta.view("w_x")]), ConvStack(kernels=[w_z]))
            theta.runtime_cache[key] = ops
        w_x_op, w_z_op = ops
        return (
            w_x_op,
            w_z_op,
            theta.view("b_x")[:, None, None],
            theta.view("b_z")[:, None, None],
            np.exp(theta.view("log_scale"))[:, None, None],
        )

    def _forward(self, x, theta):
        w_x, w_z, b_x, b_z, es = self._unpack(theta)
        a1 = w_x.apply(x) + b_x
        h1, d1, dd1 = smoothed_clipped_relu(a1, self.nu)
        a2 = w_z.apply(h1) + b_z
        h2, d2, dd2 = smoothed_clipped_relu(a2, self.nu)
        return w_x, w_z, es, a1, h1, d1, dd1, a2, h2, d2, dd2

    def value(self, x, theta) -> float:
        *_, es, _, _, _, _, _, h2, _, _ = self._forward(x, theta)
        return float((es * h2).sum())

    def grad_x(self, x, theta) -> np.ndarray:
        w_x, w_z, es, _, _, d1, _, _, _, d2, _ = self._forward(x, theta)
        t = w_z.apply_adjoint(es * d2)
        return w_x.apply_adjoint(d1 * t)

    def hvp_x(self, x, theta, v) -> np.ndarray:
        """Two curvature terms: phi'' on the inner and outer activations.

        Positive semidefinite because W_z >= 0 makes t >= 0 and both terms
        are congruences of non-negative diagonals.
        """
        w_x, w_z, es, _, _, d1, dd1, _, _, d2, dd2 = self._forward(x, theta)
        t = w_z.apply_adjoint(es * d2)
        wv = w_x.apply(v)
        inner = dd1 * wv * t
        da2 = w_z.apply(d1 * wv)
        outer = d1 * w_z.apply_adjoint(es * dd2 * da2)
        return w_x.apply_adjoint(inner + outer)

    def mixed_jvp(self, x, theta, q) -> np.ndarray:
        """grad_theta <grad_x R, q> over {W_x, W_z, b_x, b_z, s}, x fixed.

        With r = W_x q, t = W_z^T(e^s phi'(a2)) and m = W_z(phi'(a1) r):
        the a1-sensitivity is v1 = phi''(a1) t r + phi'(a1) W_z^T(e^s
        phi''(a2) m) and the a2-sensitivity is v2 = e^s phi''(a2) m; the
        conv-weight gradients each pick up one term per appearance of the
        operator.
        """
        if x.shape != q.shape:
            raise ValueError("x and q must have the same shape")
        w_x, w_z, es, _, h1, d1, dd1, _, _, d2, dd2 = self._forward(x, theta)
        ks = (self.kernel_size, self.kernel_size)

        w2 = es * d2
        t = w_z.apply_adjoint(w2)
        r = w_x.apply(q)
        m = w_z.apply(d1 * r)
        v2 = es * dd2 * m
        v1 = dd1 * t * r + d1 * w_z.apply_adjoint(v2)

        grad_wx = kernel_gradient(x, v1, ks) + kernel_gradient(q, d1 * t, ks)
        grad_wz = kernel_gradient(h1, v2, ks) + kernel_gradient(d1 * r, w2, ks)
        grad_bx = v1.sum(axis=(1, 2))
        grad_bz = v2.sum(axis=(1, 2))
        grad_s = (es * d2 * m).sum(axis=(1, 2))

        return ThetaParams.from_tensors(
            [
                ("w_x", grad_wx),
                ("w_z", grad_wz),
                ("b_x", grad_bx),
                ("b_z", grad_bz),
                ("log_scale", grad_s),
            ]
        ).flat
