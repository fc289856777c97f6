"""Quadratic oracle regularizer with closed-form bilevel solutions.

``R_s(x) = e^s ||x||^2`` with a scalar log-weight s (default), or the
diagonal variant ``R_s(x) = sum_j e^{s_j} x_j^2`` with one log-weight per
entry when ``n_params`` matches the image size. Positivity of the
quadratic weight is guaranteed by the exponential parametrization.

With the squared-distance fidelity this gives lower-level problems whose
minimizer is available in closed form, so every downstream quantity
(hypergradient, error bound, rate proxy) can be checked against an exact
oracle.
"""

from __future__ import annotations

import numpy as np

from .base import Regularizer
from .params import ThetaParams

__all__ = ["QuadToyRegularizer"]


class QuadToyRegularizer(Regularizer):
    name = "quad"

    def __init__(self, n_params: int = 1):
        if n_params < 1:
            raise ValueError("n_params must be >= 1")
        self.n_params = n_params

    def _weights(self, theta: ThetaParams, x: np.ndarray) -> np.ndarray:
        key = ("quad_weights", id(self))
        w = theta.runtime_cache.get(key)
        if w is None:
            w = np.exp(theta.view("log_weight"))
            theta.runtime_cache[key] = w
        if self.n_params == 1:
            return w[0]
        if x.size != self.n_params:
            raise ValueError(
                f"diagonal quad toy with {self.n_params} weights needs x of the same size"
            )
        return w.reshape(x.shape)

    def init_theta(self, image_shape, rng) -> ThetaParams:
        if self.n_params > 1 and int(np.prod(image_shape)) != self.n_params:
            raise ValueError("n_params must equal the image size for the diagonal variant")
        return ThetaParams.from_tensors([("log_weight", np.zeros(self.n_params))])

    def value(self, x, theta) -> float:
        w = self._weights(theta, x)
        return float(np.sum(w * x * x))

    def grad_x(self, x, theta) -> np.ndarray:
        return 2.0 * self._weights(theta, x) * x

    def hvp_x(self, x, theta, v) -> np.ndarray:
        return 2.0 * self._weights(theta, x) * v

    def mixed_jvp(self, x, theta, q) -> np.ndarray:
        # d/ds_j <2 e^{s_j} x_j, q_j> = 2 e^{s_j} x_j q_j; scalar s sums over j
        w = self._weights(theta, x)
        if self.n_params == 1:
            return np.array([2.0 * float(np.sum(w * x * q))])
        return (2.0 * w * x * q).ravel()

    def strong_convexity(self, theta) -> float:
        return 2.0 * float(np.exp(theta.view("log_weight").min()))

    def hess_norm_bound(self, theta) -> float:
        return 2.0 * float(np.exp(theta.view("log_weight").max()))
