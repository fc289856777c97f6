"""Common interface of parametric convex regularizers R_theta(x).

Every regularizer exposes analytic value, x-gradient, x-Hessian-vector
product and the theta-side mixed derivative

    mixed_jvp(x, theta, q) = grad_theta <grad_x R(x, theta), q>   (x fixed)

which is the regularizer's contribution to the hypergradient adjoint
product (data-fidelity terms carry no theta dependence). ``project``
restores architecture constraints after a parameter update and
``strong_convexity``/``hess_norm_bound`` report curvature bounds used by
the lower-level solver; both may be trivial.
"""

from __future__ import annotations

import numpy as np

from .params import ThetaParams

__all__ = ["Regularizer", "ZeroRegularizer"]


class Regularizer:
    name = "base"

    def init_theta(self, image_shape: tuple[int, ...], rng: np.random.Generator) -> ThetaParams:
        raise NotImplementedError

    def value(self, x: np.ndarray, theta: ThetaParams) -> float:
        raise NotImplementedError

    def grad_x(self, x: np.ndarray, theta: ThetaParams) -> np.ndarray:
        raise NotImplementedError

    def hvp_x(self, x: np.ndarray, theta: ThetaParams, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mixed_jvp(self, x: np.ndarray, theta: ThetaParams, q: np.ndarray) -> np.ndarray:
        """Returns a theta-flat-shaped vector."""
        raise NotImplementedError

    def project(self, theta: ThetaParams) -> ThetaParams:
        """Restore architecture constraints (default: none)."""
        return theta

    def strong_convexity(self, theta: ThetaParams) -> float:
        """Lower bound on the curvature of R in x (0 for merely convex)."""
        return 0.0

    def hess_norm_bound(self, theta: ThetaParams) -> float | None:
        """Upper bound on ||hess_x R|| valid for all x, or None if unknown."""
        return None


class ZeroRegularizer(Regularizer):
    """R identically zero with an empty parameter vector."""

    name = "zero"

    def init_theta(self, image_shape, rng) -> ThetaParams:
        return ThetaParams(flat=np.zeros(0), layout=())

    def value(self, x, theta) -> float:
        return 0.0

    def grad_x(self, x, theta) -> np.ndarray:
        return np.zeros_like(x)

    def hvp_x(self, x, theta, v) -> np.ndarray:
        return np.zeros_like(v)

    def mixed_jvp(self, x, theta, q) -> np.ndarray:
        return np.zeros(0)

    def hess_norm_bound(self, theta) -> float:
        return 0.0
