"""Scalar convex potentials and the smoothed clipped-ReLU activation.

Each evaluator returns the triple (value, first derivative, second
derivative) elementwise, vectorized over numpy arrays. All of them are
convex with psi(0) = 0, non-decreasing psi' and psi'' >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = ["PotentialKind", "Potential", "potential_eval", "smoothed_clipped_relu"]

_LOG2 = float(np.log(2.0))


class PotentialKind(Enum):
    HUBER = "huber"
    LOGCOSH = "logcosh"


@dataclass(frozen=True)
class Potential:
    """Convex scalar potential with smoothing parameter beta > 0."""

    kind: PotentialKind
    beta: float = 1.0

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError("potential beta must be > 0")


def potential_eval(pot: Potential, u: np.ndarray):
    """Evaluate (psi, psi', psi'') elementwise.

    Huber (Moreau envelope of the l1 norm):
        psi(u)  = beta u^2 / 2            for |u| <= 1/beta
                = |u| - 1/(2 beta)        otherwise
        psi'(u) = clamp(beta u, -1, 1)
        psi''(u)= beta on |u| <= 1/beta, else 0 (a.e. second derivative)

    Log-cosh:
        psi(u)  = log(cosh(beta u)) / beta, computed via the overflow-safe
                  form |u| + (log1p(exp(-2 beta |u|)) - log 2) / beta
        psi'(u) = tanh(beta u)
        psi''(u)= beta sech^2(beta u)
    """
    u = np.asarray(u, dtype=float)
    b = pot.beta
    if pot.kind is PotentialKind.HUBER:
        au = np.abs(u)
        quad = au <= 1.0 / b
        psi = np.where(quad, 0.5 * b * u * u, au - 0.5 / b)
        dpsi = np.clip(b * u, -1.0, 1.0)
        d2psi = np.where(quad, b, 0.0)
        return psi, dpsi, d2psi
    au = np.abs(b * u)
    psi = (au + np.log1p(np.exp(-2.0 * au)) - _LOG2) / b
    dpsi = np.tanh(b * u)
    # sech(x) = 2 e^{-|x|} / (1 + e^{-2|x|}) avoids cosh overflow
    e = np.exp(-au)
    sech = 2.0 * e / (1.0 + e * e)
    d2psi = b * sech * sech
    return psi, dpsi, d2psi


def smoothed_clipped_relu(u: np.ndarray, nu: float):
    """Smoothed clipped ReLU with smoothing parameter nu > 0.

        phi(u) = 0              u < 0
               = u^2 / (2 nu)   0 <= u < nu
               = u - nu/2       u >= nu

    phi' runs 0 -> u/nu -> 1 and phi'' is 1/nu on the quadratic branch.
    Convex, non-decreasing, C^1.
    """
    if not nu > 0:
        raise ValueError("nu must be > 0")
    u = np.asarray(u, dtype=float)
    mid = (u >= 0.0) & (u < nu)
    hi = u >= nu
    phi = np.where(mid, u * u / (2.0 * nu), 0.0) + np.where(hi, u - 0.5 * nu, 0.0)
    dphi = np.where(mid, u / nu, 0.0) + np.where(hi, 1.0, 0.0)
    d2phi = np.where(mid, 1.0 / nu, 0.0)
    return phi, dphi, d2phi
