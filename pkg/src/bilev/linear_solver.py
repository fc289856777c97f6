"""Conjugate gradients over abstract symmetric positive-definite operators.

Used to apply the inverse lower-level Hessian to vectors via
Hessian-vector products only. The iteration count equals the number of
operator applications, and each application charges one cost unit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cost import CostCounter

__all__ = ["SpdOperator", "NotSpdError", "CgResult", "cg_solve"]


@dataclass
class SpdOperator:
    apply: Callable[[np.ndarray], np.ndarray]
    dim: int


class NotSpdError(RuntimeError):
    """Raised when CG detects non-positive curvature, which signals a
    broken Hessian implementation rather than a solver failure."""


@dataclass
class CgResult:
    q: np.ndarray
    residual: float
    iters: int
    converged: bool


def cg_solve(
    op: SpdOperator,
    b: np.ndarray,
    tol: float,
    max_iters: int,
    cost: CostCounter | None = None,
    x0: np.ndarray | None = None,
) -> CgResult:
    """Solve op(q) = b to absolute residual norm ``tol``.

    ``x0`` warm-starts the iteration (costs one extra operator application
    for the initial residual); the default zero start is free.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side must be finite")
    iters = 0
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.asarray(x0, dtype=float).copy()
        r = b - op.apply(x)
        iters += 1
    rn = float(np.linalg.norm(r))
    if rn <= tol:
        if cost is not None:
            cost.add(iters)
        return CgResult(q=x, residual=rn, iters=iters, converged=True)

    p = r.copy()
    rr = float(np.vdot(r, r).real)
    converged = False
    while iters < max_iters:
        ap = op.apply(p)
        iters += 1
        pap = float(np.vdot(p, ap).real)
        if pap <= 0.0:
            if cost is not None:
                cost.add(iters)
            raise NotSpdError(f"non-positive curvature <Ap, p> = {pap:g}: operator is not SPD")
        alpha = rr / pap
        x = x + alpha * p
        r = r - alpha * ap
        rn = float(np.linalg.norm(r))
        if rn <= tol:
            converged = True
            break
        rr_new = float(np.vdot(r, r).real)
        p = r + (rr_new / rr) * p
        rr = rr_new
    if cost is not None:
        cost.add(iters)
    return CgResult(q=x, residual=rn, iters=iters, converged=converged)
