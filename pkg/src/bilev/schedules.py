"""Accuracy and step-size schedules, their admissibility checks, and the
theory-side diagnostics built from them.

A schedule is a decaying positive sequence ``value(k)`` for k >= 0, one of

* constant:     ``base``
* polynomial:   ``base * max(k, 1) ** -exponent``
* logarithmic:  ``base * log(max(k, 2)) ** -exponent``

The k=0 singularities of ``k**-p`` and ``log(k)**-p`` are handled with
``max(k, 1)`` and ``max(k, 2)`` so the first value of a polynomial schedule
is exactly ``base``.

The module also provides:

* ``validate_step_schedule`` -- analytic check of the two step-size
  conditions (square summability, ``1/(k alpha_k) -> 0``) a step schedule
  must satisfy for convergence guarantees;
* ``l_k_sum`` -- the weighted error average
  ``L_K = (1/(K alpha_K)) * sum_{k<K} alpha_k eps_k**2`` whose decay governs
  the bias term of the convergence bound;
* ``predicted_rate`` -- the gradient-norm rate regime for a (p, q) pair of
  decay exponents;
* ``compute_weights`` -- the descent-lemma weighting sequence w_k with its
  product/sum diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "ScheduleKind",
    "Schedule",
    "parse_schedule",
    "format_schedule",
    "StepScheduleReport",
    "validate_step_schedule",
    "l_k_sum",
    "Regime",
    "RateRegime",
    "predicted_rate",
    "WeightDiagnostics",
    "compute_weights",
]


class ScheduleKind(Enum):
    CONSTANT = "const"
    POLYNOMIAL = "poly"
    LOGARITHMIC = "log"


@dataclass(frozen=True)
class Schedule:
    """A decaying positive sequence with exponent metadata.

    ``base`` is the first value for constant/polynomial schedules; the
    exponent is p (accuracy) or q (step size) depending on the role.
    """

    kind: ScheduleKind
    base: float
    exponent: float = 0.0

    def __post_init__(self) -> None:
        if not self.base > 0:
            raise ValueError(f"schedule base must be > 0, got {self.base}")
        if self.exponent < 0:
            raise ValueError(f"schedule exponent must be >= 0, got {self.exponent}")
        if self.kind is ScheduleKind.CONSTANT and self.exponent != 0.0:
            raise ValueError("constant schedules must have exponent 0")

    def value(self, k: int) -> float:
        """Evaluate the schedule at iteration k >= 0."""
        if k < 0:
            raise ValueError("iteration index must be >= 0")
        if self.kind is ScheduleKind.CONSTANT:
            return self.base
        if self.kind is ScheduleKind.POLYNOMIAL:
            return self.base * float(max(k, 1)) ** (-self.exponent)
        return self.base * math.log(max(k, 2)) ** (-self.exponent)

    def values(self, ks: np.ndarray) -> np.ndarray:
        """Vectorized ``value`` over an integer array."""
        ks = np.asarray(ks)
        if np.any(ks < 0):
            raise ValueError("iteration indices must be >= 0")
        if self.kind is ScheduleKind.CONSTANT:
            return np.full(ks.shape, self.base)
        if self.kind is ScheduleKind.POLYNOMIAL:
            return self.base * np.maximum(ks, 1).astype(float) ** (-self.exponent)
        return self.base * np.log(np.maximum(ks, 2).astype(float)) ** (-self.exponent)


def value(s: Schedule, k: int) -> float:
    """Functional alias for ``Schedule.value``."""
    return s.value(k)


def parse_schedule(text: str) -> Schedule:
    """Parse a config string: ``poly:<base>:<exponent>``,
    ``log:<base>:<exponent>`` or ``const:<base>``.

    The grammar is exact and case-sensitive; reals are plain decimals.
    """
    parts = text.split(":")
    try:
        if parts[0] == "const":
            if len(parts) != 2:
                raise ValueError
            return Schedule(ScheduleKind.CONSTANT, float(parts[1]))
        if parts[0] in ("poly", "log"):
            if len(parts) != 3:
                raise ValueError
            kind = ScheduleKind.POLYNOMIAL if parts[0] == "poly" else ScheduleKind.LOGARITHMIC
            return Schedule(kind, float(parts[1]), float(parts[2]))
    except ValueError:
        pass
    raise ValueError(
        f"invalid schedule string {text!r}: expected 'const:<base>', "
        "'poly:<base>:<exponent>' or 'log:<base>:<exponent>'"
    )


def format_schedule(s: Schedule) -> str:
    """Inverse of ``parse_schedule`` (round-trips through repr of floats)."""
    if s.kind is ScheduleKind.CONSTANT:
        return f"const:{s.base!r}"
    return f"{s.kind.value}:{s.base!r}:{s.exponent!r}"


@dataclass(frozen=True)
class StepScheduleReport:
    """Analytic admissibility report for a step-size schedule."""

    square_summable: bool
    decay_ok: bool
    neighborhood_only: bool
    notes: tuple[str, ...] = ()

    @property
    def admissible(self) -> bool:
        return self.square_summable and self.decay_ok


def validate_step_schedule(s: Schedule) -> StepScheduleReport:
    """Check the two analytic step-size conditions.

    (i)  sum_k alpha_k**2 < inf        (square summability)
    (ii) lim_k 1/(k alpha_k) = 0       (step size decay)

    Constant schedules (and polynomial exponent 0) fail (i) and are flagged
    ``neighborhood_only``: they guarantee convergence only to a
    neighborhood, not to stationarity.
    """
    notes: list[str] = []
    if s.kind is ScheduleKind.CONSTANT or (
        s.kind is ScheduleKind.POLYNOMIAL and s.exponent == 0.0
    ):
        notes.append("constant step size: converges to a neighborhood only")
        return StepScheduleReport(
            square_summable=False, decay_ok=True, neighborhood_only=True, notes=tuple(notes)
        )
    if s.kind is ScheduleKind.POLYNOMIAL:
        q = s.exponent
        square = q > 0.5  # sum k^{-2q} converges iff 2q > 1
        decay = q < 1.0  # 1/(k * k^-q) = k^{q-1} -> 0 iff q < 1
        if not square:
            notes.append(f"sum alpha_k^2 diverges for q = {q} <= 1/2")
        if not decay:
            if q == 1.0:
                notes.append("1/(k alpha_k) -> 1/base != 0 for q = 1")
            else:
                notes.append(f"1/(k alpha_k) diverges for q = {q} > 1")
        return StepScheduleReport(square, decay, False, tuple(notes))
    # logarithmic step: (log k)^{-q} decays slower than any power
    notes.append("sum alpha_k^2 diverges for logarithmic step decay")
    return StepScheduleReport(
        square_summable=False, decay_ok=True, neighborhood_only=False, notes=tuple(notes)
    )


_LK_DEFAULT_CAP = 10**8
_LK_CHUNK = 1 << 18


def l_k_sum(step: Schedule, acc: Schedule, K: int, cap: int = _LK_DEFAULT_CAP) -> float:
    """Exact partial sum ``L_K = (1/(K alpha_K)) sum_{k=0}^{K-1} alpha_k eps_k**2``.

    Computed by direct streaming summation (no closed form) with
    compensated accumulation so decade-ratio comparisons between horizons
    stay meaningful.
    """
    if K < 1:
        raise ValueError("horizon K must be >= 1")
    if K > cap:
        raise ValueError(f"horizon K = {K} exceeds cap {cap}")
    partials: list[float] = []
    for start in range(0, K, _LK_CHUNK):
        ks = np.arange(start, min(start + _LK_CHUNK, K))
        terms = step.values(ks) * acc.values(ks) ** 2
        partials.append(math.fsum(terms.tolist()))
    total = math.fsum(partials)
    return total / (K * step.value(K))


class Regime(Enum):
    ACCURACY_LIMITED = "accuracy-limited"
    BOUNDARY = "boundary"
    STEP_LIMITED = "step-limited"
    LOGARITHMIC = "logarithmic"
    NEIGHBORHOOD_ONLY = "neighborhood-only"


@dataclass(frozen=True)
class RateRegime:
    """Predicted gradient-norm decay regime for a (p, q) exponent pair.

    ``exponent`` is the power of k in the rate ``k**-exponent`` (for the
    LOGARITHMIC regime it is the power of log k instead); ``has_log_factor``
    marks the boundary rate ``sqrt(log k / k**(1-q))``. ``exponent`` is
    None when the step schedule falls outside the admissible range and no
    rate is claimed.
    """

    regime: Regime
    exponent: float | None
    has_log_factor: bool = False
    note: str = ""

    @property
    def rate_text(self) -> str:
        if self.exponent is None:
            return "no rate claimed"
        if self.regime is Regime.LOGARITHMIC:
            return f"(log k)^-{self.exponent:g}"
        if self.regime is Regime.NEIGHBORHOOD_ONLY:
            return "neighborhood of stationarity"
        if self.has_log_factor:
            return f"sqrt(log k) * k^-{self.exponent:g}"
        return f"k^-{self.exponent:g}"


def predicted_rate(
    p: float, q: float, accuracy_kind: ScheduleKind = ScheduleKind.POLYNOMIAL
) -> RateRegime:
    """Classify the (p, q) pair into its convergence-rate regime.

    For polynomial accuracy ``eps_k ~ k**-p`` and polynomial step
    ``alpha_k ~ k**-q`` with 1/2 < q < 1 the regimes are:

    * 2p < 1-q: accuracy-limited, rate k**-p
    * 2p = 1-q: boundary, rate sqrt(log k / k**(1-q))
    * 2p > 1-q: step-limited, rate k**-((1-q)/2)

    Logarithmic accuracy gives rate (log k)**-p for any p > 0. q = 0 gives
    neighborhood convergence only. Every input maps to exactly one regime;
    out-of-theory q values are classified formally with a warning note and
    no claimed exponent.
    """
    if p < 0 or q < 0:
        raise ValueError("decay exponents must be non-negative")
    if q == 0.0:
        return RateRegime(
            Regime.NEIGHBORHOOD_ONLY,
            None,
            note="constant step size: convergence to a neighborhood only",
        )

    claimed = 0.5 <= q < 1.0
    note = ""
    if q == 0.5:
        note = "q = 1/2 is the admissibility limit (theory needs q > 1/2); limiting rate shown"
    elif not claimed:
        if q < 0.5:
            note = f"q = {q} < 1/2 violates square summability; no rate claimed"
        else:
            note = f"q = {q} >= 1 violates the step decay condition; no rate claimed"

    if accuracy_kind is ScheduleKind.LOGARITHMIC:
        return RateRegime(Regime.LOGARITHMIC, p if claimed else None, note=note)

    gap = 1.0 - q
    if 2.0 * p < gap:
        return RateRegime(Regime.ACCURACY_LIMITED, p if claimed else None, note=note)
    if 2.0 * p == gap:
        return RateRegime(
            Regime.BOUNDARY, gap / 2.0 if claimed else None, has_log_factor=True, note=note
        )
    return RateRegime(Regime.STEP_LIMITED, gap / 2.0 if claimed else None, note=note)


@dataclass(frozen=True)
class WeightDiagnostics:
    """Weighting sequence w_k with its product and sum diagnostics.

    ``weights[k]`` is w_k for k = 0..K-1 (w_0 = 1, non-increasing),
    ``product_p`` is the partial product prod_{j<K} (1 + L A alpha_j^2)
    and ``sum_w`` is W_K = sum_{k<K} w_k.
    """

    weights: np.ndarray
    product_p: float
    sum_w: float
    smoothness: float = field(default=0.0, compare=False)
    a_tilde: float = field(default=0.0, compare=False)


def compute_weights(
    step: Schedule, l_smooth: float, a_tilde: float, K: int
) -> WeightDiagnostics:
    """Recursion ``w_0 = 1``, ``w_k = w_{k-1} alpha_k / (alpha_{k-1} (1 + L A alpha_k^2))``.

    The unrolled product form ``w_k = (alpha_k/alpha_0) prod_{j=1..k}
    1/(1 + L A alpha_j^2)`` agrees with the recursion to ~1e-12 relative
    error; the smoothness constant L and variance constant A are
    user-supplied (this is a diagnostic, not a runtime component).
    """
    if not l_smooth > 0:
        raise ValueError("l_smooth must be > 0")
    if a_tilde < 0:
        raise ValueError("a_tilde must be >= 0")
    if K < 1:
        raise ValueError("horizon K must be >= 1")
    alphas = step.values(np.arange(K))
    if np.any(alphas <= 0):
        raise ValueError("all step sizes must be > 0")
    factors = 1.0 + l_smooth * a_tilde * alphas**2
    weights = np.empty(K)
    weights[0] = 1.0
    for k in range(1, K):
        weights[k] = weights[k - 1] * alphas[k] / (alphas[k - 1] * factors[k])
    return WeightDiagnostics(
        weights=weights,
        product_p=float(np.prod(factors)),
        sum_w=float(math.fsum(weights.tolist())),
        smoothness=l_smooth,
        a_tilde=a_tilde,
    )
