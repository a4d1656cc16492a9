"""False-negative risk of rank-k negative selection as a binomial tail.

If each of m negatives independently shares the anchor's class with
probability p, the rank-k negative (distances sorted ascending, same-class
negatives assumed closest) is a false negative exactly when at least k of
the m negatives are same-class:

    tail(m, k, p) = sum_{j=k}^{m} C(m, j) p^j (1-p)^(m-j)

Magnitudes like 1e-126 underflow term-by-term products, so the sum is
formed in log space (log-gamma binomial coefficients + logaddexp) and only
exponentiated once. ``exact_binomial_tail`` is an independent
arbitrary-precision route over exact rationals for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import OutOfRangeError

# Externally reported values for these parameters. Direct evaluation of the
# tail sum gives ~1.5043e-126 and ~8.4685e-08 instead; risk tables surface
# both so the disagreement is visible. The computed column is authoritative.
REPORTED_TAIL_VALUES = {
    (104, 0.001, 52): 6.53e-121,
    (104, 0.001, 5): 3.03e-94,
}


@dataclass(frozen=True)
class FalseNegativeModel:
    """(m, k, p): negatives per anchor, deputy rank, same-class probability."""

    m: int
    k: int
    p: float

    def __post_init__(self):
        if self.m < 1:
            raise OutOfRangeError("m must be a positive integer")
        if not 0 <= self.k <= self.m:
            raise OutOfRangeError(f"k={self.k} outside 0..{self.m}")
        if not 0.0 <= self.p <= 1.0:
            raise OutOfRangeError(f"p={self.p} outside [0, 1]")


def log_binomial_coefficient(m: int, j: int) -> float:
    """Natural log of C(m, j) via log-gamma; exact to ~1e-15 relative."""
    if not 0 <= j <= m:
        raise OutOfRangeError(f"j={j} outside 0..{m}")
    return math.lgamma(m + 1) - math.lgamma(j + 1) - math.lgamma(m - j + 1)


def binomial_tail(model: FalseNegativeModel) -> float:
    """P(at least k same-class negatives among m), evaluated in log space."""
    m, k, p = model.m, model.k, model.p
    if k == 0:
        return 1.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    log_p = math.log(p)
    log_q = math.log1p(-p)
    js = np.arange(k, m + 1)
    log_terms = np.array([
        log_binomial_coefficient(m, int(j)) + j * log_p + (m - j) * log_q for j in js
    ])
    total = np.logaddexp.reduce(log_terms)
    return min(1.0, float(np.exp(total)))


def exact_binomial_tail(m: int, k: int, p) -> Fraction:
    """The same tail over exact rationals (independent oracle route).

    ``p`` may be a float (used exactly, as the binary rational it is) or a
    Fraction. Convert with ``float(...)`` for a correctly rounded double.
    """
    model = FalseNegativeModel(m, k, float(p))  # reuse the domain checks
    p_frac = Fraction(p)
    q_frac = 1 - p_frac
    return sum(
        math.comb(m, j) * p_frac**j * q_frac**(m - j)
        for j in range(model.k, m + 1)
    )


def risk_table(m: int, p: float, ks) -> list[tuple[int, float]]:
    """binomial_tail over a list of ranks, in the order given."""
    rows = []
    for k in ks:
        try:
            rows.append((int(k), binomial_tail(FalseNegativeModel(m, int(k), p))))
        except OutOfRangeError as exc:
            raise OutOfRangeError(f"k={k}: {exc}") from None
    return rows


def reported_reference_value(m: int, p: float, k: int):
    """Externally reported tail for (m, p, k), or None if not on record."""
    return REPORTED_TAIL_VALUES.get((m, p, k))
