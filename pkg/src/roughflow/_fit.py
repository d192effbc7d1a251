"""Log-log slope fits used by every refinement and moment-scaling study."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Errors below this are treated as exact zeros (pure rounding).
EXACT_FLOOR = 1e-13


@dataclass(frozen=True)
class OrderFit:
    """Least-squares fit ``log err = slope * log x + log const``.

    ``exact`` is set when every error sits below the rounding floor, in which
    case no slope is meaningful and ``slope`` is ``inf``.
    """

    slope: float
    const: float
    xs: tuple
    errors: tuple
    exact: bool = False

    def passes(self, threshold: float) -> bool:
        return self.exact or self.slope >= threshold


def fit_order(xs, errors, floor: float = EXACT_FLOOR) -> OrderFit:
    xs = np.asarray(xs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if xs.shape != errors.shape or xs.size < 2:
        raise ValueError("need matching arrays with at least two points")
    if np.all(errors < floor):
        return OrderFit(np.inf, 0.0, tuple(xs), tuple(errors), exact=True)
    keep = errors > 0
    if keep.sum() < 2:
        raise ValueError("fewer than two non-zero errors to fit")
    slope, intercept = np.polyfit(np.log(xs[keep]), np.log(errors[keep]), 1)
    return OrderFit(float(slope), float(np.exp(intercept)), tuple(xs), tuple(errors))
