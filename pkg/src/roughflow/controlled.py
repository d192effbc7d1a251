"""Controlled rough paths and the rough integral as compensated Riemann sums."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._fit import EXACT_FLOOR, OrderFit, fit_order
from .grid_path import GridPath, holder_norm, two_param_holder_norm
from .rough_lift import RoughPath, level2_table


class ControlledPath:
    """A pair ``(Y, Y')`` controlled by ``reference``.

    ``values`` has shape ``(n+1, *shape)`` and ``derivative`` has shape
    ``(n+1, *shape, d)``: the last axis of the Gubinelli derivative is the
    direction of the reference path. State paths have ``shape = (m,)``;
    integrands for :func:`rough_integral` have ``shape = (m, d)``.
    """

    def __init__(self, reference: RoughPath, values, derivative, alpha: float | None = None):
        values = np.array(values, dtype=float)
        derivative = np.array(derivative, dtype=float)
        n, d = reference.steps, reference.dim
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != n + 1:
            raise ValueError(f"values need {n + 1} rows, got {values.shape[0]}")
        if derivative.shape != values.shape + (d,):
            raise ValueError(
                f"derivative must have shape {values.shape + (d,)}, got {derivative.shape}"
            )
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(derivative))):
            raise ValueError("controlled path entries must be finite")
        values.setflags(write=False)
        derivative.setflags(write=False)
        self.reference = reference
        self.values = values
        self.derivative = derivative
        self.alpha = reference.alpha if alpha is None else float(alpha)

    @property
    def shape(self) -> tuple:
        return self.values.shape[1:]

    @property
    def path(self) -> GridPath:
        return GridPath(self.reference.grid, self.values.reshape(len(self.values), -1))

    def restrict(self, steps: int) -> "ControlledPath":
        return ControlledPath(
            self.reference.restrict(steps), self.values[: steps + 1],
            self.derivative[: steps + 1], self.alpha,
        )

    def __add__(self, other: "ControlledPath") -> "ControlledPath":
        return ControlledPath(
            self.reference, self.values + other.values, self.derivative + other.derivative, self.alpha
        )

    def scale(self, c: float) -> "ControlledPath":
        return ControlledPath(self.reference, c * self.values, c * self.derivative, self.alpha)


@dataclass(frozen=True)
class ControlledNorm:
    gubinelli: float
    remainder: float

    @property
    def total(self) -> float:
        return self.gubinelli + self.remainder


def identity_controlled(rp: RoughPath) -> ControlledPath:
    """``(W, I)``: the reference path controlled by itself."""
    n, d = rp.steps, rp.dim
    return ControlledPath(rp, rp.base.values, np.broadcast_to(np.eye(d), (n + 1, d, d)))


def remainder(cp: ControlledPath, i: int, j: int) -> np.ndarray:
    """``R_{i,j} = Y_{i,j} - Y'_i W_{i,j}``."""
    n = cp.reference.steps
    if not (0 <= i <= j <= n):
        raise IndexError(f"need 0 <= i <= j <= {n}, got ({i}, {j})")
    w = cp.reference.base.values
    return cp.values[j] - cp.values[i] - cp.derivative[i] @ (w[j] - w[i])


def remainder_table(cp: ControlledPath) -> np.ndarray:
    """All ``R_{i,j}``, shape ``(n+1, n+1, *shape)``; entries with ``j < i`` are zero."""
    n = cp.reference.steps
    w = cp.reference.base.values
    y = cp.values
    out = np.zeros((n + 1, n + 1) + cp.shape)
    for i in range(n + 1):
        out[i, i:] = y[i:] - y[i] - np.einsum("...a,ka->k...", cp.derivative[i], w[i:] - w[i])
    return out


def controlled_norm(cp: ControlledPath, alpha: float | None = None) -> ControlledNorm:
    """``||Y'||_alpha`` and ``||R^Y||_{2 alpha}`` on grid pairs."""
    alpha = cp.alpha if alpha is None else alpha
    grid = cp.reference.grid
    n = grid.steps
    gub = holder_norm(GridPath(grid, cp.derivative.reshape(n + 1, -1)), alpha).value
    rem = two_param_holder_norm(remainder_table(cp), 2 * alpha, grid).value
    return ControlledNorm(gub, rem)


def compose_smooth(phi, dphi, cp: ControlledPath) -> ControlledPath:
    """``(phi(Y), Dphi(Y) Y')`` on the same reference.

    ``phi`` maps points ``(..., m)`` to ``(..., *out)``; ``dphi`` returns
    ``(..., *out, m)``. Only the first derivative enters the pair; the second
    is needed for the regularity of the result, not its value.
    """
    if len(cp.shape) != 1:
        raise ValueError("compose_smooth acts on state paths with values in R^m")
    with np.errstate(all="raise"):
        try:
            val = np.asarray(phi(cp.values), dtype=float)
            jac = np.asarray(dphi(cp.values), dtype=float)
        except FloatingPointError as exc:
            raise ValueError(f"composition failed: {exc}") from exc
    der = np.einsum("k...l,klb->k...b", jac, cp.derivative)
    return ControlledPath(cp.reference, val, der, cp.alpha)


def _compensated_terms(cp: ControlledPath, rp: RoughPath) -> np.ndarray:
    """``Y_u W_{u,v} + Y'_u B_{u,v}`` per grid interval, shape ``(n, m)``."""
    y, yp = cp.values, cp.derivative
    d = rp.dim
    if y.ndim != 3 or y.shape[2] != d or yp.shape[2:] != (d, d):
        raise ValueError(
            f"integrand must be (n+1, m, {d}) with derivative (n+1, m, {d}, {d}); "
            f"got {y.shape} and {yp.shape}"
        )
    if cp.reference.steps != rp.steps:
        raise ValueError("integrand and rough path live on different grids")
    dw = rp.base.increments()
    return np.einsum("kma,ka->km", y[:-1], dw) + np.einsum("kmab,kba->km", yp[:-1], rp.level2)


def rough_integral(cp: ControlledPath, rp: RoughPath, i: int = 0, j: int | None = None) -> np.ndarray:
    """Compensated sum of ``cp`` against ``rp`` over ``[t_i, t_j]`` (left to right)."""
    n = rp.steps
    j = n if j is None else j
    if not (0 <= i <= j <= n):
        raise IndexError(f"need 0 <= i <= j <= {n}, got ({i}, {j})")
    terms = _compensated_terms(cp, rp)
    if j == i:
        return np.zeros(terms.shape[1])
    return np.cumsum(terms[i:j], axis=0)[-1]


def rough_integral_path(cp: ControlledPath, rp: RoughPath) -> np.ndarray:
    """``int_0^{t_k}`` for every grid point ``k``, shape ``(n+1, m)``."""
    terms = _compensated_terms(cp, rp)
    out = np.zeros((rp.steps + 1, terms.shape[1]))
    np.cumsum(terms, axis=0, out=out[1:])
    return out


@dataclass(frozen=True)
class SewingReport:
    fit: OrderFit | None
    exact: bool
    ratio: float
    bound_factor: float
    lengths: tuple = ()
    defects: tuple = ()

    @property
    def slope(self) -> float:
        return np.inf if self.exact else self.fit.slope


def _one_step(cp: ControlledPath, rp: RoughPath, i: int, js: np.ndarray, l2_rows: np.ndarray):
    w = rp.base.values
    return np.einsum("ma,ka->km", cp.values[i], w[js] - w[i]) + np.einsum(
        "mab,kba->km", cp.derivative[i], l2_rows
    )


def sewing_defects(cp: ControlledPath, rp: RoughPath, min_length: int = 1):
    """``(s, t, D_{s,t})`` for every grid pair with ``t - s >= min_length`` steps.

    ``D_{s,t} = |int_s^t Y dW - Y_s W_{s,t} - Y'_s B_{s,t}|`` with the integral
    the compensated sum on the grid of ``rp``.
    """
    from .rough_lift import _chen_row

    n = rp.steps
    prefix = rough_integral_path(cp, rp)
    times = rp.grid.points
    s_out, t_out, d_out = [], [], []
    for i in range(n - min_length + 1):
        js = np.arange(i + min_length, n + 1)
        row = _chen_row(rp.base.values, rp.level2, i)[js - i]
        d = np.linalg.norm(prefix[js] - prefix[i] - _one_step(cp, rp, i, js, row), axis=1)
        s_out.append(np.full(len(js), times[i]))
        t_out.append(times[js])
        d_out.append(d)
    return np.concatenate(s_out), np.concatenate(t_out), np.concatenate(d_out)


def write_defect_csv(cp: ControlledPath, rp: RoughPath, path, min_length: int = 1) -> None:
    s, t, d = sewing_defects(cp, rp, min_length)
    np.savetxt(path, np.column_stack([s, t, d]), delimiter=",", header="s,t,defect",
               comments="", fmt="%.17g")


def check_sewing_bound(cp: ControlledPath, rp: RoughPath, alpha: float | None = None,
                       lengths=None, mode: str = "blocks", min_length: int = 2) -> SewingReport:
    """Empirical local order of the one-step compensated term.

    ``mode="blocks"`` (default) is a refinement regression: for each block
    length ``L`` (default powers of two with at least 32 blocks), the defect
    ``D`` is taken on the aligned blocks ``[kL, (k+1)L]`` and its root mean
    square over ``k`` is regressed against ``L h``. ``mode="pairs"`` regresses
    ``log D`` on ``log(t - s)`` over every pair at least ``min_length`` steps
    apart; a few extreme increments dominate that fit on a single path.

    ``ratio`` is ``max D / ((t - s)^{3 alpha} bound_factor)`` with
    ``bound_factor = |W|_a |R|_2a + |B|_2a |Y'|_a``, computed from full pair
    tables when ``n <= 2048`` (``nan`` above, where the tables are too large).
    The slope is expected near ``3 alpha``.
    """
    from .rough_lift import _chen_row

    alpha = rp.alpha if alpha is None else alpha
    n = rp.steps
    h = rp.grid.h
    if mode == "blocks":
        if lengths is None:
            lengths = [2**k for k in range(1, 30) if n // 2**k >= 32]
        prefix = rough_integral_path(cp, rp)
        xs, errs, worst = [], [], 0.0
        for L in lengths:
            if L < 1 or n // L < 1:
                raise ValueError(f"block length {L} does not fit {n} steps")
            ks = np.arange(0, n - L + 1, L)
            l2 = np.stack([_chen_row(rp.base.values[: k + L + 1], rp.level2[: k + L], k)[-1] for k in ks])
            w = rp.base.values
            one = np.einsum("kma,ka->km", cp.values[ks], w[ks + L] - w[ks]) + np.einsum(
                "kmab,kba->km", cp.derivative[ks], l2
            )
            d = np.linalg.norm(prefix[ks + L] - prefix[ks] - one, axis=1)
            xs.append(L * h)
            errs.append(float(np.sqrt(np.mean(d**2))))
            worst = max(worst, float(d.max() / (L * h) ** (3 * alpha)))
        lengths_arr, defects = np.array(xs), np.array(errs)
    elif mode == "pairs":
        s, t, defects = sewing_defects(cp, rp, min_length)
        lengths_arr = t - s
        worst = float(np.max(defects / lengths_arr ** (3 * alpha))) if len(defects) else 0.0
    else:
        raise ValueError(f"unknown mode {mode!r}")

    factor = np.nan
    if n <= 2048:
        norm = controlled_norm(cp, alpha)
        w_norm = holder_norm(rp.base, alpha).value
        l2_norm = two_param_holder_norm(level2_table(rp), 2 * alpha, rp.grid).value
        factor = w_norm * norm.remainder + l2_norm * norm.gubinelli
    if np.all(defects < EXACT_FLOOR):
        return SewingReport(None, True, 0.0, factor, tuple(lengths_arr), tuple(defects))
    keep = defects > EXACT_FLOOR
    fit = fit_order(lengths_arr[keep], defects[keep])
    ratio = worst / factor if factor and np.isfinite(factor) and factor > 0 else np.nan
    return SewingReport(fit, False, ratio, factor, tuple(lengths_arr), tuple(defects))
