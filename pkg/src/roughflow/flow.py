"""The stochastic flow of ``dX = f(X) dt + dB`` in one dimension.

The flow ``psi(s, t, x)`` is computed by an Euler march that shares one set of
Brownian increments across all starting points. Around it sit the fields

    I^u_t = F(Z^u_t) - F(Z^u_s) - int_s^t f(Z^u_r) (u f(psi_x) + (1 - u) f(psi_y)) dr,
    J^u_t = int_s^t f(Z^u_r) dB_r,            Z^u = u psi(s, ., x) + (1 - u) psi(s, ., y),

the exponential identity ``psi(s,t,x) - psi(s,t,y) = (x - y) exp(2 int_0^1 (I^u - J^u) du)``,
Monte Carlo moment scaling, and the functional ``L_r = psi(r, T, X_r) - psi(0, T, x)``
that is constant in ``r`` exactly when ``X`` solves the equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicHermiteSpline

from ._fit import OrderFit, fit_order
from .fbm import path_rng
from .fields import Drift, cutoff
from .grid_path import GridPath, TimeGrid

BLOW_UP = 1e8
GL_NODES = 8
EXP_OVERFLOW = 700.0
MIN_FD_STEP = 1e-8


class FlowError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# the problem


def _cutoff_antiderivative(drift: Drift, radius: float) -> Callable:
    """Antiderivative of the cut-off drift with ``F(0) = 0``.

    With an analytic antiderivative ``A`` of ``f``: ``A(clip(x)) - A(0)`` plus
    the taper integral over ``[R, min(|x|, 2R)]`` by 16-node Gauss-Legendre.
    Otherwise a cumulative Simpson table of the cut-off drift, interpolated by
    cubic Hermite splines whose slopes are the drift itself.
    """
    fcut = cutoff(drift.scalar, radius)
    if drift.antiderivative is not None:
        anti = drift.antiderivative
        nodes, weights = np.polynomial.legendre.leggauss(16)

        def F(x):
            x = np.asarray(x, dtype=float)
            inner = anti(np.clip(x, -radius, radius)) - anti(0.0)
            end = np.clip(np.abs(x), radius, 2 * radius)
            half = 0.5 * (end - radius)
            mid = radius + half
            # Integral over [R, end] (sign handles the negative side).
            pts = mid[..., None] + half[..., None] * nodes
            sgn = np.sign(x)[..., None]
            tail = (half[..., None] * weights * fcut(sgn * pts)).sum(axis=-1)
            return inner + tail * np.sign(x)

        return F

    mesh = np.linspace(-2 * radius, 2 * radius, 2**14 + 1)
    vals = fcut(mesh)
    table = cumulative_simpson(vals, x=mesh, initial=0.0)
    spline = CubicHermiteSpline(mesh, table, vals)
    shift = float(spline(0.0))

    def F(x):
        x = np.asarray(x, dtype=float)
        inside = spline(np.clip(x, -2 * radius, 2 * radius)) - shift
        return inside

    return F


@dataclass
class FlowProblem:
    """``X_t = x + int f(X) dr + B_t`` with ``f`` cut off outside ``[-2R, 2R]``.

    ``s_values`` must be grid times; defaults are ``{0, T/4, T/2}`` and 33
    equispaced ``x`` values on ``[-2R, 2R]``.
    """

    drift: Drift
    noise: GridPath
    radius: float = 2.0
    s_values: Optional[np.ndarray] = None
    x_values: Optional[np.ndarray] = None
    antiderivative: Optional[Callable] = None
    f: Callable = field(init=False, repr=False)
    F: Callable = field(init=False, repr=False)

    def __post_init__(self):
        if self.noise.dim != 1:
            raise ValueError("the flow is implemented for d = 1")
        if not self.radius > 0:
            raise ValueError("cutoff radius must be positive")
        T = self.noise.grid.horizon
        if self.s_values is None:
            self.s_values = np.array([0.0, T / 4, T / 2])
        if self.x_values is None:
            self.x_values = np.linspace(-2 * self.radius, 2 * self.radius, 33)
        self.s_values = np.atleast_1d(np.asarray(self.s_values, dtype=float))
        self.x_values = np.atleast_1d(np.asarray(self.x_values, dtype=float))
        for s in self.s_values:
            self.s_index(s)
        self.f = cutoff(self.drift.scalar, self.radius)
        self.F = self.antiderivative or _cutoff_antiderivative(self.drift, self.radius)

    @property
    def grid(self) -> TimeGrid:
        return self.noise.grid

    @property
    def increments(self) -> np.ndarray:
        return self.noise.increments()[:, 0]

    def s_index(self, s: float) -> int:
        k = s / self.grid.h
        idx = int(round(k))
        if abs(k - idx) > 1e-9 or not 0 <= idx <= self.grid.steps:
            raise ValueError(f"s = {s} is not a grid time")
        return idx

    t_index = s_index


def march(f: Callable, dB: np.ndarray, h: float, x0, start: int = 0) -> np.ndarray:
    """Euler paths ``x <- x + f(x) h + dB_k`` from grid index ``start``.

    With one noise path ``dB`` is ``(n,)`` and ``x0`` any shape. With a batch
    ``dB`` is ``(N, n)`` and ``x0`` must have leading axis ``N``. Returns
    ``x0.shape + (n + 1 - start,)``: time is the last axis.
    """
    dB = np.asarray(dB, dtype=float)
    x = np.array(x0, dtype=float)
    n = dB.shape[-1]
    if dB.ndim == 2:
        if x.ndim == 0 or x.shape[0] != dB.shape[0]:
            raise ValueError("batched noise needs x0 with a leading path axis")
        dB = dB.reshape(dB.shape[:1] + (1,) * (x.ndim - 1) + dB.shape[1:])
    out = np.empty(x.shape + (n + 1 - start,))
    out[..., 0] = x
    for j, k in enumerate(range(start, n), start=1):
        x = x + f(x) * h + dB[..., k]
        out[..., j] = x
    if not np.all(np.isfinite(out)) or np.abs(out).max() > BLOW_UP:
        raise FlowError(f"flow blew up (|psi| > {BLOW_UP:g})")
    return out


@dataclass
class FlowField:
    """``psi(s, t, x)`` on the lattice; ``paths[i]`` is ``(n_x, n + 1 - s_idx)``."""

    problem: FlowProblem
    s_values: np.ndarray
    x_values: np.ndarray
    paths: list

    def _s(self, s: float) -> int:
        hits = np.flatnonzero(np.isclose(self.s_values, s, rtol=0, atol=1e-12))
        if not len(hits):
            raise KeyError(f"s = {s} is not on the flow lattice")
        return int(hits[0])

    def trajectory(self, s: float, x: float) -> np.ndarray:
        """``psi(s, t_k, x)`` for ``t_k >= s``; solved on demand off the x-lattice."""
        i = self._s(s)
        hits = np.flatnonzero(self.x_values == x)
        if len(hits):
            return self.paths[i][hits[0]]
        fp = self.problem
        return march(fp.f, fp.increments, fp.grid.h, float(x), fp.s_index(s))

    def psi(self, s: float, t: float, x: float) -> float:
        fp = self.problem
        k = fp.t_index(t) - fp.s_index(s)
        if k < 0:
            raise ValueError("need s <= t")
        return float(self.trajectory(s, x)[k])

    def rows(self):
        """``(s, t, x, psi)`` tuples over the whole lattice."""
        times = self.problem.grid.points
        for s, block in zip(self.s_values, self.paths):
            ts = times[self.problem.s_index(s):]
            for x, traj in zip(self.x_values, block):
                for t, v in zip(ts, traj):
                    yield s, t, x, v


def compute_flow(fp: FlowProblem) -> FlowField:
    paths = [
        march(fp.f, fp.increments, fp.grid.h, fp.x_values, fp.s_index(s)) for s in fp.s_values
    ]
    return FlowField(fp, fp.s_values.copy(), fp.x_values.copy(), paths)


# ---------------------------------------------------------------------------
# I and J


def gauss_legendre01(m: int = GL_NODES):
    nodes, weights = np.polynomial.legendre.leggauss(m)
    return 0.5 * (nodes + 1), 0.5 * weights


def _ij(f, F, psi_x, psi_y, dB, h, m):
    """``I^u, J^u`` at Gauss-Legendre nodes; arrays ``(m, ..., L)`` with time last."""
    u, w = gauss_legendre01(m)
    u_ = u.reshape((m,) + (1,) * psi_x.ndim)
    z = u_ * psi_x + (1 - u_) * psi_y
    fz = f(z)
    mix = u_ * f(psi_x) + (1 - u_) * f(psi_y)
    integrand = fz * mix
    drift = np.zeros_like(z)
    np.cumsum(0.5 * h * (integrand[..., 1:] + integrand[..., :-1]), axis=-1, out=drift[..., 1:])
    fzz = F(z)
    i_u = fzz - fzz[..., :1] - drift
    j_u = np.zeros_like(z)
    np.cumsum(fz[..., :-1] * dB, axis=-1, out=j_u[..., 1:])
    return u, w, i_u, j_u


@dataclass(frozen=True)
class IJField:
    s: float
    x: float
    y: float
    times: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    I_u: np.ndarray
    J_u: np.ndarray

    @property
    def I(self) -> np.ndarray:
        return self.weights @ self.I_u

    @property
    def J(self) -> np.ndarray:
        return self.weights @ self.J_u

    def at(self, t: float) -> tuple[float, float]:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9:
            raise ValueError(f"t = {t} is not a grid time in [s, T]")
        return float(self.I[k]), float(self.J[k])


def compute_IJ(fp: FlowProblem, fld: FlowField, s: float, x: float, y: float,
               m: int = GL_NODES) -> IJField:
    """``I^u`` with the trapezoid drift integral, ``J^u`` by left-point (Itô) sums."""
    i0 = fp.s_index(s)
    psi_x = fld.trajectory(s, x)
    psi_y = fld.trajectory(s, y)
    dB = fp.increments[i0:]
    u, w, i_u, j_u = _ij(fp.f, fp.F, psi_x, psi_y, dB, fp.grid.h, m)
    return IJField(s, x, y, fp.grid.points[i0:], u, w, i_u, j_u)


def derivative_by_identity(fp: FlowProblem, fld: FlowField, s: float, t: float, x: float,
                           m: int = GL_NODES) -> float:
    """``exp(2 (I(s,t,x,x) - J(s,t,x,x)))``."""
    i, j = compute_IJ(fp, fld, s, x, x, m).at(t)
    expo = 2 * (i - j)
    if expo > EXP_OVERFLOW:
        raise FlowError(f"derivative exponent {expo:.1f} overflows")
    return float(np.exp(expo))


def derivative_by_fd(fp: FlowProblem, fld: FlowField, s: float, t: float, x: float,
                     delta: float = 1e-4) -> float:
    """Central difference ``(psi(s,t,x+d) - psi(s,t,x-d)) / 2d`` with the same noise."""
    if delta < MIN_FD_STEP:
        raise ValueError(f"finite-difference step {delta:g} is below {MIN_FD_STEP:g}")
    return (fld.psi(s, t, x + delta) - fld.psi(s, t, x - delta)) / (2 * delta)


def ratio_identity_check(fp: FlowProblem, fld: FlowField, s: float, t: float,
                         x: float, y: float, m: int = GL_NODES) -> float:
    """``|psi(s,t,x) - psi(s,t,y) - (x - y) exp(2 (I - J))| / |x - y|``."""
    if x == y:
        raise ValueError("need x != y")
    i, j = compute_IJ(fp, fld, s, x, y, m).at(t)
    lhs = fld.psi(s, t, x) - fld.psi(s, t, y)
    return abs(lhs - (x - y) * np.exp(2 * (i - j))) / abs(x - y)


@dataclass(frozen=True)
class DerivativeRow:
    s: float
    t: float
    x: float
    identity: float
    fd: float

    @property
    def relerr(self) -> float:
        return abs(self.identity - self.fd) / abs(self.fd)


def derivative_table(fp: FlowProblem, fld: FlowField, t_values=None, delta: float = 1e-4,
                     m: int = GL_NODES) -> list[DerivativeRow]:
    """Both derivative estimates on the ``(s, t, x)`` lattice (``t`` defaults to s-values and T)."""
    T = fp.grid.horizon
    t_values = np.unique(np.append(fp.s_values, T)) if t_values is None else np.asarray(t_values)
    h = fp.grid.h
    rows = []
    for s, block in zip(fld.s_values, fld.paths):
        i0 = fp.s_index(s)
        xs = fld.x_values
        _, w, i_u, j_u = _ij(fp.f, fp.F, block, block, fp.increments[i0:], h, m)
        expo = 2 * (w @ (i_u - j_u).reshape(m, -1)).reshape(block.shape)
        plus = march(fp.f, fp.increments, h, xs + delta, i0)
        minus = march(fp.f, fp.increments, h, xs - delta, i0)
        for t in t_values:
            if t < s:
                continue
            k = fp.t_index(t) - i0
            if expo[:, k].max() > EXP_OVERFLOW:
                raise FlowError(f"derivative exponent {expo[:, k].max():.1f} overflows")
            fd = (plus[:, k] - minus[:, k]) / (2 * delta)
            for x, e, d in zip(xs, expo[:, k], fd):
                rows.append(DerivativeRow(float(s), float(t), float(x), float(np.exp(e)), float(d)))
    return rows


def monotone_on_lattice(fld: FlowField) -> bool:
    """``x -> psi(s, t, x)`` strictly increasing at every lattice ``(s, t)``."""
    order = np.argsort(fld.x_values)
    return all(np.all(np.diff(block[order], axis=0) > 0) for block in fld.paths)


# ---------------------------------------------------------------------------
# moment scaling


@dataclass(frozen=True)
class MomentReport:
    which: str
    p: float
    separations: np.ndarray
    moments: np.ndarray
    fit: OrderFit
    expected: float
    paths: int

    @property
    def slope(self) -> float:
        return self.fit.slope

    @property
    def passes(self) -> bool:
        return self.fit.passes(self.expected - 0.3)


MOMENT_KINDS = ("space", "time-s", "time-t", "J-field")


def _brownian_increments(grid: TimeGrid, paths: int, seed: int) -> np.ndarray:
    sd = np.sqrt(grid.h)
    return np.stack([path_rng(seed, i).standard_normal(grid.steps) * sd for i in range(paths)])


def moment_scaling(fp: FlowProblem, which: str, p: float = 4.0, paths: int = 1000,
                   seed: int = 42, separations=None, x: float = 0.0, y: float = 0.25,
                   m: int = GL_NODES) -> MomentReport:
    """Monte Carlo ``E|Delta|^p`` over a ladder of separations and its log-log slope.

    ``space``: ``psi(0,T,x)`` vs ``psi(0,T,x+d)``, expected slope ``p``.
    ``time-t``: ``psi(0,T/2,x)`` vs ``psi(0,T/2+d,x)``, expected ``p/2``.
    ``time-s``: ``psi(T/4,T,x)`` vs ``psi(T/4+d,T,x)``, expected ``p/2``.
    ``J-field``: ``J(0,T,x,y)`` vs ``J(0,T,x+d,y)``, expected ``p theta``.
    Noise realisations are fresh Brownian paths on ``fp.grid`` (path ``i`` from
    stream ``(seed, i)``); ``fp.noise`` is not used.
    """
    if which not in MOMENT_KINDS:
        raise ValueError(f"unknown moment kind {which!r}; expected one of {MOMENT_KINDS}")
    if paths < 1000:
        raise ValueError(f"moment scaling needs at least 1000 paths, got {paths}")
    grid = fp.grid
    n, h, T = grid.steps, grid.h, grid.horizon
    theta = fp.drift.theta
    if which == "J-field" and p < 2 / theta:
        raise ValueError(f"J-field moments need p >= 2/theta = {2 / theta:g}")
    if which != "J-field" and p < 2:
        raise ValueError("flow moments need p >= 2")
    if separations is None:
        if which in ("space", "J-field"):
            separations = 0.5 ** np.arange(2, 8)
        else:
            separations = h * 2 ** np.arange(0, 6)
    seps = np.asarray(separations, dtype=float)
    if len(seps) < 4:
        raise ValueError(f"moment ladder needs at least 4 separations, got {len(seps)}")
    dB = _brownian_increments(grid, paths, seed)
    f = fp.f

    if which == "space":
        starts = np.concatenate([[x], x + seps])
        end = march(f, dB, h, np.broadcast_to(starts, (paths, len(starts))))[..., -1]
        diffs = end[:, 1:] - end[:, :1]
        expected = p
    elif which == "time-t":
        path = march(f, dB, h, np.full(paths, x))
        k0 = n // 2
        ks = k0 + np.rint(seps / h).astype(int)
        if ks.max() > n:
            raise ValueError("time ladder runs past the horizon")
        diffs = path[:, ks] - path[:, k0:k0 + 1]
        expected = p / 2
    elif which == "time-s":
        k0 = n // 4
        ks = np.concatenate([[k0], k0 + np.rint(seps / h).astype(int)])
        ends = np.stack([march(f, dB, h, np.full(paths, x), start=k)[:, -1] for k in ks], axis=1)
        diffs = ends[:, 1:] - ends[:, :1]
        expected = p / 2
    else:
        base = march(f, dB, h, np.full(paths, x))
        other = march(f, dB, h, np.full(paths, y))
        u, w = gauss_legendre01(m)

        def j_end(px):
            u_ = u[:, None, None]
            fz = f(u_ * px + (1 - u_) * other)
            return w @ np.einsum("mkn,kn->mk", fz[..., :-1], dB)

        j0 = j_end(base)
        diffs = np.stack([j_end(march(f, dB, h, np.full(paths, x + d))) - j0 for d in seps], axis=1)
        expected = p * theta
    moments = np.mean(np.abs(diffs) ** p, axis=0)
    fit = fit_order(seps, moments)
    return MomentReport(which, p, seps, moments, fit, expected, paths)


# ---------------------------------------------------------------------------
# uniqueness


def replay_from_every_time(fp: FlowProblem, candidate: np.ndarray) -> np.ndarray:
    """``psi(r_k, T, X_{r_k})`` for every grid ``k``: all restarts marched together."""
    x = np.asarray(candidate, dtype=float).reshape(-1)
    n = fp.grid.steps
    if len(x) != n + 1:
        raise ValueError(f"candidate needs {n + 1} grid values")
    h = fp.grid.h
    dB = fp.increments
    state = x.copy()
    for k in range(n):
        # Restarts at r_j with j <= k have started; each evolves from its own start.
        state[: k + 1] = state[: k + 1] + fp.f(state[: k + 1]) * h + dB[k]
    return state


def uniqueness_residual(fp: FlowProblem, candidate: GridPath, x: float | None = None) -> float:
    """``sup_r |L_r - L_0|`` with ``L_r = psi(r, T, X_r) - psi(0, T, x)``."""
    values = candidate.values[:, 0]
    x = values[0] if x is None else x
    end = replay_from_every_time(fp, values)
    ref = march(fp.f, fp.increments, fp.grid.h, float(x))[-1]
    L = end - ref
    return float(np.abs(L - L[0]).max())


def perturbed_candidate(fp: FlowProblem, x: float, amplitude: float = 0.1) -> GridPath:
    """The flow solution from ``x`` plus ``amplitude * sin(pi t / T)``."""
    t = fp.grid.points
    sol = march(fp.f, fp.increments, fp.grid.h, float(x))
    return GridPath(fp.grid, sol + amplitude * np.sin(np.pi * t / fp.grid.horizon))


@dataclass
class ContrastReport:
    theta: float
    c: float
    noiseless_residuals: tuple
    noiseless_gap: float
    steps: tuple
    distances: tuple
    picard_gap: tuple
    fit: Optional[OrderFit]

    @property
    def ratio(self) -> float:
        """Inter-scheme distance at the finest grid over the coarsest."""
        return self.distances[-1] / self.distances[0] if self.distances[0] > 0 else 0.0


def _trapezoid_fixed_point(f, dB, h, init, tol=1e-12, max_iter=500):
    """Iterate ``Y <- x0 + trapezoid int f(Y) + B`` from ``init``."""
    w = np.concatenate([[0.0], np.cumsum(dB)])
    y = np.array(init, dtype=float)
    x0 = y[0]
    for _ in range(max_iter):
        fy = f(y)
        drift = np.concatenate([[0.0], np.cumsum(0.5 * h * (fy[1:] + fy[:-1]))])
        new = x0 + drift + w
        done = np.abs(new - y).max() < tol
        y = new
        if done:
            break
    return y


def nonuniqueness_contrast(c: float = 1.0, theta: float = 0.5, horizon: float = 1.0,
                           steps=(512, 1024, 2048, 4096), seed: int = 42,
                           paths: int = 1) -> ContrastReport:
    """Two solutions without noise, one limit with noise, for ``f(x) = c |x|^theta``, ``x0 = 0``.

    Without noise both ``0`` and ``((1 - theta) c t)^{1/(1-theta)}`` solve the
    integral equation on the grid (trapezoid residuals reported). With noise,
    the Euler path and the trapezoid fixed point (iterated from ``B`` and from
    the noiseless envelope plus ``B``) are compared on nested grids; the mean
    sup distance over ``paths`` noise realisations is reported per grid.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")

    def f(x):
        return c * np.abs(x) ** theta

    nmax = max(steps)
    fine = TimeGrid(horizon, nmax)
    t = fine.points
    envelope = (max((1 - theta) * c, 0.0) * t) ** (1 / (1 - theta))
    residuals = []
    for cand in (np.zeros_like(t), envelope):
        fy = f(cand)
        drift = np.concatenate([[0.0], np.cumsum(0.5 * fine.h * (fy[1:] + fy[:-1]))])
        residuals.append(float(np.abs(cand - drift).max()))
    gap = float(np.abs(envelope).max())

    distances, picard_gap = [], []
    for n in steps:
        if nmax % n:
            raise ValueError("steps must divide the finest grid")
        dists, gaps = [], []
        for i in range(paths):
            w = np.concatenate([[0.0], np.cumsum(path_rng(seed, i).standard_normal(nmax))]) * np.sqrt(fine.h)
            wc = w[:: nmax // n]
            dB = np.diff(wc)
            h = horizon / n
            euler = march(f, dB, h, 0.0)
            env = envelope[:: nmax // n]
            p1 = _trapezoid_fixed_point(f, dB, h, wc)
            p2 = _trapezoid_fixed_point(f, dB, h, env + wc)
            dists.append(float(np.abs(euler - p1).max()))
            gaps.append(float(np.abs(p1 - p2).max()))
        distances.append(float(np.mean(dists)))
        picard_gap.append(float(max(gaps)))
    fit = None
    if all(d > 0 for d in distances):
        fit = fit_order(horizon / np.asarray(steps, dtype=float), distances)
    return ContrastReport(theta, c, tuple(residuals), gap, tuple(steps), tuple(distances),
                          tuple(picard_gap), fit)
