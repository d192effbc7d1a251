"""Rough differential equations ``dX = f(X) dt + sigma(X) dB``.

Two solvers share every problem: a one-step second-order (Davie) scheme and
the global fixed-point iteration of the map

    Psi(Y, Y')(t) = (x0 + int_0^t f(Y) dr + int_0^t sigma(Y) dB, sigma(Y_t)),

which serve as oracles for each other.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .controlled import (
    ControlledPath,
    _compensated_terms,
    compose_smooth,
    controlled_norm,
    rough_integral_path,
)
from .fields import Drift, VectorField
from .grid_path import GridPath
from .rough_lift import GEOMETRIC, ITO, RoughPath

BLOW_UP = 1e8


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class RdeProblem:
    x0: np.ndarray
    drift: Drift
    sigma: VectorField
    noise: RoughPath

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.noise.dim,):
            raise ValueError(f"x0 must have shape ({self.noise.dim},), got {x0.shape}")
        object.__setattr__(self, "x0", x0)

    @property
    def dim(self) -> int:
        return self.noise.dim

    def with_noise(self, noise: RoughPath) -> "RdeProblem":
        return RdeProblem(self.x0, self.drift, self.sigma, noise)

    def with_drift(self, drift: Drift) -> "RdeProblem":
        return RdeProblem(self.x0, drift, self.sigma, self.noise)

    def check_assumptions(self, points: np.ndarray) -> dict:
        """Evaluate boundedness of ``f`` and the ellipticity of ``sigma`` on ``points``."""
        points = np.atleast_2d(points)
        s = self.sigma.sigma(points)
        sym = 0.5 * (s + np.swapaxes(s, -1, -2))
        min_eig = float(np.linalg.eigvalsh(sym).min())
        return {
            "sup_f": float(np.abs(self.drift(points)).max()),
            "sup_sigma": float(np.linalg.norm(s, axis=(-2, -1)).max()),
            "min_sym_eigenvalue": min_eig,
            "elliptic": min_eig >= self.sigma.lam > 0,
        }


@dataclass
class RdeSolution:
    X: GridPath
    Xprime: np.ndarray
    solver: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = True

    @property
    def residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0

    def controlled(self, noise: RoughPath) -> ControlledPath:
        return ControlledPath(noise, self.X.values, self.Xprime)


def euler_davie_step(x, f, sigma: VectorField, dB, dBB, h):
    """``x + f(x) h + sigma(x) dB + (D sigma sigma)(x) : dBB``."""
    x = np.asarray(x, dtype=float)
    return (
        x
        + f(x) * h
        + sigma.sigma(x) @ dB
        + np.einsum("jab,ba->j", sigma.dsigma_sigma(x), dBB)
    )


def solve_euler(prob: RdeProblem) -> RdeSolution:
    noise = prob.noise
    n = noise.steps
    h = noise.grid.h
    dB = noise.base.increments()
    xs = np.empty((n + 1, prob.dim))
    xs[0] = prob.x0
    for k in range(n):
        nxt = euler_davie_step(xs[k], prob.drift, prob.sigma, dB[k], noise.level2[k], h)
        if not np.all(np.isfinite(nxt)) or np.abs(nxt).max() > BLOW_UP:
            raise SolverError(f"Euler scheme blew up at step {k + 1} (|X| > {BLOW_UP:g})")
        xs[k + 1] = nxt
    return RdeSolution(GridPath(noise.grid, xs), prob.sigma.sigma(xs), "euler")


def cumulative_trapezoid(values: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(values)
    np.cumsum(0.5 * h * (values[1:] + values[:-1]), axis=0, out=out[1:])
    return out


def apply_psi(cp: ControlledPath, prob: RdeProblem) -> ControlledPath:
    """One application of the fixed-point map; drift by the trapezoid rule."""
    noise = prob.noise
    y = cp.values
    drift = cumulative_trapezoid(prob.drift(y), noise.grid.h)
    integrand = compose_smooth(prob.sigma.sigma, prob.sigma.dsigma, cp)
    rough = rough_integral_path(integrand, noise)
    return ControlledPath(noise, prob.x0 + drift + rough, prob.sigma.sigma(y), cp.alpha)


def kappa(prob: RdeProblem) -> ControlledPath:
    """``(x0 + sigma(x0) B_{0,.}, sigma(x0))``: the centre of the invariant ball."""
    noise = prob.noise
    s0 = prob.sigma.sigma(prob.x0)
    w = noise.base.values - noise.base.values[0]
    n = noise.steps
    return ControlledPath(noise, prob.x0 + w @ s0.T, np.broadcast_to(s0, (n + 1,) + s0.shape))


def solve_picard(prob: RdeProblem, tol: float = 1e-10, max_iter: int = 200,
                 init: ControlledPath | None = None) -> RdeSolution:
    """Iterate Psi from ``init`` (default ``kappa(x0)``) until the sup change is below ``tol``.

    Once the residual grows, iterates are damped: ``Y <- (Y + Psi(Y)) / 2``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    cp = kappa(prob) if init is None else init
    residuals: list[float] = []
    damped = False
    for it in range(1, max_iter + 1):
        new = apply_psi(cp, prob)
        res = float(np.abs(new.values - cp.values).max())
        if not np.isfinite(res) or np.abs(new.values).max() > BLOW_UP:
            raise SolverError(f"Picard iteration blew up at iteration {it}")
        if residuals and res > residuals[-1]:
            damped = True
        residuals.append(res)
        if damped:
            new = cp.scale(0.5) + new.scale(0.5)
        cp = new
        if res < tol:
            break
    converged = residuals[-1] < tol
    if not converged:
        warnings.warn(
            f"Picard iteration did not converge in {max_iter} iterations "
            f"(last residual {residuals[-1]:.3e})", RuntimeWarning, stacklevel=2,
        )
    xs = cp.values
    return RdeSolution(GridPath(prob.noise.grid, xs), prob.sigma.sigma(xs), "picard",
                       iterations=len(residuals), residuals=residuals, converged=converged)


def solve(prob: RdeProblem, solver: str = "euler", **kw) -> RdeSolution:
    if solver == "euler":
        return solve_euler(prob)
    if solver == "picard":
        return solve_picard(prob, **kw)
    raise ValueError(f"unknown solver {solver!r}")


# ---------------------------------------------------------------------------
# Existence check: invariance of a small controlled ball under Psi


def ball_elements(prob: RdeProblem, gamma: float, count: int = 20, seed: int = 0,
                  max_norm: float = 0.95) -> list[ControlledPath]:
    """Elements of ``K = {Y_0 = x0, Y'_0 = sigma(x0), ||(Y, Y')||_{B, gamma} <= 1}``.

    Each is ``kappa(x0)`` plus smooth perturbations of ``Y`` and ``Y'``
    vanishing at 0, rescaled to a norm drawn from ``[max_norm / 2, max_norm]``.
    """
    rng = np.random.default_rng(seed)
    centre = kappa(prob)
    noise = prob.noise
    d = noise.dim
    t = noise.grid.points / noise.grid.horizon
    out = []
    for _ in range(count):
        freq = rng.uniform(0.5, 3.0, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        bumps = [np.sin(2 * np.pi * f * t + p) - np.sin(p) for f, p in zip(freq, phase)]
        dy = np.outer(bumps[0], rng.standard_normal(d))
        dyp = bumps[1][:, None, None] * rng.standard_normal((d, d))
        pert = ControlledPath(noise, dy, np.zeros(dy.shape + (d,)), centre.alpha)
        pert = pert + ControlledPath(noise, np.zeros_like(dy), dyp, centre.alpha)
        norm = controlled_norm(pert, gamma).total
        target = rng.uniform(0.5, 1.0) * max_norm
        out.append(centre + pert.scale(target / norm))
    return out


@dataclass(frozen=True)
class BallReport:
    margin: float
    worst_norm: float
    horizon: float
    norms: tuple

    @property
    def inside(self) -> bool:
        return self.margin > 0


def check_schauder_ball(prob: RdeProblem, gamma: float, t_small: float,
                        elements: list[ControlledPath] | None = None,
                        count: int = 20, seed: int = 0) -> BallReport:
    """Apply Psi on ``[0, t_small]`` to ball elements and report ``1 - max ||Psi(Y)||``.

    ``elements`` built on a longer horizon are restricted to ``[0, t_small]``;
    restriction keeps them in the ball, so margins can be compared across
    horizons on the same elements.
    """
    h = prob.noise.grid.h
    steps = int(round(t_small / h))
    if steps < 2 or steps > prob.noise.steps:
        raise ValueError(f"t_small={t_small} must span 2..{prob.noise.steps} grid steps")
    small = prob.with_noise(prob.noise.restrict(steps))
    if elements is None:
        elements = ball_elements(small, gamma, count, seed)
    norms = []
    for y in elements:
        y = ControlledPath(small.noise, y.values[: steps + 1], y.derivative[: steps + 1], y.alpha)
        norms.append(controlled_norm(apply_psi(y, small), gamma).total)
    worst = max(norms)
    return BallReport(1.0 - worst, worst, steps * h, tuple(norms))


# ---------------------------------------------------------------------------
# The solution as a rough path, and the identities it satisfies


def _eta(sigma: VectorField, d: int):
    """``eta(x) y = x (x) sigma(x) y`` flattened to ``(..., d*d, d)`` and its derivative."""
    def eta(x):
        s = sigma.sigma(x)
        return np.einsum("...i,...ja->...ija", x, s).reshape(x.shape[:-1] + (d * d, d))

    def deta(x):
        s = sigma.sigma(x)
        ds = sigma.dsigma(x)
        eye = np.eye(d)
        out = np.einsum("il,...ja->...ijal", eye, s) + np.einsum("...i,...jal->...ijal", x, ds)
        return out.reshape(x.shape[:-1] + (d * d, d, d))

    return eta, deta


def lift_solution(sol: RdeSolution, prob: RdeProblem) -> RoughPath:
    """Second level of the solution on each grid interval ``[u, v]``:

    ``int (X_r - X_u) (x) f(X_r) dr + int eta(X) dB - X_u (x) int sigma(X) dB``

    with the Riemann part by the trapezoid rule and both rough integrals as
    one-step compensated terms.
    """
    noise = prob.noise
    d = noise.dim
    x = sol.X.values
    h = noise.grid.h
    cp = ControlledPath(noise, x, sol.Xprime)
    eta, deta = _eta(prob.sigma, d)
    eta_terms = _compensated_terms(compose_smooth(eta, deta, cp), noise).reshape(-1, d, d)
    sig_terms = _compensated_terms(compose_smooth(prob.sigma.sigma, prob.sigma.dsigma, cp), noise)
    dx = np.diff(x, axis=0)
    riemann = 0.5 * h * np.einsum("ki,kj->kij", dx, prob.drift(x[1:]))
    level2 = riemann + eta_terms - np.einsum("ki,kj->kij", x[:-1], sig_terms)
    return RoughPath(sol.X, level2, GEOMETRIC if noise.flavor == GEOMETRIC else ITO, noise.alpha)


def check_rough_ito(F, DF, sol: RdeSolution, prob: RdeProblem,
                    lifted: RoughPath | None = None) -> float:
    """Sup over t of ``|int F(X) dX - int F(X) f(X) dr - int F(X) sigma(X) dB|``.

    ``F`` maps ``(..., d)`` to ``(..., d, d)`` and ``DF`` to ``(..., d, d, d)``
    (last axis the derivative direction).
    """
    noise = prob.noise
    lifted = lift_solution(sol, prob) if lifted is None else lifted
    x = sol.X.values
    fx, dfx = F(x), DF(x)
    lhs = rough_integral_path(ControlledPath(lifted, fx, dfx), lifted)

    s = prob.sigma.sigma(x)
    dss = prob.sigma.dsigma_sigma(x)
    fs = np.einsum("kil,kla->kia", fx, s)
    fs_prime = np.einsum("kil,klab->kiab", fx, dss) + np.einsum(
        "kiml,kma,klb->kiab", dfx, s, s
    )
    rough = rough_integral_path(ControlledPath(noise, fs, fs_prime), noise)
    riemann = cumulative_trapezoid(np.einsum("kia,ka->ki", fx, prob.drift(x)), noise.grid.h)
    return float(np.linalg.norm(lhs - riemann - rough, axis=1).max())


def check_integration_by_parts(G, DG, D2G, rp: RoughPath) -> float:
    """``|G(W_T) - G(W_0) - int DG(W) dW|`` with integrand ``(DG(W), D^2 G(W))``.

    ``G: (..., d) -> (..., k)``, ``DG -> (..., k, d)``, ``D2G -> (..., k, d, d)``.
    """
    if rp.flavor != GEOMETRIC:
        raise ValueError("integration by parts holds for geometric lifts only")
    w = rp.base.values
    integral = rough_integral_path(ControlledPath(rp, DG(w), D2G(w)), rp)[-1]
    g = np.atleast_1d(G(w[-1])) - np.atleast_1d(G(w[0]))
    return float(np.linalg.norm(g - integral))
