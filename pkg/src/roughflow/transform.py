"""The diffeomorphism ``G`` with ``DG = sigma^{-1}`` that turns ``sigma dB`` into ``dB``.

Under ellipticity and a conservative ``sigma^{-1}``, ``Z = G(X)`` solves

    Z_t = G(x0) + int_0^t f~(Z_r) dr + B_t,    f~(z) = sigma(x)^{-1} f(x),  x = G^{-1}(z).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Drift, VectorField
from .grid_path import GridPath
from .rde import RdeProblem, RdeSolution, cumulative_trapezoid
from .rough_lift import GEOMETRIC

QUAD_TOL = 1e-12
NEWTON_TOL = 1e-12
NEWTON_CAP = 100


class TransformError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# assumption checks


@dataclass(frozen=True)
class EllipticityReport:
    min_quotient: float
    declared: float
    mixed_sign: bool

    @property
    def passes(self) -> bool:
        # a relative margin of a few ulps absorbs rounding in the quotient
        return not self.mixed_sign and self.min_quotient >= self.declared * (1 - 1e-12)


def check_ellipticity(vf: VectorField, points, directions=None, seed: int = 0) -> EllipticityReport:
    """Minimum of ``|v^T sigma(x) v| / |v|^2`` over points and probe directions.

    ``directions`` defaults to the coordinate axes, the diagonals and 16 random
    unit vectors. A quadratic form taking both signs is reported as failing.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0:
        raise ValueError("need at least one probe point")
    d = points.shape[1]
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = np.concatenate([np.eye(d), np.ones((1, d)), rng.standard_normal((16, d))])
        if d >= 2:
            alt = np.ones(d)
            alt[1::2] = -1
            directions = np.concatenate([directions, alt[None]])
    v = np.atleast_2d(np.asarray(directions, dtype=float))
    s = vf.sigma(points)
    q = np.einsum("va,kab,vb->kv", v, s, v) / np.einsum("va,va->v", v, v)
    mixed = bool(q.max() > 0 and q.min() < 0)
    return EllipticityReport(float(np.abs(q).min()), vf.lam, mixed)


def square_loops(centres, sides) -> list[np.ndarray]:
    """Closed squares in the ``(x1, x2)`` plane (other coordinates from the centre)."""
    loops = []
    for c in np.atleast_2d(np.asarray(centres, dtype=float)):
        for a in np.atleast_1d(sides):
            corners = np.repeat(c[None], 5, axis=0)
            offs = 0.5 * a * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1], [-1, -1]])
            corners[:, :2] += offs
            loops.append(corners)
    return loops


def _default_loops(d: int) -> list[np.ndarray]:
    centres = np.zeros((3, d))
    centres[1, :2] = [0.7, -0.4]
    centres[2, :2] = [-1.3, 2.1]
    return square_loops(centres, [0.5, 1.0])


def loop_circulation(vf: VectorField, loop, segments: int) -> np.ndarray:
    """Trapezoid path integral of ``sigma^{-1} dx`` around a closed polyline."""
    loop = np.asarray(loop, dtype=float)
    total = np.zeros(loop.shape[1])
    t = np.linspace(0.0, 1.0, segments + 1)
    w = np.full(segments + 1, 1.0 / segments)
    w[[0, -1]] *= 0.5
    for a, b in zip(loop[:-1], loop[1:]):
        pts = a + t[:, None] * (b - a)
        vals = np.linalg.solve(vf.sigma(pts), np.broadcast_to(b - a, pts.shape)[..., None])[..., 0]
        total += w @ vals
    return total


@dataclass(frozen=True)
class CirculationReport:
    max_circulation: float
    coarse_circulation: float
    segments: int
    tol: float

    @property
    def passes(self) -> bool:
        return self.max_circulation <= self.tol

    @property
    def refinement_ratio(self) -> float:
        """Coarse over fine circulation; about 4 for a gradient field, about 1 otherwise."""
        if self.max_circulation == 0:
            return np.inf
        return self.coarse_circulation / self.max_circulation


def check_conservative(vf: VectorField, loops=None, dim: int | None = None,
                       segments: int = 8192, tol: float = 1e-8) -> CirculationReport:
    """Max ``|circulation|`` of ``sigma^{-1}`` over closed loops, at two resolutions.

    For ``d = 1`` every field is conservative and the report is zero.
    """
    if loops is None:
        if dim is None:
            raise ValueError("pass loops or dim")
        if dim == 1:
            return CirculationReport(0.0, 0.0, segments, tol)
        loops = _default_loops(dim)
    loops = [np.asarray(lp, dtype=float) for lp in loops]
    d = loops[0].shape[1]
    if d == 1:
        return CirculationReport(0.0, 0.0, segments, tol)
    for lp in loops:
        if not np.allclose(lp[0], lp[-1]):
            raise ValueError("loops must be closed (first vertex == last vertex)")
    fine = max(float(np.linalg.norm(loop_circulation(vf, lp, segments))) for lp in loops)
    coarse = max(float(np.linalg.norm(loop_circulation(vf, lp, segments // 2))) for lp in loops)
    return CirculationReport(fine, coarse, segments, tol)


# ---------------------------------------------------------------------------
# G by quadrature


def _apply_inverse(s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``s^{-1} v`` over leading axes; plain division when ``d = 1``."""
    if s.shape[-1] == 1:
        return v / s[..., 0]
    return np.linalg.solve(s, v[..., None])[..., 0]


def _simpson_segment(vf: VectorField, starts: np.ndarray, ends: np.ndarray,
                     tol: float = QUAD_TOL, max_intervals: int = 2**16) -> np.ndarray:
    """``int sigma^{-1}(p) dp`` along straight segments, composite Simpson with doubling.

    Each doubling evaluates only the new midpoints: ``S_2m = (4 T_2m - T_m) / 3``
    from nested trapezoid sums. Stops once the Richardson error estimate
    ``|S_2m - S_m| / 15`` is below ``tol`` (relative to ``max(1, |S|)``).
    """
    delta = ends - starts

    def integrand(t):
        pts = starts[:, None, :] + t[None, :, None] * delta[:, None, :]
        return _apply_inverse(vf.sigma(pts), np.broadcast_to(delta[:, None, :], pts.shape))

    ends_vals = integrand(np.array([0.0, 1.0]))
    total = 0.5 * ends_vals.sum(axis=1)  # trapezoid sum without the 1/m factor
    m = 1
    trap = total.copy()
    simpson = None
    while m < max_intervals:
        mids = (np.arange(m) + 0.5) / m
        total = total + integrand(mids).sum(axis=1)
        m *= 2
        new_trap = total / m
        new_simpson = (4 * new_trap - trap) / 3
        trap = new_trap
        if simpson is not None and m >= 16:
            change = np.abs(new_simpson - simpson).max(initial=0.0) / 15
            if change <= tol * max(1.0, np.abs(new_simpson).max(initial=0.0)):
                return new_simpson
        simpson = new_simpson
    raise TransformError(f"Simpson quadrature did not reach {tol:g} with {max_intervals} intervals")


@dataclass(frozen=True)
class Diffeo:
    """``G`` with ``G(0) = 0``, ``DG = sigma^{-1}`` and a numerical inverse."""

    field: VectorField
    dim: int
    lam_prime: float

    def forward(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        flat = np.atleast_2d(z.reshape(-1, self.dim))
        out = np.zeros_like(flat)
        start = np.zeros_like(flat)
        # Axis-aligned polyline 0 -> (z1, 0, ..) -> (z1, z2, 0, ..) -> z.
        for k in range(self.dim):
            end = start.copy()
            end[:, k] = flat[:, k]
            moving = flat[:, k] != 0
            if moving.any():
                out[moving] += _simpson_segment(self.field, start[moving], end[moving])
            start = end
        return out.reshape(z.shape)

    __call__ = forward

    def derivative(self, z) -> np.ndarray:
        return np.linalg.inv(self.field.sigma(np.asarray(z, dtype=float)))

    def inverse(self, z) -> np.ndarray:
        return invert_G(self, z)


def build_G(vf: VectorField, dim: int = 1, loops=None, probes=None) -> Diffeo:
    """Check ellipticity (and conservativity for ``d >= 2``) and build ``G``."""
    if not vf.lam > 0:
        raise TransformError(f"{vf.name}: no ellipticity constant declared (lam = {vf.lam})")
    if vf.sup_sigma is None:
        raise TransformError(f"{vf.name}: sup norm of sigma is needed for the growth bound")
    if probes is None:
        probes = np.random.default_rng(0).uniform(-5, 5, size=(256, dim))
    ell = check_ellipticity(vf, probes)
    if not ell.passes:
        raise TransformError(
            f"{vf.name}: ellipticity fails (min quotient {ell.min_quotient:.3g} < {vf.lam:g}"
            f"{', mixed sign' if ell.mixed_sign else ''})"
        )
    if dim >= 2:
        circ = check_conservative(vf, loops, dim=dim)
        if not circ.passes:
            raise TransformError(
                f"{vf.name}: sigma^-1 is not conservative (circulation {circ.max_circulation:.3g})"
            )
    return Diffeo(vf, dim, vf.lam / vf.sup_sigma**2)


# ---------------------------------------------------------------------------
# inverse


def _bisect(diffeo: Diffeo, z: float) -> float:
    bound = abs(z) / diffeo.lam_prime + 1.0
    lo, hi = -bound, bound
    g_lo = float(diffeo.forward(np.array([lo]))[0]) - z
    if g_lo > 0:  # decreasing G
        lo, hi = hi, lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = float(diffeo.forward(np.array([mid]))[0]) - z
        if abs(g) < NEWTON_TOL * max(1.0, abs(z)) or abs(hi - lo) < 1e-15 * max(1.0, bound):
            return mid
        if g < 0:
            lo = mid
        else:
            hi = mid
    raise TransformError(f"bisection for G^-1({z}) did not converge")


def invert_G(diffeo: Diffeo, z, start=None) -> np.ndarray:
    """Newton ``x <- x - sigma(x) (G(x) - z)`` from ``x = z``, vectorised over points.

    ``start`` overrides the initial guess (a warm start along a trajectory).

    Points whose residual stops shrinking switch to bisection (``d = 1``) or
    to a damped step (``d >= 2``) inside the growth-bound bracket
    ``|x| <= |z - G(0)| / lambda' + 1``.
    """
    z = np.asarray(z, dtype=float)
    d = diffeo.dim
    zf = np.atleast_2d(z.reshape(-1, d)).copy()
    x = zf.copy() if start is None else np.atleast_2d(np.asarray(start, dtype=float).reshape(-1, d)).copy()
    bound = np.linalg.norm(zf, axis=1) / diffeo.lam_prime + 1.0
    tol = NEWTON_TOL * np.maximum(1.0, np.linalg.norm(zf, axis=1))
    res = diffeo.forward(x) - zf
    rnorm = np.linalg.norm(res, axis=1)
    active = rnorm >= tol
    for _ in range(NEWTON_CAP):
        if not active.any():
            return x.reshape(z.shape)
        idx = np.flatnonzero(active)
        step = np.einsum("kab,kb->ka", diffeo.field.sigma(x[idx]), res[idx])
        cand = x[idx] - step
        norms = np.linalg.norm(cand, axis=1)
        over = norms > bound[idx]
        cand[over] *= (bound[idx][over] / norms[over])[:, None]
        cres = diffeo.forward(cand) - zf[idx]
        cnorm = np.linalg.norm(cres, axis=1)
        stalled = cnorm >= rnorm[idx]
        if stalled.any():
            if d == 1:
                for j in idx[stalled]:
                    x[j, 0] = _bisect(diffeo, float(zf[j, 0]))
                    res[j] = diffeo.forward(x[j : j + 1])[0] - zf[j]
                    rnorm[j] = 0.0 if abs(res[j, 0]) < tol[j] else abs(res[j, 0])
            else:
                for j, c, s in zip(idx[stalled], cand[stalled], step[stalled]):
                    t = 0.5
                    while t > 1e-6:
                        c = x[j] - t * s
                        r = diffeo.forward(c[None])[0] - zf[j]
                        if np.linalg.norm(r) < rnorm[j]:
                            x[j], res[j], rnorm[j] = c, r, np.linalg.norm(r)
                            break
                        t *= 0.5
        ok = idx[~stalled]
        x[ok], res[ok], rnorm[ok] = cand[~stalled], cres[~stalled], cnorm[~stalled]
        active = rnorm >= tol
    if active.any():
        worst = float(rnorm[active].max())
        raise TransformError(
            f"G inversion did not converge in {NEWTON_CAP} iterations (residual {worst:.3e}); "
            "ellipticity or conservativity is probably violated"
        )
    return x.reshape(z.shape)


def reduce_drift(diffeo: Diffeo, drift: Drift) -> Drift:
    """``f~(z) = sigma(x)^{-1} f(x)`` at ``x = G^{-1}(z)``."""
    field = diffeo.field

    def f_tilde(z):
        x = invert_G(diffeo, z)
        return _apply_inverse(field.sigma(x), drift(x))

    sup = None
    if drift.sup is not None:
        sup = drift.sup / field.lam
    return Drift(f=f_tilde, theta=drift.theta, sup=sup, name=f"reduced-{drift.name}")


# ---------------------------------------------------------------------------
# equivalence of the two formulations


@dataclass(frozen=True)
class TransformReport:
    residual: float
    profile: np.ndarray
    converse: float
    roundtrip: float


def solve_unit_sigma(diffeo: Diffeo, drift: Drift, x0, noise) -> GridPath:
    """``Z_{k+1} = Z_k + f~(Z_k) h + B_{k,k+1}`` from ``Z_0 = G(x0)``.

    ``f~`` is evaluated as in :func:`reduce_drift`, with each inversion
    warm-started at the previous state.
    """
    dB = noise.base.increments()
    h = noise.grid.h
    sig = diffeo.field.sigma
    z = np.empty((noise.steps + 1, noise.dim))
    x = np.asarray(x0, dtype=float)[None]
    z[0] = diffeo.forward(x)[0]
    for k in range(noise.steps):
        x = invert_G(diffeo, z[k], start=x).reshape(1, -1)
        z[k + 1] = z[k] + _apply_inverse(sig(x), drift(x))[0] * h + dB[k]
    return GridPath(noise.grid, z)


def verify_transform_equivalence(prob: RdeProblem, sol: RdeSolution,
                                 diffeo: Diffeo | None = None) -> TransformReport:
    """Residual of ``Z = G(X)`` in the unit-diffusion equation, and the converse.

    ``residual`` is ``sup_t |Z_t - G(x0) - int_0^t f~(Z) dr - B_{0,t}|`` with
    the drift integral by the trapezoid rule; ``converse`` is
    ``|G^{-1}(Z~) - X|_inf`` where ``Z~`` solves the unit-diffusion equation
    directly; ``roundtrip`` is ``|G^{-1}(G(X)) - X|_inf``.
    """
    noise = prob.noise
    if noise.flavor != GEOMETRIC:
        raise ValueError("the transform holds for geometric noise lifts")
    diffeo = build_G(prob.sigma, prob.dim) if diffeo is None else diffeo
    x = sol.X.values
    z = diffeo.forward(x)
    f_tilde = reduce_drift(diffeo, prob.drift)
    w = noise.base.values - noise.base.values[0]
    z0 = diffeo.forward(prob.x0)
    drift = cumulative_trapezoid(f_tilde(z), noise.grid.h)
    profile = np.linalg.norm(z - z0 - drift - w, axis=1)
    back = invert_G(diffeo, z)
    z_direct = solve_unit_sigma(diffeo, prob.drift, prob.x0, noise)
    converse = float(np.abs(invert_G(diffeo, z_direct.values) - x).max())
    return TransformReport(float(profile.max()), profile, converse, float(np.abs(back - x).max()))


def growth_margin(diffeo: Diffeo, probes) -> float:
    """``min (|G(v) - G(0)| - lambda' |v|)`` over probes; non-negative when the bound holds."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    g = diffeo.forward(probes)
    return float((np.linalg.norm(g, axis=1) - diffeo.lam_prime * np.linalg.norm(probes, axis=1)).min())


__all__ = [
    "TransformError", "EllipticityReport", "CirculationReport", "Diffeo", "TransformReport",
    "check_ellipticity", "check_conservative", "square_loops", "loop_circulation",
    "build_G", "invert_G", "reduce_drift", "solve_unit_sigma",
    "verify_transform_equivalence", "growth_margin",
]
