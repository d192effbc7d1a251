"""Exact-in-law sampling of d-dimensional fractional Brownian motion on a grid."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid_path import GridPath, TimeGrid

# Above this many fine points the Cholesky factor gets too large; the
# circulant (Davies-Harte) route is exact as well for H <= 1/2.
CHOLESKY_MAX_POINTS = 4096


class FbmError(RuntimeError):
    pass


@dataclass(frozen=True)
class FbmParams:
    """Sampling parameters.

    Paths are produced on the fine grid with ``grid.steps * oversample`` steps;
    the coarse ``grid`` is what :func:`roughflow.rough_lift.lift_piecewise_linear`
    lifts onto.
    """

    hurst: float
    dim: int
    grid: TimeGrid
    seed: int = 42
    oversample: int = 16

    def __post_init__(self):
        if not 1 / 3 < self.hurst <= 0.5:
            raise ValueError(f"hurst must lie in (1/3, 1/2], got {self.hurst}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.oversample < 1:
            raise ValueError(f"oversample must be >= 1, got {self.oversample}")
        if self.grid.steps < 1:
            raise ValueError("grid needs at least one step")

    @property
    def fine_grid(self) -> TimeGrid:
        return self.grid.refine(self.oversample)


def covariance(hurst: float, s, t):
    """Scalar fBm covariance ``(t^2H + s^2H - |t-s|^2H) / 2``.

    Coordinates are independent, so the matrix covariance is this times I_d.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("covariance is defined for non-negative times only")
    two_h = 2 * hurst
    out = 0.5 * (t**two_h + s**two_h - np.abs(t - s) ** two_h)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=8)
def _cholesky_factor(hurst: float, steps: int, horizon: float) -> np.ndarray:
    times = TimeGrid(horizon, steps).points[1:]
    cov = covariance(hurst, times[:, None], times[None, :])
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov[np.diag_indices_from(cov)] *= 1 + 1e-12
        try:
            factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise FbmError(
                f"fBm covariance is numerically singular for n={steps}, H={hurst} "
                "even after 1e-12 diagonal jitter"
            ) from exc
    factor.setflags(write=False)
    return factor


@lru_cache(maxsize=8)
def _circulant_sqrt_eigs(hurst: float, steps: int, horizon: float) -> np.ndarray:
    h = horizon / steps
    k = np.arange(steps + 1, dtype=float)
    two_h = 2 * hurst
    gamma = 0.5 * h**two_h * (np.abs(k + 1) ** two_h - 2 * k**two_h + np.abs(k - 1) ** two_h)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eigs = np.fft.fft(row).real
    if eigs.min() < -1e-10 * eigs.max():
        raise FbmError(f"circulant embedding not non-negative for n={steps}, H={hurst}")
    out = np.sqrt(np.clip(eigs, 0, None) / (2 * steps))
    out.setflags(write=False)
    return out


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for path ``index``: a spawned child of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _method(hurst: float, steps: int, method: str) -> str:
    if method != "auto":
        return method
    if hurst == 0.5:
        return "increments"
    return "cholesky" if steps <= CHOLESKY_MAX_POINTS else "circulant"


def _one_path(hurst, steps, horizon, dim, rng, method) -> np.ndarray:
    out = np.zeros((steps + 1, dim))
    if method == "increments":
        # Cholesky factor of min(s, t) on a uniform grid is sqrt(h) * lower-ones.
        z = rng.standard_normal((steps, dim))
        out[1:] = np.sqrt(horizon / steps) * np.cumsum(z, axis=0)
    elif method == "cholesky":
        z = rng.standard_normal((steps, dim))
        out[1:] = _cholesky_factor(hurst, steps, horizon) @ z
    elif method == "circulant":
        lam = _circulant_sqrt_eigs(hurst, steps, horizon)
        z = rng.standard_normal((2 * steps, dim)) + 1j * rng.standard_normal((2 * steps, dim))
        noise = np.fft.fft(lam[:, None] * z, axis=0)[:steps].real
        out[1:] = np.cumsum(noise, axis=0)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    return out


def sample_array(params: FbmParams, count: int, method: str = "auto", start: int = 0) -> np.ndarray:
    """Paths ``start .. start+count-1`` as an array ``(count, n*m + 1, d)``."""
    fine = params.fine_grid
    how = _method(params.hurst, fine.steps, method)
    if how == "increments" and params.hurst != 0.5:
        raise ValueError("independent-increment sampling is only exact for H = 1/2")
    out = np.empty((count, fine.steps + 1, params.dim))
    for k in range(count):
        rng = path_rng(params.seed, start + k)
        out[k] = _one_path(params.hurst, fine.steps, fine.horizon, params.dim, rng, how)
    return out


def sample_paths(params: FbmParams, count: int, method: str = "auto") -> list[GridPath]:
    """``count`` independent fBm paths on the fine grid (``n * m`` steps).

    Path ``k`` depends only on ``(seed, k)``, so results do not depend on how
    many paths are drawn or in what order.
    """
    fine = params.fine_grid
    return [GridPath(fine, a) for a in sample_array(params, count, method)]


def brownian_path(grid: TimeGrid, seed: int, index: int = 0, dim: int = 1) -> GridPath:
    """Convenience: one standard Brownian path on ``grid``."""
    rng = path_rng(seed, index)
    return GridPath(grid, _one_path(0.5, grid.steps, grid.horizon, dim, rng, "increments"))
