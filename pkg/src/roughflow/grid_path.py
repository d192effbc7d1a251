"""Uniform time grids, sampled paths and discrete Hölder norms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Above this many steps the O(n^2) pair scan switches to dyadic pairs by default.
DYADIC_THRESHOLD = 4096


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``t_i = i * horizon / steps`` of ``[0, horizon]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError(f"steps must be a non-negative integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.steps + 1) * (self.horizon / self.steps) if self.steps else np.zeros(1)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor)

    def restrict(self, steps: int) -> "TimeGrid":
        """Grid of the first ``steps`` intervals (same spacing)."""
        return TimeGrid(self.h * steps, steps)


class GridPath:
    """A path in R^d sampled on every point of a :class:`TimeGrid`.

    ``values`` has shape ``(steps + 1, d)``; one-dimensional input is read as
    ``d = 1``. The array is copied and frozen.
    """

    def __init__(self, grid: TimeGrid, values):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValueError(f"values must be (n+1, d), got shape {values.shape}")
        if values.shape[0] != grid.steps + 1:
            raise ValueError(
                f"expected {grid.steps + 1} values for {grid.steps} steps, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def steps(self) -> int:
        return self.grid.steps

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    def increments(self) -> np.ndarray:
        """Consecutive increments, shape ``(n, d)``."""
        return np.diff(self.values, axis=0)

    def restrict(self, steps: int) -> "GridPath":
        return GridPath(self.grid.restrict(steps), self.values[: steps + 1])

    def subsample(self, factor: int) -> "GridPath":
        """Every ``factor``-th point, on the correspondingly coarser grid."""
        if factor < 1 or self.steps % factor:
            raise ValueError(f"{self.steps} steps not divisible by {factor}")
        return GridPath(TimeGrid(self.grid.horizon, self.steps // factor), self.values[::factor])

    def __repr__(self):
        return f"GridPath(steps={self.steps}, dim={self.dim}, horizon={self.grid.horizon})"


@dataclass(frozen=True)
class HolderReport:
    exponent: float
    value: float
    pair: tuple[int, int]


def increment(p: GridPath, i: int, j: int) -> np.ndarray:
    """``W_{t_i, t_j} = W_{t_j} - W_{t_i}``."""
    n = p.steps
    if not (0 <= i <= j <= n):
        raise IndexError(f"need 0 <= i <= j <= {n}, got ({i}, {j})")
    return p.values[j] - p.values[i]


def _pair_blocks(n: int, pairs: str | None):
    """Yield ``(i, js)`` blocks of admissible pairs ``i < j``."""
    if pairs is None:
        pairs = "dyadic" if n > DYADIC_THRESHOLD else "all"
    if pairs == "all":
        for i in range(n):
            yield i, np.arange(i + 1, n + 1)
    elif pairs == "dyadic":
        lengths = 2 ** np.arange(int(np.log2(n)) + 1)
        for i in range(n):
            js = i + lengths
            yield i, js[js <= n]
    else:
        raise ValueError(f"pairs must be 'all' or 'dyadic', got {pairs!r}")


def _scan(norms_of_row, times, n, exponent, pairs):
    best, best_pair = -1.0, (0, 1)
    for i, js in _pair_blocks(n, pairs):
        if js.size == 0:
            continue
        ratios = norms_of_row(i, js) / (times[js] - times[i]) ** exponent
        k = int(np.argmax(ratios))
        if ratios[k] > best:
            best, best_pair = float(ratios[k]), (i, int(js[k]))
    return HolderReport(exponent, best, best_pair)


def holder_norm(p: GridPath, alpha: float, pairs: str | None = None) -> HolderReport:
    """Discrete alpha-Hölder seminorm: the max of ``|W_{s,t}| / |t - s|^alpha``
    over grid pairs, with ties broken towards the lexicographically smallest pair.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if p.steps < 1:
        raise ValueError("degenerate grid: need at least one step")
    v = p.values
    return _scan(
        lambda i, js: np.linalg.norm(v[js] - v[i], axis=1), p.times, p.steps, alpha, pairs
    )


def two_param_holder_norm(
    field: np.ndarray, exponent: float, grid: TimeGrid, pairs: str | None = None
) -> HolderReport:
    """Max of ``|field[i, j]| / (t_j - t_i)^exponent`` over ``i < j``.

    ``field`` has shape ``(n+1, n+1, ...)``; trailing axes are combined with the
    Euclidean (Frobenius) norm. Entries below the diagonal are ignored.
    """
    field = np.asarray(field, dtype=float)
    n = grid.steps
    if field.shape[:2] != (n + 1, n + 1):
        raise ValueError(f"field must start with shape ({n + 1}, {n + 1}), got {field.shape}")
    if not 0 < exponent <= 1:
        raise ValueError(f"exponent must lie in (0, 1], got {exponent}")
    if n < 1:
        raise ValueError("degenerate grid: need at least one step")
    flat = field.reshape(n + 1, n + 1, -1)
    upper = np.triu(np.ones((n + 1, n + 1), dtype=bool), k=1)
    if np.isnan(flat[upper]).any():
        raise ValueError("two-parameter field has missing (NaN) entries above the diagonal")
    return _scan(
        lambda i, js: np.linalg.norm(flat[i, js], axis=1), grid.points, n, exponent, pairs
    )


def write_csv(p: GridPath, path) -> None:
    """Write ``t,x1,...,xd`` rows with 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{k + 1}" for k in range(p.dim)])
        for t, row in zip(p.times, p.values):
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])


def read_csv(path) -> GridPath:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    n = len(t) - 1
    grid = TimeGrid(float(t[-1]), n)
    if not np.allclose(t, grid.points, rtol=0, atol=1e-12 * max(1.0, grid.horizon)):
        raise ValueError("CSV time column is not a uniform grid starting at 0")
    return GridPath(grid, data[:, 1:])
