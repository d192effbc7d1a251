"""Level-2 rough paths on a uniform grid.

The second level is stored only on consecutive intervals; every other pair is
rebuilt with Chen's relation, so a stored rough path cannot be Chen-inconsistent.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .grid_path import GridPath, TimeGrid, two_param_holder_norm

GEOMETRIC = "geometric"
ITO = "ito"


class RoughPath:
    """A :class:`GridPath` plus level-2 increments on each grid interval.

    Parameters
    ----------
    base : GridPath
        The first level, ``n`` steps in ``R^d``.
    level2 : array_like, shape (n, d, d)
        ``level2[k] = int_{t_k}^{t_{k+1}} W_{t_k, r} (x) dW_r``.
    flavor : {"geometric", "ito"}
    alpha : float
        Hölder exponent the path is meant to be used at.
    """

    def __init__(self, base: GridPath, level2, flavor: str = GEOMETRIC, alpha: float = 0.45):
        level2 = np.array(level2, dtype=float)
        n, d = base.steps, base.dim
        if level2.shape != (n, d, d):
            raise ValueError(f"level2 must have shape {(n, d, d)}, got {level2.shape}")
        if flavor not in (GEOMETRIC, ITO):
            raise ValueError(f"unknown flavor {flavor!r}")
        if not 1 / 3 < alpha < 1 / 2 + 1e-12:
            raise ValueError(f"alpha must lie in (1/3, 1/2], got {alpha}")
        level2.setflags(write=False)
        self.base = base
        self.level2 = level2
        self.flavor = flavor
        self.alpha = float(alpha)

    @property
    def grid(self) -> TimeGrid:
        return self.base.grid

    @property
    def steps(self) -> int:
        return self.base.steps

    @property
    def dim(self) -> int:
        return self.base.dim

    def restrict(self, steps: int) -> "RoughPath":
        return RoughPath(self.base.restrict(steps), self.level2[:steps], self.flavor, self.alpha)

    def coarsen(self, factor: int) -> "RoughPath":
        """The same rough path seen on every ``factor``-th grid point."""
        if factor < 1 or self.steps % factor:
            raise ValueError(f"{self.steps} steps not divisible by {factor}")
        starts = np.arange(0, self.steps, factor)
        level2 = np.stack([chen_reconstruct(self, i, i + factor) for i in starts])
        return RoughPath(self.base.subsample(factor), level2, self.flavor, self.alpha)

    def __repr__(self):
        return f"RoughPath(steps={self.steps}, dim={self.dim}, flavor={self.flavor!r})"


def _chen_row(base_values: np.ndarray, level2: np.ndarray, i: int) -> np.ndarray:
    """``B_{i, j}`` for every ``j >= i`` by the left fold, shape ``(n+1-i, d, d)``.

    The fold ``B_{i,k+1} = B_{i,k} + B_{k,k+1} + W_{i,k} (x) W_{k,k+1}`` is a
    left-to-right cumulative sum of the bracketed terms.
    """
    w = base_values[i:]
    dw = np.diff(w, axis=0)
    terms = level2[i:] + np.einsum("ka,kb->kab", w[:-1] - w[0], dw)
    out = np.zeros((len(w),) + level2.shape[1:])
    np.cumsum(terms, axis=0, out=out[1:])
    return out


def chen_reconstruct(rp: RoughPath, i: int, j: int) -> np.ndarray:
    """Level-2 increment over ``[t_i, t_j]`` rebuilt from consecutive intervals."""
    n = rp.steps
    if not (0 <= i <= j <= n):
        raise IndexError(f"need 0 <= i <= j <= {n}, got ({i}, {j})")
    if j == i:
        return np.zeros((rp.dim, rp.dim))
    if j == i + 1:
        return rp.level2[i].copy()
    return _chen_row(rp.base.values[: j + 1], rp.level2[:j], i)[-1]


def level2_table(rp: RoughPath) -> np.ndarray:
    """All pairs ``B_{i, j}`` as an ``(n+1, n+1, d, d)`` array (zero below the diagonal)."""
    n, d = rp.steps, rp.dim
    out = np.zeros((n + 1, n + 1, d, d))
    for i in range(n):
        out[i, i:] = _chen_row(rp.base.values, rp.level2, i)
    return out


def lift_piecewise_linear(fine: GridPath, coarsen: int, alpha: float = 0.45) -> RoughPath:
    """Geometric lift of the piecewise-linear interpolant of ``fine``.

    Each fine segment contributes ``dW (x) dW / 2``; segments are composed with
    Chen's relation over every block of ``coarsen`` fine steps, giving the exact
    iterated integral of the interpolant on each coarse interval.
    """
    if coarsen < 1 or fine.steps % coarsen:
        raise ValueError(f"fine grid of {fine.steps} steps is not divisible by {coarsen}")
    v = fine.values
    dw = np.diff(v, axis=0)
    n = fine.steps // coarsen
    d = fine.dim
    # Within block b: sum_k [dW_k dW_k / 2 + (W_k - W_start) (x) dW_k].
    start = np.repeat(v[:-1:coarsen], coarsen, axis=0)
    terms = 0.5 * np.einsum("ka,kb->kab", dw, dw) + np.einsum("ka,kb->kab", v[:-1] - start, dw)
    level2 = terms.reshape(n, coarsen, d, d).sum(axis=1)
    return RoughPath(fine.subsample(coarsen), level2, GEOMETRIC, alpha)


def lift_ito_from_geometric(g: RoughPath, hurst: float = 0.5) -> RoughPath:
    """Brownian Itô lift: ``B_ito = B_geom - (h / 2) I`` on every interval."""
    if g.flavor != GEOMETRIC:
        raise ValueError("Itô lift is built from a geometric lift")
    if hurst != 0.5:
        raise ValueError(f"the Itô lift is only defined for Brownian motion (H = 1/2), got H = {hurst}")
    corr = 0.5 * g.grid.h * np.eye(g.dim)
    return RoughPath(g.base, g.level2 - corr, ITO, g.alpha)


def check_chen(rp: RoughPath, triples: int | None = 1000, seed: int = 0,
               table: np.ndarray | None = None) -> float:
    """Max Frobenius residual of Chen's relation over sampled ``i < u < j``.

    ``triples=None`` scans every triple (only sensible for small grids). By
    default the pairs come from the Chen fold, so the residual is rounding
    noise; pass a ``(n+1, n+1, d, d)`` ``table`` of pair increments obtained
    some other way (read from disk, computed externally) to test it instead.
    """
    n = rp.steps
    if n < 2:
        return 0.0
    v = rp.base.values
    if table is not None:
        table = np.asarray(table, dtype=float)
        if table.shape != (n + 1, n + 1, rp.dim, rp.dim):
            raise ValueError(f"table must have shape {(n + 1, n + 1, rp.dim, rp.dim)}")
    if triples is None:
        ijk = [(i, u, j) for i in range(n) for u in range(i + 1, n) for j in range(u + 1, n + 1)]
    else:
        rng = np.random.default_rng(seed)
        ijk = []
        for _ in range(triples):
            i, u, j = np.sort(rng.choice(n + 1, size=3, replace=False))
            ijk.append((int(i), int(u), int(j)))
    rows: dict[int, np.ndarray] = {}

    def row(i):
        if table is not None:
            return table[i, i:]
        if i not in rows:
            rows[i] = _chen_row(v, rp.level2, i)
        return rows[i]

    worst = 0.0
    for i, u, j in ijk:
        lhs = row(i)[j - i]
        rhs = row(i)[u - i] + row(u)[j - u] + np.outer(v[u] - v[i], v[j] - v[u])
        worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    return worst


def geometric_defects(rp: RoughPath) -> np.ndarray:
    """``|Sym(B_{s,t}) - W_{s,t} (x) W_{s,t} / 2|`` for all grid pairs, ``(n+1, n+1)``.

    Entries with ``t <= s`` are zero.
    """
    v = rp.base.values
    n = rp.steps
    out = np.zeros((n + 1, n + 1))
    for i in range(n):
        b = _chen_row(v, rp.level2, i)[1:]
        w = v[i + 1 :] - v[i]
        sym = 0.5 * (b + np.swapaxes(b, 1, 2))
        out[i, i + 1 :] = np.linalg.norm(sym - 0.5 * np.einsum("ka,kb->kab", w, w), axis=(1, 2))
    return out


def check_geometric(rp: RoughPath) -> float:
    """Max over grid pairs of ``|Sym(B_{s,t}) - W_{s,t} (x) W_{s,t} / 2|``."""
    return float(geometric_defects(rp).max())


def level2_holder_norm(rp: RoughPath, exponent: float | None = None):
    """Discrete ``2 alpha``-Hölder norm of the reconstructed second level."""
    exponent = 2 * rp.alpha if exponent is None else exponent
    return two_param_holder_norm(level2_table(rp), exponent, rp.grid)


def check_ito_strat_correction(Y, strat: RoughPath, ito: RoughPath) -> float:
    """``|int Y dB_strat - int Y dB_ito - (1/2) int tr Y' dr|`` over the whole grid.

    ``Y`` is a :class:`roughflow.controlled.ControlledPath` integrand.
    """
    from .controlled import rough_integral

    if strat.steps != ito.steps or not np.array_equal(strat.base.values, ito.base.values):
        raise ValueError("Stratonovich and Itô lifts must share the same base path")
    n = strat.steps
    diff = rough_integral(Y, strat, 0, n) - rough_integral(Y, ito, 0, n)
    tr = np.trace(Y.derivative, axis1=-2, axis2=-1)
    h = strat.grid.h
    correction = 0.5 * h * (tr.sum(axis=0) - 0.5 * (tr[0] + tr[-1]))
    return float(np.linalg.norm(diff - correction))


def write_csv(rp: RoughPath, path) -> None:
    """``t_i, B1..Bd, Levy11..Levydd`` rows plus a JSON sidecar (``<path>.json``).

    Row ``i`` carries the level-2 increment over ``[t_i, t_{i+1}]``; the final
    row's degenerate interval is written as zeros.
    """
    path = Path(path)
    d = rp.dim
    l2 = np.concatenate([rp.level2, np.zeros((1, d, d))]).reshape(rp.steps + 1, d * d)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["t"]
            + [f"B{a + 1}" for a in range(d)]
            + [f"Levy{a + 1}{b + 1}" for a in range(d) for b in range(d)]
        )
        for t, b, lev in zip(rp.base.times, rp.base.values, l2):
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in b] + [f"{x:.17g}" for x in lev])
    sidecar = {"flavor": rp.flavor, "alpha": rp.alpha, "dim": d, "steps": rp.steps,
               "horizon": rp.grid.horizon}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def read_csv_rough(path) -> RoughPath:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    d = meta["dim"]
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = TimeGrid(float(data[-1, 0]), len(data) - 1)
    if not np.allclose(data[:, 0], grid.points, rtol=0, atol=1e-12 * max(1.0, grid.horizon)):
        raise ValueError("CSV time column is not a uniform grid starting at 0")
    base = GridPath(grid, data[:, 1 : d + 1])
    level2 = data[:-1, d + 1 :].reshape(-1, d, d)
    return RoughPath(base, level2, meta["flavor"], meta["alpha"])
