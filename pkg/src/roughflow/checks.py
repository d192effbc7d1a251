"""The acceptance manifest: fourteen criteria with their measurements and thresholds.

Both ``roughflow verify-all`` and the acceptance test suite run this manifest,
so the two can never drift apart. Each criterion returns a list of
:class:`Measurement` objects; it passes when all of them pass.
"""

from __future__ import annotations

import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import flow as fl
from ._fit import OrderFit, fit_order
from .controlled import ControlledPath, check_sewing_bound
from .fbm import FbmParams, brownian_path, sample_array, sample_paths
from .fields import make_drift, make_sigma
from .grid_path import GridPath, TimeGrid
from .rde import (
    RdeProblem, ball_elements, check_integration_by_parts, check_rough_ito,
    check_schauder_ball, lift_solution, solve_euler, solve_picard,
)
from .rough_lift import (
    check_chen, check_geometric, check_ito_strat_correction, geometric_defects,
    lift_ito_from_geometric, lift_piecewise_linear,
)
from .transform import build_G, invert_G, verify_transform_equivalence

ALPHA = 0.45


@dataclass(frozen=True)
class Measurement:
    name: str
    value: float
    threshold: float
    op: str  # one of "<=", "<", ">=", ">"

    @property
    def passed(self) -> bool:
        v, t = self.value, self.threshold
        if self.op == "<=":
            return bool(v <= t)
        if self.op == "<":
            return bool(v < t)
        if self.op == ">=":
            return bool(v >= t)
        if self.op == ">":
            return bool(v > t)
        raise ValueError(f"unknown comparison {self.op!r}")

    def line(self) -> str:
        return f"{self.name}={self.value:.4g} {self.op} {self.threshold:.4g}"

    def as_dict(self) -> dict:
        return {"name": self.name, "value": float(self.value), "threshold": float(self.threshold),
                "op": self.op, "passed": self.passed}


def order_measurement(name: str, fit: OrderFit, threshold: float, op: str = ">=") -> Measurement:
    """Fitted slope, with an exact (rounding-level) error reported as ``inf``."""
    return Measurement(name, np.inf if fit.exact else fit.slope, threshold, op)


@dataclass
class CriterionResult:
    number: int
    title: str
    measurements: list
    seconds: float
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(m.passed for m in self.measurements)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        body = self.error or "; ".join(m.line() for m in self.measurements)
        return f"[{status}] {self.number:2d} {self.title} ({self.seconds:.1f}s): {body}"

    def as_dict(self) -> dict:
        return {"criterion": self.number, "title": self.title, "passed": self.passed,
                "seconds": round(self.seconds, 3), "error": self.error,
                "measurements": [m.as_dict() for m in self.measurements]}


@dataclass(frozen=True)
class Criterion:
    number: int
    title: str
    fn: Callable[[int], list]

    def run(self, seed: int = 42) -> CriterionResult:
        start = time.perf_counter()
        try:
            ms = self.fn(seed)
            err = None
        except Exception as exc:  # reported, never swallowed silently
            ms, err = [], f"{type(exc).__name__}: {exc}"
        return CriterionResult(self.number, self.title, ms, time.perf_counter() - start, err)


# ---------------------------------------------------------------------------
# shared fixtures


def _ladder_lifts(seed: int, index: int, steps, horizon: float = 1.0, oversample: int = 8,
                  dim: int = 1):
    """One Brownian path on the finest grid times ``oversample``, lifted onto each grid."""
    nf = max(steps) * oversample
    fine = brownian_path(TimeGrid(horizon, nf), seed, index, dim)
    return [lift_piecewise_linear(fine, nf // n, ALPHA) for n in steps]


def _rms_order(name, steps, per_path_errors, threshold, horizon=1.0, op=">=") -> Measurement:
    errs = np.sqrt(np.mean(np.square(per_path_errors), axis=0))
    return order_measurement(name, fit_order(horizon / np.asarray(steps, float), errs), threshold, op)


def _smooth_problem(rp, x0=0.3):
    return RdeProblem([x0], make_drift("cos"), make_sigma("two_plus_sin"), rp)


# ---------------------------------------------------------------------------
# the fourteen criteria


def c01_fbm_law(seed: int) -> list:
    start = time.perf_counter()
    out = []
    T, N = 1.0, 10_000
    for H in (0.35, 0.4, 0.5):
        params = FbmParams(H, 1, TimeGrid(T, 64), seed=seed, oversample=4)
        end = sample_array(params, N)[:, -1, 0]
        var = float(end.var(ddof=1))
        target = T ** (2 * H)
        se = target * np.sqrt(2 / (N - 1))
        out.append(Measurement(f"H={H}:|var-T^2H|/SE", abs(var - target) / se, 3.0, "<="))
    out.append(Measurement("runtime_s", time.perf_counter() - start, 30.0, "<"))
    return out


def c02_chen(seed: int) -> list:
    out = []
    grid = TimeGrid(1.0, 512)
    for H in (0.35, 0.4, 0.5):
        path = sample_paths(FbmParams(H, 2, grid, seed=seed, oversample=16), 1)[0]
        g = lift_piecewise_linear(path, 16, ALPHA)
        out.append(Measurement(f"H={H}:geometric", check_chen(g, 1000, seed), 1e-10, "<="))
        if H == 0.5:
            out.append(Measurement("ito", check_chen(lift_ito_from_geometric(g), 1000, seed), 1e-10, "<="))
    rp = _ladder_lifts(seed, 0, [512], oversample=16)[0]
    prob = _smooth_problem(rp)
    lifted = lift_solution(solve_euler(prob), prob)
    out.append(Measurement("solution-lift", check_chen(lifted, 1000, seed), 1e-10, "<="))
    return out


def c03_geometric(seed: int) -> list:
    out = []
    grid = TimeGrid(1.0, 512)
    for H in (0.35, 0.4, 0.5):
        path = sample_paths(FbmParams(H, 2, grid, seed=seed, oversample=16), 1)[0]
        g = lift_piecewise_linear(path, 16, ALPHA)
        out.append(Measurement(f"H={H}:defect", check_geometric(g), 1e-10, "<="))
    path = sample_paths(FbmParams(0.5, 2, grid, seed=seed, oversample=16), 1)[0]
    ito = lift_ito_from_geometric(lift_piecewise_linear(path, 16, ALPHA))
    t = grid.points
    expected = 0.5 * (t[None, :] - t[:, None]) * np.sqrt(2)
    upper = np.triu(np.ones_like(expected, dtype=bool), 1)
    gap = np.abs(geometric_defects(ito) - expected)[upper].max()
    out.append(Measurement("ito:|defect-(t-s)sqrt(d)/2|", float(gap), 1e-10, "<="))
    return out


def c04_ito_strat(seed: int) -> list:
    steps = [64, 128, 256, 512, 1024]
    lifts = _ladder_lifts(seed, 0, steps, oversample=16)
    sig = make_sigma("two_plus_sin")
    ident, smooth = [], []
    for g in lifts:
        ito = lift_ito_from_geometric(g)
        w = g.base.values
        # (B, I) as an integrand: a 1 x 1 matrix-valued path.
        b = ControlledPath(g, w[:, :, None], np.ones((len(w), 1, 1, 1)))
        ident.append(check_ito_strat_correction(b, g, ito))
        y = ControlledPath(g, sig.sigma(w), sig.dsigma(w))
        smooth.append(check_ito_strat_correction(y, g, ito))
    return [
        order_measurement("(B,I):order", fit_order(1 / np.array(steps, float), ident), 1.0),
        Measurement("(B,I):max_defect", max(ident), 1e-12, "<="),
        # Supplementary non-exact integrand: its residual is h |Y'_T - Y'_0| / 4, so
        # the order is 1 up to rounding; the usual 0.25 regression slack applies.
        order_measurement("(sigma(B),sigma'(B)):order", fit_order(1 / np.array(steps, float), smooth), 0.75),
    ]


def c05_sewing(seed: int) -> list:
    # Blocks of 4..32 fine steps on an 8192-step path: the coarse grids n = 2048..256.
    rp = _ladder_lifts(seed, 0, [8192], oversample=1)[0]
    sig = make_sigma("two_plus_sin")
    w = rp.base.values
    y = ControlledPath(rp, sig.sigma(w), sig.dsigma(w), ALPHA)
    rep = check_sewing_bound(y, rp, ALPHA, lengths=[4, 8, 16, 32])
    return [Measurement("slope", rep.slope, 3 * ALPHA - 0.25, ">=")]


def c06_integration_by_parts(seed: int) -> list:
    steps = [256, 512, 1024, 2048]
    per_path = []
    for index in range(8):
        lifts = _ladder_lifts(seed, index, steps, oversample=8)
        per_path.append([
            check_integration_by_parts(
                np.sin, lambda w: np.cos(w)[..., None], lambda w: -np.sin(w)[..., None, None], g)
            for g in lifts
        ])
    return [_rms_order("sin:order", steps, per_path, 0.9)]


def c07_rde_oracle(seed: int) -> list:
    steps = [64, 128, 256, 512, 1024, 2048]
    lifts = _ladder_lifts(seed, 0, steps, oversample=8)
    tol = 1e-12
    worst_ratio = 0.0
    exp_dist, smooth_dist = [], []
    for n, g in zip(steps, lifts):
        prob = RdeProblem([1.0], make_drift("zero"), make_sigma("linear"), g)
        e = solve_euler(prob)
        rel = abs(e.X.values[-1, 0] / np.exp(g.base.values[-1, 0]) - 1)
        worst_ratio = max(worst_ratio, rel / (10 * n ** (-2 * ALPHA)))
        p = solve_picard(prob, tol=tol)
        exp_dist.append(float(np.abs(e.X.values - p.X.values).max()))
        sp = _smooth_problem(g)
        smooth_dist.append(float(np.abs(solve_euler(sp).X.values - solve_picard(sp, tol=tol).X.values).max()))
    hs = 1 / np.array(steps, float)
    return [
        Measurement("exp:relerr/(10 n^-2a)", worst_ratio, 1.0, "<="),
        # With f = 0 both solvers share one discrete fixed point; distances below
        # ten times the Picard stopping tolerance count as exact agreement.
        order_measurement("exp:euler-picard order", fit_order(hs, exp_dist, floor=10 * tol),
                          2 * ALPHA - 0.25),
        order_measurement("cos,2+sin:euler-picard order", fit_order(hs, smooth_dist), 2 * ALPHA - 0.25),
    ]


def c08_solution_lift(seed: int) -> list:
    steps = [64, 128, 256, 512, 1024]
    per_path, chen = [], 0.0
    for index in range(4):
        row = []
        for g in _ladder_lifts(seed, index, steps, oversample=8):
            prob = _smooth_problem(g)
            lifted = lift_solution(solve_euler(prob), prob)
            row.append(check_geometric(lifted))
            chen = max(chen, check_chen(lifted, 1000, seed))
        per_path.append(row)
    return [_rms_order("geometric-defect order", steps, per_path, 0.0, op=">"),
            Measurement("chen", chen, 1e-10, "<=")]


def c09_rough_ito(seed: int) -> list:
    steps = [64, 128, 256, 512, 1024]
    per_path = []
    for index in range(4):
        row = []
        for g in _ladder_lifts(seed, index, steps, oversample=8):
            prob = _smooth_problem(g)
            sig = prob.sigma

            def F(x):
                return 1 / sig.sigma(x)

            def DF(x):
                return -sig.dsigma(x) / sig.sigma(x)[..., None] ** 2

            row.append(check_rough_ito(F, DF, solve_euler(prob), prob))
        per_path.append(row)
    return [_rms_order("F=1/sigma order", steps, per_path, ALPHA - 0.25)]


def c10_transform(seed: int) -> list:
    steps = [64, 128, 256, 512, 1024]
    diffeo = build_G(make_sigma("two_plus_sin"))
    probes = np.linspace(-10, 10, 201)[:, None]
    roundtrip = float(np.abs(invert_G(diffeo, diffeo.forward(probes)) - probes).max())
    res, conv = [], []
    for index in range(3):
        r_row, c_row = [], []
        for g in _ladder_lifts(seed, index, steps, oversample=8):
            prob = _smooth_problem(g)
            rep = verify_transform_equivalence(prob, solve_euler(prob), diffeo)
            roundtrip = max(roundtrip, rep.roundtrip)
            r_row.append(rep.residual)
            c_row.append(rep.converse)
        res.append(r_row)
        conv.append(c_row)
    return [
        Measurement("roundtrip", roundtrip, 1e-10, "<="),
        _rms_order("residual order", steps, res, ALPHA - 0.25),
        _rms_order("converse order", steps, conv, ALPHA - 0.25),
    ]


def c11_flow_derivative(seed: int) -> list:
    B = brownian_path(TimeGrid(1.0, 2048), seed)
    fp = fl.FlowProblem(make_drift("bump", a=0.1), B, radius=2.0)
    fld = fl.compute_flow(fp)
    rows = fl.derivative_table(fp, fld, delta=1e-4)
    return [
        Measurement("max relerr", max(r.relerr for r in rows), 1e-2, "<="),
        Measurement("min Dpsi", min(r.identity for r in rows), 0.0, ">"),
        Measurement("monotone", float(fl.monotone_on_lattice(fld)), 1.0, ">="),
    ]


def c12_moments(seed: int) -> list:
    start = time.perf_counter()
    B = brownian_path(TimeGrid(1.0, 512), seed)
    fp = fl.FlowProblem(make_drift("holder_bump", a=1.0, theta=0.5), B, radius=2.0)
    out = []
    for which in ("space", "time-t", "time-s", "J-field"):
        rep = fl.moment_scaling(fp, which, p=4.0, paths=1000, seed=seed)
        out.append(Measurement(f"{which} slope", rep.slope, rep.expected - 0.3, ">="))
    out.append(Measurement("runtime_s", time.perf_counter() - start, 180.0, "<"))
    return out


def c13_schauder(seed: int) -> list:
    t_small, gamma = 0.05, 0.4
    rp = _ladder_lifts(seed, 0, [512], oversample=16)[0]
    prob = RdeProblem([0.3], make_drift("cos", a=0.5), make_sigma("shifted_sin", c=1.0, a=0.1), rp)
    steps = int(round(t_small / rp.grid.h))
    small = prob.with_noise(rp.restrict(steps))
    elements = ball_elements(small, gamma, count=20, seed=seed)
    margins = [check_schauder_ball(prob, gamma, t_small / 2**k, elements=elements).margin
               for k in range(3)]
    steps_ok = min(b - a for a, b in zip(margins, margins[1:]))
    return [Measurement("margin@T=0.05", margins[0], 0.0, ">"),
            Measurement("min margin increase on halving", steps_ok, 0.0, ">=")]


def c14_uniqueness(seed: int) -> list:
    B = brownian_path(TimeGrid(1.0, 512), seed)
    fp = fl.FlowProblem(make_drift("bump", a=0.5), B, radius=2.0)
    x = 0.3
    own = GridPath(fp.grid, fl.march(fp.f, fp.increments, fp.grid.h, x))
    contrast = fl.nonuniqueness_contrast(c=1.0, theta=0.5, seed=seed)
    return [
        Measurement("own solution residual", fl.uniqueness_residual(fp, own, x), 1e-10, "<="),
        Measurement("perturbed residual", fl.uniqueness_residual(fp, fl.perturbed_candidate(fp, x)), 0.01, ">="),
        Measurement("noiseless residual (0)", contrast.noiseless_residuals[0], 1e-10, "<="),
        Measurement("noiseless residual (t^2/4)", contrast.noiseless_residuals[1], 1e-10, "<="),
        Measurement("noiseless solution gap", contrast.noiseless_gap, 0.1, ">="),
        Measurement("noisy distance ratio 4096/512", contrast.ratio, 0.25, "<"),
    ]


MANIFEST = [
    Criterion(1, "fBm law", c01_fbm_law),
    Criterion(2, "Chen relation", c02_chen),
    Criterion(3, "geometric condition", c03_geometric),
    Criterion(4, "Ito-Stratonovich correction", c04_ito_strat),
    Criterion(5, "sewing bound", c05_sewing),
    Criterion(6, "integration by parts", c06_integration_by_parts),
    Criterion(7, "RDE oracle", c07_rde_oracle),
    Criterion(8, "solution lift", c08_solution_lift),
    Criterion(9, "rough Ito formula", c09_rough_ito),
    Criterion(10, "transform equivalence", c10_transform),
    Criterion(11, "flow derivative identity", c11_flow_derivative),
    Criterion(12, "moment scaling", c12_moments),
    Criterion(13, "Schauder ball", c13_schauder),
    Criterion(14, "uniqueness functional", c14_uniqueness),
]


class ToleranceError(ValueError):
    """A tolerance override names a measurement the criterion does not report."""


def slug(name: str) -> str:
    """Measurement name as a tolerance key component: ``"max relerr"`` -> ``"max_relerr"``."""
    return re.sub(r"[^0-9a-z]+", "_", name.lower()).strip("_")


def apply_tolerances(result: CriterionResult, overrides: dict) -> CriterionResult:
    """Replace thresholds named ``"<number>.<slug>"`` in ``overrides``.

    Unknown measurement names raise :class:`ToleranceError`.
    """
    mine = {k.split(".", 1)[1]: v for k, v in overrides.items()
            if k.split(".", 1)[0] == str(result.number)}
    if not mine or result.error is not None:
        return result
    known = {slug(m.name) for m in result.measurements}
    unknown = sorted(set(mine) - known)
    if unknown:
        raise ToleranceError(f"criterion {result.number} has no measurement {unknown[0]!r}; "
                       f"known: {', '.join(sorted(known))}")
    ms = [replace(m, threshold=float(mine[slug(m.name)])) if slug(m.name) in mine else m
          for m in result.measurements]
    return replace(result, measurements=ms)


def run_manifest(seed: int = 42, only=None, log: Callable[[str], None] | None = None,
                 threads: int = 1, tolerances: dict | None = None) -> list:
    """Run the manifest (or the criteria numbered in ``only``) in manifest order.

    With ``threads > 1`` criteria run concurrently; every criterion draws its
    randomness from ``seed`` alone, so results do not depend on scheduling.
    """
    chosen = [c for c in MANIFEST if only is None or c.number in only]

    def one(crit: Criterion) -> CriterionResult:
        return apply_tolerances(crit.run(seed), tolerances or {})

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, chosen))
        if log is not None:
            for res in results:
                log(res.line())
        return results
    results = []
    for crit in chosen:
        results.append(one(crit))
        if log is not None:
            log(results[-1].line())
    return results
