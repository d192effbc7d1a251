"""Command-line harness: ``roughflow <scenario> [--config FILE] [--seed N] [--out PATH]``.

Every scenario writes its artifacts, then a pretty-printed JSON run report (to
stdout and next to the artifacts). Exit status: 0 when every check passes, 1
when a check fails or a computation raises, 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import flow as fl
from ._fit import fit_order
from .checks import (
    MANIFEST, CriterionResult, Measurement, ToleranceError, apply_tolerances, run_manifest,
)
from .config import (
    SCENARIOS, ConfigError, ExperimentConfig, as_dict, build_drift, build_sigma, parse_config,
    with_overrides,
)
from .fbm import FbmParams, brownian_path, sample_array, sample_paths
from .grid_path import GridPath, TimeGrid, write_csv
from .rde import RdeProblem, solve
from .rough_lift import (
    check_chen, check_geometric, geometric_defects, lift_ito_from_geometric, lift_piecewise_linear,
)
from .rough_lift import write_csv as write_rough_csv
from .transform import (
    build_G, check_conservative, check_ellipticity, invert_G, verify_transform_equivalence,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "ROUGHFLOW_THREADS"


@dataclass
class RunReport:
    scenario: str
    seed: int
    config: dict
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    error: str | None = None
    version: str = __version__

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "version": self.version,
            "scenario": self.scenario,
            "seed": self.seed,
            "passed": self.passed,
            "error": self.error,
            "checks": [c.as_dict() for c in self.checks],
            "artifacts": self.artifacts,
            "data": self.data,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.as_dict()), indent=2) + "\n"


def _jsonable(obj):
    """Plain JSON: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2) + "\n")


def _check(number: int, title: str, measurements: list, seconds: float, tolerances: dict):
    return apply_tolerances(CriterionResult(number, title, measurements, seconds), tolerances)


def _artifact_path(cfg: ExperimentConfig, default_name: str) -> Path:
    """``--out x.csv`` names the file; any other ``--out`` is a directory."""
    out = Path(cfg.out)
    if out.suffix == ".csv":
        out.parent.mkdir(parents=True, exist_ok=True)
        return out
    out.mkdir(parents=True, exist_ok=True)
    return out / default_name


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fbm_params(cfg: ExperimentConfig) -> FbmParams:
    return FbmParams(cfg.hurst, cfg.dim, TimeGrid(cfg.horizon, cfg.steps), cfg.seed, cfg.oversample)


def _noise(cfg: ExperimentConfig, steps: int | None = None):
    """Geometric lift onto ``steps`` (default ``cfg.steps``) of one fine fBm path."""
    fine = sample_paths(_fbm_params(cfg), 1)[0]
    n = cfg.steps if steps is None else steps
    return lift_piecewise_linear(fine, fine.steps // n, cfg.lift_alpha)


def _problem(cfg: ExperimentConfig, noise) -> RdeProblem:
    return RdeProblem(np.asarray(cfg.x0_vector(), float), build_drift(cfg), build_sigma(cfg), noise)


def _need_brownian_1d(cfg: ExperimentConfig) -> None:
    if cfg.hurst != 0.5 or cfg.dim != 1:
        raise ConfigError(f"scenario {cfg.scenario!r} needs hurst = 0.5 and dim = 1")


# ---------------------------------------------------------------------------
# scenarios: each fills ``report`` and writes its artifacts


def scenario_sample_fbm(cfg: ExperimentConfig, report: RunReport) -> None:
    start = time.perf_counter()
    params = _fbm_params(cfg)
    paths = sample_array(params, cfg.count)
    target = _artifact_path(cfg, "fbm.csv")
    # one GridPath CSV per path: fbm.csv, or fbm_0.csv, fbm_1.csv, ... when count > 1
    names = [target] if cfg.count == 1 else [
        target.with_name(f"{target.stem}_{k}.csv") for k in range(cfg.count)
    ]
    for name, values in zip(names, paths):
        write_csv(GridPath(params.fine_grid, values), name)
        report.artifacts.append(str(name))
    report.data["fine_steps"] = params.fine_grid.steps
    report.checks.append(_check(1, "fBm sample", [
        Measurement("max |W_0|", float(np.abs(paths[:, 0]).max()), 0.0, "<="),
        Measurement("finite", float(np.isfinite(paths).all()), 1.0, ">="),
    ], time.perf_counter() - start, cfg.tolerances))


def scenario_lift_checks(cfg: ExperimentConfig, report: RunReport) -> None:
    start = time.perf_counter()
    g = _noise(cfg)
    out = _out_dir(cfg)
    write_rough_csv(g, out / "lift.csv")
    report.artifacts += [str(out / "lift.csv"), str(out / "lift.csv.json")]
    ms = [Measurement("geometric chen", check_chen(g, 1000, cfg.seed), 1e-10, "<=")]
    geo = [Measurement("geometric defect", check_geometric(g), 1e-10, "<=")]
    if cfg.hurst == 0.5:
        ito = lift_ito_from_geometric(g)
        ms.append(Measurement("ito chen", check_chen(ito, 1000, cfg.seed), 1e-10, "<="))
        t = g.grid.points
        expected = 0.5 * (t[None, :] - t[:, None]) * np.sqrt(cfg.dim)
        upper = np.triu(np.ones_like(expected, dtype=bool), 1)
        gap = float(np.abs(geometric_defects(ito) - expected)[upper].max())
        geo.append(Measurement("ito defect gap", gap, 1e-10, "<="))
    seconds = time.perf_counter() - start
    report.checks.append(_check(2, "Chen relation", ms, seconds, cfg.tolerances))
    report.checks.append(_check(3, "geometric condition", geo, 0.0, cfg.tolerances))


def scenario_solve(cfg: ExperimentConfig, report: RunReport) -> None:
    start = time.perf_counter()
    prob = _problem(cfg, _noise(cfg))
    kw = {"tol": cfg.tol, "max_iter": cfg.max_iter} if cfg.solver == "picard" else {}
    sol = solve(prob, cfg.solver, **kw)
    target = _artifact_path(cfg, "solution.csv")
    write_csv(sol.X, target)
    report.artifacts.append(str(target))
    report.data.update(solver=sol.solver, iterations=sol.iterations, residual=sol.residual,
                       final=sol.X.values[-1])
    ms = [Measurement("finite", float(np.isfinite(sol.X.values).all()), 1.0, ">=")]
    if cfg.solver == "picard":
        ms.append(Measurement("picard residual", sol.residual, cfg.tol, "<"))
    report.checks.append(_check(7, "RDE solve", ms, time.perf_counter() - start, cfg.tolerances))


def scenario_transform_check(cfg: ExperimentConfig, report: RunReport) -> None:
    start = time.perf_counter()
    vf = build_sigma(cfg)
    rng = np.random.default_rng(cfg.seed)
    probes = rng.uniform(-5, 5, size=(256, cfg.dim))
    ell = check_ellipticity(vf, probes, seed=cfg.seed)
    circ = check_conservative(vf, dim=cfg.dim)
    report.data["ellipticity"] = {"min_quotient": ell.min_quotient, "declared": ell.declared,
                                  "mixed_sign": ell.mixed_sign, "passes": ell.passes}
    report.data["circulation"] = {"max": circ.max_circulation, "coarse": circ.coarse_circulation,
                                  "segments": circ.segments, "passes": circ.passes}
    assumptions = [Measurement("ellipticity", float(ell.passes), 1.0, ">="),
                   Measurement("circulation", circ.max_circulation, circ.tol, "<=")]
    if not (ell.passes and circ.passes):
        report.checks.append(_check(10, "transform assumptions", assumptions,
                                    time.perf_counter() - start, cfg.tolerances))
        return
    diffeo = build_G(vf, cfg.dim, probes=probes)
    roundtrip = float(np.abs(invert_G(diffeo, diffeo.forward(probes)) - probes).max())
    fine = sample_paths(_fbm_params(cfg), 1)[0]
    ladder = [cfg.steps // 2**k for k in range(4, -1, -1) if cfg.steps // 2**k >= 4]
    res, conv = [], []
    for n in ladder:
        prob = _problem(cfg, lift_piecewise_linear(fine, fine.steps // n, cfg.lift_alpha))
        rep = verify_transform_equivalence(prob, solve(prob, "euler"), diffeo)
        roundtrip = max(roundtrip, rep.roundtrip)
        res.append(rep.residual)
        conv.append(rep.converse)
    hs = cfg.horizon / np.asarray(ladder, float)
    orders = {"residual": fit_order(hs, res).slope, "converse": fit_order(hs, conv).slope}
    report.data["roundtrip"] = roundtrip
    report.data["residual_orders"] = orders
    report.data["ladder"] = {"steps": ladder, "residual": res, "converse": conv}
    threshold = cfg.lift_alpha - 0.25
    report.checks.append(_check(10, "transform equivalence", assumptions + [
        Measurement("roundtrip", roundtrip, 1e-10, "<="),
        Measurement("residual order", orders["residual"], threshold, ">="),
        Measurement("converse order", orders["converse"], threshold, ">="),
    ], time.perf_counter() - start, cfg.tolerances))


def _flow_problem(cfg: ExperimentConfig) -> fl.FlowProblem:
    _need_brownian_1d(cfg)
    B = brownian_path(TimeGrid(cfg.horizon, cfg.steps), cfg.seed)
    return fl.FlowProblem(build_drift(cfg), B, radius=cfg.radius)


def _uniqueness_checks(cfg, fp, out: Path, report: RunReport) -> None:
    start = time.perf_counter()
    x = float(cfg.x0[0])
    own = fl.march(fp.f, fp.increments, fp.grid.h, x)
    own_res = fl.uniqueness_residual(fp, GridPath(fp.grid, own), x)
    pert_res = fl.uniqueness_residual(fp, fl.perturbed_candidate(fp, x))
    payload = {"x": x, "own_residual": own_res, "perturbed_residual": pert_res}
    ms = [Measurement("own solution residual", own_res, 1e-10, "<="),
          Measurement("perturbed residual", pert_res, 0.01, ">=")]
    if cfg.scenario == "uniqueness":
        steps = tuple(cfg.steps * 2**k for k in range(4))
        con = fl.nonuniqueness_contrast(steps=steps, horizon=cfg.horizon, seed=cfg.seed)
        payload["contrast"] = {"steps": con.steps, "distances": con.distances,
                               "ratio": con.ratio, "noiseless_residuals": con.noiseless_residuals,
                               "noiseless_gap": con.noiseless_gap}
        ms += [
            Measurement("noiseless residual (0)", con.noiseless_residuals[0], 1e-10, "<="),
            Measurement("noiseless residual (t^2/4)", con.noiseless_residuals[1], 1e-10, "<="),
            Measurement("noiseless solution gap", con.noiseless_gap, 0.1, ">="),
            Measurement(f"noisy distance ratio {steps[-1]}/{steps[0]}", con.ratio, 0.25, "<"),
        ]
    _write_json(out / "uniqueness.json", payload)
    report.artifacts.append(str(out / "uniqueness.json"))
    report.checks.append(_check(14, "uniqueness", ms, time.perf_counter() - start, cfg.tolerances))


def scenario_flow(cfg: ExperimentConfig, report: RunReport) -> None:
    start = time.perf_counter()
    fp = _flow_problem(cfg)
    out = _out_dir(cfg)
    fld = fl.compute_flow(fp)
    with (out / "psi.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "t", "x", "value"])
        for s, t, x, v in fld.rows():
            w.writerow([f"{s:.17g}", f"{t:.17g}", f"{x:.17g}", f"{v:.17g}"])
    rows = fl.derivative_table(fp, fld, delta=cfg.delta)
    with (out / "derivative.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "t", "x", "identity", "fd", "relerr"])
        for r in rows:
            w.writerow([f"{v:.17g}" for v in (r.s, r.t, r.x, r.identity, r.fd, r.relerr)])
    report.artifacts += [str(out / "psi.csv"), str(out / "derivative.csv")]
    report.checks.append(_check(11, "flow derivative", [
        Measurement("max relerr", max(r.relerr for r in rows), 1e-2, "<="),
        Measurement("min Dpsi", min(r.identity for r in rows), 0.0, ">"),
        Measurement("monotone", float(fl.monotone_on_lattice(fld)), 1.0, ">="),
    ], time.perf_counter() - start, cfg.tolerances))

    start = time.perf_counter()
    moments, ms = {}, []
    for which in fl.MOMENT_KINDS:
        rep = fl.moment_scaling(fp, which, p=cfg.moment_p, paths=cfg.paths, seed=cfg.seed)
        moments[which] = {"slope": rep.slope, "expected": rep.expected,
                          "separations": rep.separations, "moments": rep.moments}
        ms.append(Measurement(f"{which} slope", rep.slope, rep.expected - 0.3, ">="))
    _write_json(out / "moments.json", {"p": cfg.moment_p, "paths": cfg.paths, "slopes": moments})
    report.artifacts.append(str(out / "moments.json"))
    report.checks.append(_check(12, "moment scaling", ms, time.perf_counter() - start,
                                cfg.tolerances))
    _uniqueness_checks(cfg, fp, out, report)


def scenario_uniqueness(cfg: ExperimentConfig, report: RunReport) -> None:
    _uniqueness_checks(cfg, _flow_problem(cfg), _out_dir(cfg), report)


def scenario_verify_all(cfg: ExperimentConfig, report: RunReport, only=None) -> None:
    report.checks += run_manifest(cfg.seed, only=only, threads=cfg.threads,
                                  tolerances=cfg.tolerances,
                                  log=lambda line: print(line, file=sys.stderr, flush=True))


SCENARIO_FUNCS = {
    "sample-fbm": scenario_sample_fbm,
    "lift-checks": scenario_lift_checks,
    "solve": scenario_solve,
    "transform-check": scenario_transform_check,
    "flow": scenario_flow,
    "uniqueness": scenario_uniqueness,
    "verify-all": scenario_verify_all,
}
assert set(SCENARIO_FUNCS) == set(SCENARIOS)


def run(cfg: ExperimentConfig, criteria=None) -> RunReport:
    """Run the configured scenario; module errors are captured in the report.

    Configuration problems discovered while running raise :class:`ConfigError`
    or, for a tolerance override naming an unknown measurement,
    :class:`ToleranceError`.
    """
    report = RunReport(cfg.scenario, cfg.seed, as_dict(cfg))
    func = SCENARIO_FUNCS[cfg.scenario]
    try:
        if cfg.scenario == "verify-all":
            func(cfg, report, criteria)
        else:
            func(cfg, report)
    except (ConfigError, ToleranceError):
        raise
    except Exception as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    return report


def _report_path(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    if out.suffix == ".csv":
        return out.with_suffix(".report.json")
    out.mkdir(parents=True, exist_ok=True)
    return out / "report.json"


def _parse_criteria(text: str) -> list[int]:
    known = {c.number for c in MANIFEST}
    chosen: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        lo, _, hi = part.partition("-")
        try:
            rng = range(int(lo), int(hi or lo) + 1)
        except ValueError:
            raise ConfigError(f"--criteria: cannot read {part!r}") from None
        for k in rng:
            if k not in known:
                raise ConfigError(f"--criteria: no criterion {k}")
            chosen.add(k)
    return sorted(chosen)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="roughflow",
        description="Rough differential equations driven by fractional Brownian motion.",
    )
    p.add_argument("scenario", nargs="?", help=f"one of: {', '.join(SCENARIOS)} "
                   "(defaults to the config file's scenario)")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory, or a .csv file for sample-fbm and solve")
    p.add_argument("--threads", type=int, help=f"worker threads (fallback: ${THREADS_ENV})")
    p.add_argument("--hurst", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--oversample", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--count", type=int, help="number of paths for sample-fbm")
    p.add_argument("--solver", help="euler or picard")
    p.add_argument("--criteria", help="verify-all subset, e.g. 1,2,7-9")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    except OSError as exc:
        print(f"roughflow: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.scenario is not None and args.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {args.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        cfg = parse_config(text)
        threads = args.threads
        if threads is None and os.environ.get(THREADS_ENV):
            try:
                threads = int(os.environ[THREADS_ENV])
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer") from None
        cfg = with_overrides(cfg, scenario=args.scenario, seed=args.seed, out=args.out,
                             threads=threads, hurst=args.hurst, steps=args.steps,
                             oversample=args.oversample, dim=args.dim, count=args.count,
                             solver=args.solver)
        criteria = _parse_criteria(args.criteria) if args.criteria else None
        report = run(cfg, criteria)
    except (ConfigError, ToleranceError) as exc:
        print(f"roughflow: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = report.to_json()
    _report_path(cfg).write_text(text)
    sys.stdout.write(text)
    if cfg.scenario != "verify-all":  # verify-all logs each criterion as it finishes
        for check in report.checks:
            print(check.line(), file=sys.stderr)
    if report.error:
        print(f"roughflow: {report.error}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
