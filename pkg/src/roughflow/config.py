"""Experiment configuration: a flat ``key = value`` format with ``[sections]``.

::

    # comments start with '#'
    [experiment]
    scenario = solve
    seed = 42

    [grid]
    hurst = 0.5
    steps = 512

    [drift]
    family = cos
    a = 1.0

Keys before the first section header may come from any fixed section
(``hurst = 0.4`` means ``[grid] hurst = 0.4``). Every key is
typed and validated; unknown keys and bad values raise :class:`ConfigError`
naming the offending line.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .fields import DRIFTS, SIGMAS

SCENARIOS = ("sample-fbm", "lift-checks", "solve", "transform-check", "flow", "uniqueness",
             "verify-all")
SOLVERS = ("euler", "picard")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "verify-all"
    seed: int = 42
    out: str = "out"
    threads: int = 1
    count: int = 1
    hurst: float = 0.5
    steps: int = 512
    oversample: int = 16
    horizon: float = 1.0
    dim: int = 1
    alpha: float | None = None  # None: chosen from hurst, see lift_alpha
    x0: tuple = (0.3,)
    solver: str = "euler"
    tol: float = 1e-10
    max_iter: int = 200
    drift: str = "cos"
    drift_params: dict = field(default_factory=dict)
    sigma: str = "two_plus_sin"
    sigma_params: dict = field(default_factory=dict)
    radius: float = 2.0
    paths: int = 1000
    moment_p: float = 4.0
    delta: float = 1e-4
    tolerances: dict = field(default_factory=dict)

    @property
    def lift_alpha(self) -> float:
        """Hölder exponent for lifts: ``alpha`` if set, else 0.45 at H = 1/2 and ``(1/3 + H) / 2`` below."""
        if self.alpha is not None:
            return self.alpha
        return 0.45 if self.hurst == 0.5 else (1 / 3 + self.hurst) / 2

    def x0_vector(self) -> tuple:
        return self.x0 * self.dim if len(self.x0) == 1 else self.x0


# (section, key) -> (attribute, parser)
def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _str(v: str) -> str:
    if not v:
        raise ValueError("empty value")
    return v


def _alpha(v: str) -> float | None:
    return None if v == "auto" else float(v)


def _floats(v: str) -> tuple:
    return tuple(float(p) for p in v.split(","))


SCHEMA = {
    ("experiment", "scenario"): ("scenario", _str),
    ("experiment", "seed"): ("seed", _int),
    ("experiment", "out"): ("out", _str),
    ("experiment", "threads"): ("threads", _int),
    ("experiment", "count"): ("count", _int),
    ("grid", "hurst"): ("hurst", _float),
    ("grid", "steps"): ("steps", _int),
    ("grid", "oversample"): ("oversample", _int),
    ("grid", "horizon"): ("horizon", _float),
    ("grid", "dim"): ("dim", _int),
    ("grid", "alpha"): ("alpha", _alpha),
    ("model", "x0"): ("x0", _floats),
    ("model", "solver"): ("solver", _str),
    ("model", "tol"): ("tol", _float),
    ("model", "max_iter"): ("max_iter", _int),
    ("flow", "radius"): ("radius", _float),
    ("flow", "paths"): ("paths", _int),
    ("flow", "p"): ("moment_p", _float),
    ("flow", "delta"): ("delta", _float),
}
SECTIONS = ("experiment", "grid", "model", "drift", "sigma", "flow", "tolerances")


def _family_params(registry: dict, name: str) -> dict:
    sig = inspect.signature(registry[name])
    return {k: p.default for k, p in sig.parameters.items()}


def _validate(cfg: ExperimentConfig, where: dict) -> None:
    def fail(attr, msg):
        line = where.get(attr)
        loc = f"line {line}: " if line else ""
        raise ConfigError(f"{loc}{msg}")

    if cfg.scenario not in SCENARIOS:
        fail("scenario", f"unknown scenario {cfg.scenario!r}; expected one of {', '.join(SCENARIOS)}")
    if not 1 / 3 < cfg.hurst <= 0.5:
        fail("hurst", f"hurst={cfg.hurst} outside (1/3, 1/2]")
    if cfg.steps < 1:
        fail("steps", "steps must be >= 1")
    if cfg.oversample < 1:
        fail("oversample", "oversample must be >= 1")
    if not cfg.horizon > 0:
        fail("horizon", "horizon must be positive")
    if cfg.dim < 1:
        fail("dim", "dim must be >= 1")
    alpha = cfg.lift_alpha
    if not 1 / 3 < alpha < 0.5:
        fail("alpha", f"alpha={alpha} outside (1/3, 1/2)")
    if alpha >= cfg.hurst:
        fail("alpha", f"alpha={alpha} must be below hurst={cfg.hurst}")
    if len(cfg.x0) not in (1, cfg.dim):
        fail("x0", f"x0 has {len(cfg.x0)} entries for dim={cfg.dim}")
    if cfg.solver not in SOLVERS:
        fail("solver", f"unknown solver {cfg.solver!r}; expected one of {', '.join(SOLVERS)}")
    if not cfg.tol > 0:
        fail("tol", "tol must be positive")
    if cfg.max_iter < 1:
        fail("max_iter", "max_iter must be >= 1")
    if cfg.seed < 0:
        fail("seed", "seed must be non-negative")
    if cfg.threads < 1:
        fail("threads", "threads must be >= 1")
    if cfg.count < 1:
        fail("count", "count must be >= 1")
    if not cfg.radius > 0:
        fail("radius", "radius must be positive")
    if cfg.paths < 1000:
        fail("paths", "moment scaling needs paths >= 1000")
    if cfg.moment_p < 2:
        fail("moment_p", "p must be >= 2")
    if cfg.delta < 1e-8:
        fail("delta", "finite-difference delta must be >= 1e-8")
    if cfg.drift not in DRIFTS:
        fail("drift", f"unknown drift family {cfg.drift!r}; known: {', '.join(sorted(DRIFTS))}")
    if cfg.sigma not in SIGMAS:
        fail("sigma", f"unknown sigma family {cfg.sigma!r}; known: {', '.join(sorted(SIGMAS))}")
    allowed = _family_params(DRIFTS, cfg.drift)
    for k in cfg.drift_params:
        if k not in allowed:
            fail(("drift", k), f"drift family {cfg.drift!r} has no parameter {k!r}")
    allowed = _family_params(SIGMAS, cfg.sigma)
    for k in cfg.sigma_params:
        if k not in allowed:
            fail(("sigma", k), f"sigma family {cfg.sigma!r} has no parameter {k!r}")
    try:
        SIGMAS[cfg.sigma](**cfg.sigma_params)
        build_drift(cfg)
    except (TypeError, ValueError) as exc:
        fail("sigma", f"invalid coefficient parameters: {exc}")


def build_sigma(cfg: ExperimentConfig):
    """The configured diffusion field; raises :class:`ConfigError` if it does not act on ``dim``."""
    params = dict(cfg.sigma_params)
    if "dim" in _family_params(SIGMAS, cfg.sigma):
        params.setdefault("dim", cfg.dim)
    vf = SIGMAS[cfg.sigma](**params)
    try:
        shape = np.shape(vf.sigma(np.zeros((1, cfg.dim))))
    except (IndexError, ValueError):
        shape = None
    if shape != (1, cfg.dim, cfg.dim):
        raise ConfigError(f"sigma family {cfg.sigma!r} does not act on dim={cfg.dim}")
    return vf


def build_drift(cfg: ExperimentConfig):
    return DRIFTS[cfg.drift](**cfg.drift_params)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; missing keys take their defaults."""
    from .checks import MANIFEST

    known_checks = {str(c.number) for c in MANIFEST}
    values: dict = {}
    where: dict = {}
    drift_params: dict = {}
    sigma_params: dict = {}
    tolerances: dict = {}
    section = "experiment"
    headed = False
    seen: set = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            headed = True
            if section not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not headed:
            # before any header, keys are looked up across all sections
            section = next((sec for sec, k in SCHEMA if k == key), "experiment")
        if (section, key) in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{section}]")
        seen.add((section, key))
        if section in ("drift", "sigma"):
            if key == "family":
                values[section] = value
                where[section] = lineno
                continue
            try:
                num = float(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: {section} parameter {key} needs a number, got {value!r}") from None
            if num.is_integer() and "." not in value and "e" not in value.lower():
                num = int(num)
            (drift_params if section == "drift" else sigma_params)[key] = num
            where[(section, key)] = lineno
            continue
        if section == "tolerances":
            number, _, name = key.partition(".")
            if number not in known_checks or not name:
                raise ConfigError(
                    f"line {lineno}: tolerance key {key!r} must look like <criterion>.<measurement>, "
                    "for example 11.max_relerr"
                )
            try:
                tolerances[key] = float(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: tolerance {key} needs a number, got {value!r}") from None
            continue
        spec = SCHEMA.get((section, key))
        if spec is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        attr, parser = spec
        try:
            values[attr] = parser(value)
        except ValueError:
            raise ConfigError(
                f"line {lineno}: {key} expects {parser.__name__.strip('_') or 'a value'}, got {value!r}"
            ) from None
        where[attr] = lineno
    cfg = ExperimentConfig(**values, drift_params=drift_params, sigma_params=sigma_params,
                           tolerances=tolerances)
    _validate(cfg, where)
    return cfg


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    return str(v)


def echo(cfg: ExperimentConfig) -> str:
    """Canonical text: every key, fixed order; ``parse_config(echo(c)) == c``."""
    by_section: dict = {s: [] for s in SECTIONS}
    for (section, key), (attr, _) in SCHEMA.items():
        by_section[section].append(f"{key} = {_fmt(getattr(cfg, attr))}")
    by_section["drift"] = [f"family = {cfg.drift}"] + [
        f"{k} = {_fmt(v)}" for k, v in sorted(cfg.drift_params.items())
    ]
    by_section["sigma"] = [f"family = {cfg.sigma}"] + [
        f"{k} = {_fmt(v)}" for k, v in sorted(cfg.sigma_params.items())
    ]
    by_section["tolerances"] = [f"{k} = {_fmt(float(v))}" for k, v in sorted(cfg.tolerances.items())]
    chunks = []
    for s in SECTIONS:
        if by_section[s] or s != "tolerances":
            chunks.append(f"[{s}]\n" + "\n".join(by_section[s]))
    return "\n\n".join(chunks) + "\n"


def as_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Apply command-line overrides (``None`` values ignored) and revalidate."""
    kw = {k: v for k, v in kw.items() if v is not None}
    new = replace(cfg, **kw)
    _validate(new, {})
    return new
