"""Experiment config: flat ``key = value`` text with dotted keys.

See the README for the full grammar. Parsing is strict: unknown keys,
duplicate keys and out-of-range values are errors that name the key (and
the line for syntax problems).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional

from .noise import Distribution, Partition, clipped_gaussian, constant, two_point, uniform
from .scenarios import SCENARIOS

ANALYSES = ("lyapunov", "t1", "t2", "t3", "t4", "ms-rate", "mean-trajectory",
            "deviation-bound", "sync", "mean-decay")

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*(\.[A-Za-z0-9_\-]+)*$")
_DIST = re.compile(r"^([a-z_]+)\s*\((.*)\)$")

SCENARIO_PARAMS = {
    "linear_random_gain": {"x0"},
    "stochastic_gradient": {"hessian", "mu", "x0", "x0b"},
    "linear_random_rate": {"x0"},
    "cubic_additive": {"c1", "c3", "dim", "x0", "x0b"},
    "vdp_coupled": {"alpha", "w", "x0"},
}

FIXED_KEYS = {
    "scenario", "noise.dist", "noise.dist2", "noise.cell", "noise.boundaries",
    "horizon.steps", "horizon.time", "integrator.h", "ensemble.paths", "ensemble.seed",
    "output.dir", "output.stride", "output.trajectories", "analyses",
    "analysis.t1.eta", "analysis.t2.eta", "analysis.t3.eta", "analysis.t4.eta",
    "analysis.lyapunov.tail", "analysis.sync.threshold", "analysis.sync.tail",
    "analysis.sync.min_fraction",
}

# analyses that only make sense for some scenario families
APPLICABLE = {
    "t1": {"linear_random_gain"},
    "t2": {"linear_random_gain"},
    "ms-rate": {"linear_random_gain", "stochastic_gradient"},
    "t3": {"linear_random_rate", "cubic_additive"},
    "t4": {"linear_random_rate", "cubic_additive"},
    "mean-trajectory": {"cubic_additive"},
    "deviation-bound": {"cubic_additive"},
    "sync": {"vdp_coupled"},
    "mean-decay": {"stochastic_gradient"},
}


class ConfigError(ValueError):
    pass


def parse_distribution(text: str) -> Distribution:
    m = _DIST.match(text.strip())
    if not m:
        raise ValueError(f"not a distribution: {text!r}")
    kind, body = m.group(1), m.group(2)
    try:
        args = [float(a) for a in body.split(",")] if body.strip() else []
    except ValueError:
        raise ValueError(f"bad distribution arguments: {text!r}") from None
    table = {"uniform": (uniform, (2,)), "two_point": (two_point, (2, 3)),
             "clipped_gaussian": (clipped_gaussian, (3,)), "constant": (constant, (1,))}
    if kind not in table:
        raise ValueError(f"unknown distribution kind {kind!r}")
    fn, arity = table[kind]
    if len(args) not in arity:
        raise ValueError(f"{kind} takes {' or '.join(map(str, arity))} arguments, got {len(args)}")
    return fn(*args)


def _floats(text: str) -> list[float]:
    out = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if not out or not all(math.isfinite(v) for v in out):
        raise ValueError(f"expected finite numbers, got {text!r}")
    return out


def _int(text: str) -> int:
    v = float(text)
    if not math.isfinite(v) or v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass
class ExperimentConfig:
    scenario: str
    params: dict
    dist: Distribution
    dist2: Optional[Distribution] = None
    cell: Optional[float] = None
    boundaries: Optional[tuple] = None
    steps: Optional[int] = None
    time: Optional[float] = None
    h: Optional[float] = None
    paths: int = 1
    seed: int = 0
    out_dir: str = "out"
    stride: Optional[int] = None
    trajectories: bool = True
    analyses: tuple = ()
    etas: dict = field(default_factory=dict)
    lyap_tail: float = 0.5
    sync_threshold: float = 1e-3
    sync_tail: float = 0.2
    sync_min_fraction: float = 0.95

    @property
    def continuous(self) -> bool:
        return SCENARIOS[self.scenario].kind == "continuous"

    @property
    def partition(self) -> Optional[Partition]:
        if self.cell is not None:
            return Partition(cell=self.cell)
        if self.boundaries is not None:
            return Partition(boundaries=self.boundaries)
        return None

    def echo(self) -> list[str]:
        """Resolved config as ``key = value`` lines (defaults included)."""
        out = [f"scenario = {self.scenario}"]
        out += [f"params.{k} = {v}" for k, v in sorted(self.params.items())]
        out.append(f"noise.dist = {self.dist.describe()}")
        if self.dist2 is not None:
            out.append(f"noise.dist2 = {self.dist2.describe()}")
        if self.cell is not None:
            out.append(f"noise.cell = {self.cell!r}")
        if self.boundaries is not None:
            out.append("noise.boundaries = " + ", ".join(repr(b) for b in self.boundaries))
        if self.steps is not None:
            out.append(f"horizon.steps = {self.steps}")
        if self.time is not None:
            out.append(f"horizon.time = {self.time!r}")
        out.append(f"integrator.h = {self.h!r}" if self.h is not None else "integrator.h = auto")
        out += [f"ensemble.paths = {self.paths}", f"ensemble.seed = {self.seed}",
                f"output.dir = {self.out_dir}",
                f"output.stride = {self.stride if self.stride is not None else 'auto'}",
                f"output.trajectories = {str(self.trajectories).lower()}",
                "analyses = " + ", ".join(self.analyses)]
        out += [f"analysis.{k}.eta = {v!r}" for k, v in sorted(self.etas.items())]
        out += [f"analysis.lyapunov.tail = {self.lyap_tail!r}",
                f"analysis.sync.threshold = {self.sync_threshold!r}",
                f"analysis.sync.tail = {self.sync_tail!r}",
                f"analysis.sync.min_fraction = {self.sync_min_fraction!r}"]
        return out


def _lex(text: str) -> dict:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = (value, lineno)
    return entries


def parse_config(text: str) -> ExperimentConfig:
    entries = _lex(text)
    if "scenario" not in entries:
        raise ConfigError("missing required key 'scenario'")
    scen = entries["scenario"][0]
    if scen not in SCENARIOS:
        raise ConfigError(f"scenario: unknown scenario {scen!r} (known: {', '.join(SCENARIOS)})")
    allowed_params = SCENARIO_PARAMS[scen]
    for key, (_, lineno) in entries.items():
        if key in FIXED_KEYS:
            continue
        if key.startswith("params.") and key[7:] in allowed_params:
            continue
        raise ConfigError(f"line {lineno}: unknown key {key!r}")

    def get(key, conv, default=None):
        if key not in entries:
            return default
        value, lineno = entries[key]
        try:
            return conv(value)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{key}: {e}") from None

    params = dict(SCENARIOS[scen].params)
    params.update({k[7:]: v for k, (v, _) in entries.items() if k.startswith("params.")})
    if "noise.dist" not in entries:
        raise ConfigError("missing required key 'noise.dist'")
    cfg = ExperimentConfig(scenario=scen, params=params, dist=get("noise.dist", parse_distribution))
    cfg.dist2 = get("noise.dist2", parse_distribution)
    if cfg.dist2 is not None and scen != "vdp_coupled":
        raise ConfigError("noise.dist2: only used by vdp_coupled")
    cfg.cell = get("noise.cell", float)
    cfg.boundaries = get("noise.boundaries", lambda v: tuple(_floats(v)))
    if cfg.cell is not None and cfg.boundaries is not None:
        raise ConfigError("noise.cell and noise.boundaries are mutually exclusive")
    if cfg.cell is not None and not cfg.cell > 0:
        raise ConfigError(f"noise.cell: must be > 0, got {cfg.cell}")
    cfg.steps = get("horizon.steps", _int)
    cfg.time = get("horizon.time", float)
    if cfg.continuous:
        if cfg.steps is not None:
            raise ConfigError("horizon.steps: continuous scenario takes horizon.time")
        if cfg.time is None:
            raise ConfigError("missing required key 'horizon.time'")
        if not cfg.time > 0:
            raise ConfigError(f"horizon.time: must be > 0, got {cfg.time}")
        if cfg.partition is None:
            raise ConfigError("continuous scenario needs noise.cell or noise.boundaries")
    else:
        if cfg.time is not None:
            raise ConfigError("horizon.time: discrete scenario takes horizon.steps")
        if cfg.steps is None:
            raise ConfigError("missing required key 'horizon.steps'")
        if cfg.steps < 1:
            raise ConfigError(f"horizon.steps: must be >= 1, got {cfg.steps}")
        if cfg.cell is not None or cfg.boundaries is not None:
            raise ConfigError("noise.cell: discrete scenarios use an iid sequence, not a partition")
        if "integrator.h" in entries:
            raise ConfigError("integrator.h: discrete scenarios have no integrator")
    cfg.h = get("integrator.h", float)
    if cfg.h is not None and not cfg.h > 0:
        raise ConfigError(f"integrator.h: must be > 0, got {cfg.h}")
    cfg.paths = get("ensemble.paths", _int, 1)
    if cfg.paths < 1:
        raise ConfigError(f"ensemble.paths: must be >= 1, got {cfg.paths}")
    cfg.seed = get("ensemble.seed", _int, 0)
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError(f"ensemble.seed: must be an unsigned 64-bit integer, got {cfg.seed}")
    cfg.out_dir = get("output.dir", str, "out")
    cfg.stride = get("output.stride", _int)
    if cfg.stride is not None and cfg.stride < 1:
        raise ConfigError(f"output.stride: must be >= 1, got {cfg.stride}")
    cfg.trajectories = get("output.trajectories", _bool, True)
    an = get("analyses", lambda v: tuple(a.strip() for a in v.split(",") if a.strip()), ())
    for a in an:
        if a not in ANALYSES:
            raise ConfigError(f"analyses: unknown analysis {a!r}")
        if a in APPLICABLE and scen not in APPLICABLE[a]:
            raise ConfigError(f"analyses: {a!r} does not apply to scenario {scen!r}")
    if len(set(an)) != len(an):
        raise ConfigError("analyses: listed twice")
    cfg.analyses = an
    for t in ("t1", "t2", "t3", "t4"):
        v = get(f"analysis.{t}.eta", float)
        if v is not None:
            cfg.etas[t] = v
    cfg.lyap_tail = get("analysis.lyapunov.tail", float, 0.5)
    if not 0 < cfg.lyap_tail <= 1:
        raise ConfigError(f"analysis.lyapunov.tail: must be in (0, 1], got {cfg.lyap_tail}")
    cfg.sync_threshold = get("analysis.sync.threshold", float, 1e-3)
    cfg.sync_tail = get("analysis.sync.tail", float, 0.2)
    cfg.sync_min_fraction = get("analysis.sync.min_fraction", float, 0.95)
    return cfg
