"""JSON run configuration with documented defaults and strict validation."""

from __future__ import annotations

import json
import os
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

SEED_ENV = "CREDMORT_SEED"


def _f(default, help: str, factory=False):
    if factory:
        return field(default_factory=default, metadata={"help": help})
    return field(default=default, metadata={"help": help})


@dataclass
class SimulateSection:
    ages: list = _f(lambda: [16, 85], "first and last tabulated age", True)
    years: list = _f(lambda: [1980, 2021], "first and last tabulated calendar year", True)
    entry_age: int = _f(0, "age at which every cohort enters at full size")
    cohort_size: dict = _f(lambda: {"1": 5000, "2": 500, "3": 94500}, "initial lives per cohort and sub-population", True)
    theta_law: dict = _f(
        lambda: {"1": ["uniform", 0.7, 0.8], "2": ["uniform", 1.2, 1.3], "3": ["constant", 1.0]},
        "per-age random-effect law: [uniform, lo, hi] | [lognormal, var] | [constant, value]", True)
    baseline: dict = _f(
        lambda: {"kind": "gompertz", "level": -9.8, "slope": 0.095, "improvement": 0.022,
                 "improvement_age": -0.00015, "ref_year": 2000},
        "baseline log-odds: gompertz parameters, or {kind: csv, path: FILE} with header age,year,delta", True)


@dataclass
class GlobalModelSection:
    family: str = _f("LC", "GAPC family: LC | APC | RH")
    tol: float = _f(1e-8, "absolute deviance change that ends the fit")
    max_sweeps: int = _f(10_000, "maximum block-Newton sweeps")


@dataclass
class ForecastSection:
    h: int = _f(6, "forecast horizon in years")
    mode: str = _f("lognormal", "global mean rate: lognormal | plugin")
    frozen_orders: dict = _f(dict, 'fixed ARIMA orders, e.g. {"kappa": [0,1,0]}; empty means BIC selection', True)


@dataclass
class CredibilitySection:
    binning: bool = _f(True, "use CART-binned theta_hat and Var(Theta)")
    folds: int = _f(5, "cross-validation folds for the binning tree")


@dataclass
class MsepSection:
    form: str = _f("exact", "closed-form MSEP: exact | independent")
    bootstrap_b: int = _f(200, "bootstrap replications for the separate-model benchmark (>= 200)")
    fan_age: int = _f(65, "age for the fan-plot table")
    fan_h: int = _f(5, "horizon of the fan-plot table")
    pois_sims: int = _f(100_000, "Poisson simulations per fan-plot cell")
    t_prime: int = _f(2015, "last in-sample year for msep and fan-plot output")


@dataclass
class EvaluateSection:
    t_prime: int = _f(2015, "last in-sample year of the first window")
    h: int = _f(6, "number of one-step-ahead window steps")
    age_groups: list = _f(lambda: [[a, a + 4] for a in range(16, 86, 5)], "age brackets [lo, hi] for the metrics", True)
    approaches: list = _f(lambda: ["A", "B", "C", "D"], "approaches to score", True)
    replications: int = _f(3, "independent simulated data sets")


@dataclass
class IoSection:
    out_dir: str = _f("out", "directory for all outputs")
    data: str = _f("", "input mortality CSV; empty means simulate from the simulate section")


@dataclass
class RunConfig:
    simulate: SimulateSection = field(default_factory=SimulateSection)
    global_model: GlobalModelSection = field(default_factory=GlobalModelSection)
    forecast: ForecastSection = field(default_factory=ForecastSection)
    credibility: CredibilitySection = field(default_factory=CredibilitySection)
    msep: MsepSection = field(default_factory=MsepSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    io: IoSection = field(default_factory=IoSection)
    seed: int = 2024

    def to_dict(self) -> dict:
        return asdict(self)


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig) if f.default_factory is not MISSING}


def _type_ok(value, default) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, type(default))


def _semantic(cfg: RunConfig) -> list[str]:
    p = []
    s = cfg.simulate
    for name in ("ages", "years"):
        v = getattr(s, name)
        if len(v) != 2 or not all(isinstance(x, int) for x in v) or v[0] > v[1]:
            p.append(f"simulate.{name} must be [first, last] integers")
    if set(s.cohort_size) != set(s.theta_law):
        p.append("simulate.cohort_size and simulate.theta_law must name the same populations")
    if cfg.global_model.family not in ("LC", "APC", "RH"):
        p.append(f"global_model.family: unknown family {cfg.global_model.family!r}")
    if cfg.forecast.mode not in ("lognormal", "plugin"):
        p.append(f"forecast.mode: must be lognormal or plugin, got {cfg.forecast.mode!r}")
    if cfg.forecast.h < 1:
        p.append("forecast.h must be >= 1")
    if cfg.msep.form not in ("exact", "independent"):
        p.append(f"msep.form: must be exact or independent, got {cfg.msep.form!r}")
    if cfg.msep.bootstrap_b < 200:
        p.append("msep.bootstrap_b must be >= 200")
    if cfg.evaluate.h < 1:
        p.append("evaluate.h must be >= 1")
    if cfg.evaluate.replications < 1:
        p.append("evaluate.replications must be >= 1")
    bad = set(cfg.evaluate.approaches) - {"A", "B", "C", "D"}
    if bad:
        p.append(f"evaluate.approaches: unknown {sorted(bad)}")
    if cfg.credibility.folds < 2:
        p.append("credibility.folds must be >= 2")
    return p


def from_dict(d: dict) -> RunConfig:
    """Build a config, reporting every unknown key, wrong type and bad value together."""
    problems = []
    if not isinstance(d, dict):
        raise ConfigError(["config root must be a JSON object"])
    kwargs: dict[str, Any] = {}
    for key, value in d.items():
        if key == "seed":
            if not _type_ok(value, 0):
                problems.append("seed: expected an integer")
            else:
                kwargs["seed"] = value
            continue
        if key not in _SECTIONS:
            problems.append(f"unknown key {key!r}")
            continue
        if not isinstance(value, dict):
            problems.append(f"{key}: expected an object")
            continue
        proto = _SECTIONS[key]()
        known = {f.name for f in fields(proto)}
        vals = {}
        for k, v in value.items():
            if k not in known:
                problems.append(f"unknown key '{key}.{k}'")
            elif not _type_ok(v, getattr(proto, k)):
                problems.append(f"{key}.{k}: expected {type(getattr(proto, k)).__name__}, got {type(v).__name__}")
            else:
                vals[k] = float(v) if isinstance(getattr(proto, k), float) else v
        kwargs[key] = type(proto)(**vals)
    # semantic checks still run on whatever parsed, so every violation is listed together
    cfg = RunConfig(**kwargs)
    problems += _semantic(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def set_dotted(d: dict, path: str, raw: str) -> None:
    """Apply ``--a.b value``; the value is parsed as JSON, falling back to a plain string."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = path.split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([f"override {path}: {p} is not a section"])
    node[parts[-1]] = value


def load(path: str | None = None, overrides: list[tuple[str, str]] = (), env=None) -> RunConfig:
    """Config file, then the seed environment variable, then dotted overrides."""
    env = os.environ if env is None else env
    d: dict = {}
    if path:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError([f"config file not found: {path}"]) from None
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})"]) from None
    if env.get(SEED_ENV):
        try:
            d["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError([f"{SEED_ENV} must be an integer"]) from None
    for key, raw in overrides:
        set_dotted(d, key, raw)
    return from_dict(d)


def describe() -> str:
    """Every config key with its default and meaning."""
    lines = []
    defaults = RunConfig()
    for sf in fields(RunConfig):
        if sf.name == "seed":
            lines.append(f"  seed = {defaults.seed}  (master seed; {SEED_ENV} overrides)")
            continue
        sec = getattr(defaults, sf.name)
        for f in fields(sec):
            lines.append(f"  {sf.name}.{f.name} = {json.dumps(getattr(sec, f.name))}  ({f.metadata['help']})")
    return "\n".join(lines)
