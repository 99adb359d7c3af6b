"""YAML run configuration and its key schema.

A bench config looks like::

    scenarios:
      - {outcome: continuous, response: sin}
      - {outcome: binary, response: linear}
    methods: [sagdiv-kernel, kiv, 2sls, naive]
    repetitions: 10
    seed: 0
    budget: paper          # "paper" (3000), "half" (1500) or an integer
    options:
      sagdiv-kernel: {warm_up: 100, bound: 10.0, density_ratio: {lam: 0.001}}
      kiv: {xi_rule: direct}

A fit config uses ``method``, ``outcome`` and optionally ``beta``, ``seed``
and ``options``.  Unknown keys anywhere are rejected before any work starts.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import yaml

from ..benchmarks import BINARY, BUDGETS, CONTINUOUS, METHODS, ScenarioSpec
from ..errors import ConfigError, SagdivError

TOP_KEYS = {
    "scenarios", "methods", "repetitions", "seed", "budget", "n_test", "beta",
    "options", "timings", "method", "outcome",
}
SCENARIO_KEYS = {"outcome", "response"}
DENSITY_KEYS = {"lam", "n_basis", "cap", "n_folds", "bandwidth_scale", "product_pairs"}
METHOD_OPTION_KEYS = {
    "sagdiv-kernel": {"warm_up", "bound", "density_ratio"},
    "sagdiv-rawy": {"warm_up", "bound", "density_ratio"},
    "kiv": {"xi_rule"},
    "2sls": set(),
    "naive": set(),
}


@dataclass
class RunConfig:
    scenarios: list[ScenarioSpec] = field(default_factory=list)
    methods: tuple[str, ...] = METHODS
    repetitions: int = 10
    seed: int = 0
    options: dict = field(default_factory=dict)
    timings: bool = False
    method: str = "sagdiv-kernel"
    outcome: str = CONTINUOUS
    beta: float = math.sqrt(0.1)
    sha256: str = ""


def _unknown(keys, allowed, where):
    bad = sorted(str(k) for k in keys if k not in allowed)
    if bad:
        raise ConfigError(f"unknown keys in {where}: {', '.join(bad)}", bad)


def _int(value, name, minimum=0):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}", [name])
    return value


def _budget(value):
    if isinstance(value, str):
        if value not in BUDGETS:
            raise ConfigError(f"budget preset must be one of {sorted(BUDGETS)}, got {value!r}", ["budget"])
        return BUDGETS[value]
    return _int(value, "budget", 50)


def _check_options(options):
    if not isinstance(options, dict):
        raise ConfigError("options must be a mapping", ["options"])
    _unknown(options, METHOD_OPTION_KEYS, "options")
    for method, opts in options.items():
        if not isinstance(opts, dict):
            raise ConfigError(f"options.{method} must be a mapping", [f"options.{method}"])
        _unknown(opts, METHOD_OPTION_KEYS[method], f"options.{method}")
        density = opts.get("density_ratio", {})
        if not isinstance(density, dict):
            raise ConfigError(f"options.{method}.density_ratio must be a mapping", [f"options.{method}.density_ratio"])
        _unknown(density, DENSITY_KEYS, f"options.{method}.density_ratio")
        if "bandwidth_scale" in density:
            density["bandwidth_scale"] = tuple(float(v) for v in density["bandwidth_scale"])
    return options


def parse_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    _unknown(raw, TOP_KEYS, "config")

    cfg = RunConfig(sha256=hashlib.sha256(text.encode()).hexdigest())
    cfg.repetitions = _int(raw.get("repetitions", cfg.repetitions), "repetitions", 1)
    cfg.seed = _int(raw.get("seed", cfg.seed), "seed")
    cfg.timings = bool(raw.get("timings", False))
    cfg.options = _check_options(raw.get("options", {}) or {})
    methods = raw.get("methods", list(METHODS))
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods must be a non-empty list", ["methods"])
    _unknown(methods, METHODS, "methods")
    cfg.methods = tuple(methods)
    cfg.method = raw.get("method", cfg.method)
    _unknown([cfg.method], METHODS, "method")
    cfg.outcome = raw.get("outcome", cfg.outcome)
    if cfg.outcome not in (CONTINUOUS, BINARY):
        raise ConfigError(f"outcome must be {CONTINUOUS!r} or {BINARY!r}", ["outcome"])
    beta = raw.get("beta", cfg.beta)
    if isinstance(beta, bool) or not isinstance(beta, (int, float)) or not beta > 0:
        raise ConfigError("beta must be a positive number", ["beta"])
    cfg.beta = float(beta)

    budget = _budget(raw.get("budget", "paper"))
    n_test = _int(raw.get("n_test", 1000), "n_test", 1)
    scenarios = raw.get("scenarios", [])
    if not isinstance(scenarios, list):
        raise ConfigError("scenarios must be a list", ["scenarios"])
    for i, entry in enumerate(scenarios):
        if not isinstance(entry, dict):
            raise ConfigError(f"scenarios[{i}] must be a mapping", [f"scenarios[{i}]"])
        _unknown(entry, SCENARIO_KEYS, f"scenarios[{i}]")
        try:
            cfg.scenarios.append(
                ScenarioSpec(entry.get("outcome", CONTINUOUS), entry.get("response", "linear"), budget, n_test, cfg.beta)
            )
        except SagdivError as exc:
            raise ConfigError(f"scenarios[{i}]: {exc}", [f"scenarios[{i}]"]) from exc
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
