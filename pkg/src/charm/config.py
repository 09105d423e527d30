"""Run configuration files and named experiment presets.

A run configuration is a YAML mapping with these optional sections; every
key has a default and unknown keys are rejected::

    system:    SystemConfig fields (n_tx, n_rx, n_subcarriers, ...)
    scenario:  ScenarioConfig fields (n_locations, trials_per_location, ...)
    estimator: tikhonov_lambda, condition_threshold
    omp:       max_iterations, stop_at_noise_floor
    lmmse:     training_set_size, covariance
    sweep:     axis (T | snr | bias), values, T, snr_db, bias_std
    methods:   list of method names
    output:    results (CSV path), scenarios (directory or null)
    jobs:      worker processes

See ``configs/example.yaml`` for a commented example.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import yaml

from .baselines import LmmseConfig, Omp3dConfig
from .channel import SystemConfig
from .errors import ConfigError
from .estimator import EstimatorConfig
from .harness import ScenarioConfig, SweepSpec, validate_methods

DEFAULT_RESULTS = "results.csv"

FIGURE_METHODS = ("charm", "charm-norefine", "omp3d", "lmmse-kron", "kron-omp")

PRESETS = {
    "fig2": (SweepSpec("T", tuple(range(2, 9))), FIGURE_METHODS),
    "fig3": (SweepSpec("snr", tuple(float(s) for s in range(-15, 31, 5))), FIGURE_METHODS),
    "fig4": (SweepSpec("bias", tuple(np.round(np.arange(11) * 0.02, 2).tolist())),
             ("charm", "charm-trust", "charm-norefine", "omp3d")),
    "fig5": (SweepSpec("T", tuple(range(2, 9))), FIGURE_METHODS),
    "table1": (SweepSpec("T", (4,)), ("charm", "charm-trust", "charm-norefine", "omp3d",
                                      "lmmse-kron", "kron-omp")),
}


@dataclass(frozen=True)
class OutputConfig:
    results: str = DEFAULT_RESULTS
    scenarios: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    omp: Omp3dConfig = field(default_factory=Omp3dConfig)
    lmmse: LmmseConfig = field(default_factory=LmmseConfig)
    sweep: SweepSpec = field(default_factory=lambda: PRESETS["table1"][0])
    methods: Tuple[str, ...] = PRESETS["table1"][1]
    output: OutputConfig = field(default_factory=OutputConfig)
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(validate_methods(self.methods)))
        if int(self.jobs) != self.jobs or self.jobs < 1:
            raise ConfigError("jobs must be a positive integer")

    def with_preset(self, name: str) -> "RunConfig":
        sweep, methods = preset(name)
        return replace(self, sweep=sweep, methods=methods)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "system":
                value = value.to_dict()
            elif f.name == "methods":
                value = list(value)
            elif hasattr(value, "__dataclass_fields__"):
                value = asdict(value)
            out[f.name] = value
        out["sweep"]["values"] = list(out["sweep"]["values"])
        for key in ("path_count_range", "delay_range"):
            if out["scenario"][key] is not None:
                out["scenario"][key] = list(out["scenario"][key])
        return out


def preset(name: str):
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}") from None


_SECTIONS = {
    "scenario": ScenarioConfig,
    "estimator": EstimatorConfig,
    "omp": Omp3dConfig,
    "lmmse": LmmseConfig,
    "sweep": SweepSpec,
    "output": OutputConfig,
}


def _build(cls, data, section: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    if cls is SweepSpec:
        base = asdict(PRESETS["table1"][0])
        data = {**base, **data}
        if "values" in data and not isinstance(data["values"], (list, tuple)):
            raise ConfigError("sweep.values must be a list")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from None


def config_from_dict(data: Optional[dict]) -> RunConfig:
    data = dict(data or {})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {}
    if "system" in data:
        if not isinstance(data["system"], dict):
            raise ConfigError("section 'system' must be a mapping")
        try:
            kwargs["system"] = SystemConfig.from_dict(data["system"])
        except TypeError as exc:
            raise ConfigError(f"section 'system': {exc}") from None
    for section, cls in _SECTIONS.items():
        if section in data:
            kwargs[section] = _build(cls, data[section], section)
    if "methods" in data:
        if not isinstance(data["methods"], (list, tuple)):
            raise ConfigError("methods must be a list")
        kwargs["methods"] = tuple(data["methods"])
    if "jobs" in data:
        kwargs["jobs"] = data["jobs"]
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    """Parse a YAML run configuration; ``OSError`` propagates for missing files."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)
