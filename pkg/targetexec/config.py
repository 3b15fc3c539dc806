"""
Run configuration.

A config document is YAML with four sections:

    preset: baseline
    params:   {b, l, gamma, sigma, phi, q0, s0, x0, k_lower, h_upper, t_max}
    run:      {strategy, n_paths, dt, sample_times, by_times, master_seed,
               threads, s_lower, q_epsilon, barrier, histogram_statistic, n_bins}
    output:   {directory}
    surrogate: {mu, s}    # optional, switches the engine to dY = mu dt + s dW

Every key is optional; missing keys take the preset's defaults.
"""

from __future__ import annotations

import copy
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from targetexec.model_core import ModelParams


class ConfigError(ValueError):
    pass


class RunSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    strategy: str = "p1"
    n_paths: int = Field(10_000, ge=1)
    dt: float = Field(1e-4, gt=0)
    sample_times: list[float] | None = None
    by_times: list[float] | None = None
    master_seed: int = Field(42, ge=0, lt=2**64)
    threads: int = Field(1, ge=1)
    s_lower: float | None = None
    q_epsilon: float | None = Field(None, ge=0)
    barrier: bool = True
    histogram_statistic: Literal["performance", "p5_objective"] = "performance"
    n_bins: int = Field(50, ge=2)

    @field_validator("sample_times", "by_times")
    @classmethod
    def _increasing(cls, v):
        if v is not None and any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("times must be strictly increasing")
        return v


class OutputSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    directory: str = "results"


class SurrogateSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mu: float = 0.0
    s: float = Field(1.0, gt=0)


# baseline: S0 = 1 + gamma so that Y0 = 1
_BASELINE = {}
# running-penalty setup, b = 0
_PENALIZED = {
    "b": 0.0,
    "l": 1e-4,
    "gamma": 0.1,
    "sigma": 0.1,
    "phi": 1e-3,
    "x0": 0.0,
    "q0": 1.0,
    "s0": 20.0,
    "k_lower": 19.85,
    "h_upper": 19.95,
    "t_max": 1.0,
}
_PENALIZED_RUN = {"s_lower": 19.9, "barrier": False}
_SURROGATE_PARAMS = {"x0": 0.0, "q0": 1.0, "s0": 0.1, "gamma": 0.1, "k_lower": -1.0, "h_upper": 1.0, "t_max": 10.0}

PRESET_DEFAULTS: dict[str, dict] = {
    "baseline": {"params": _BASELINE, "run": {}},
    "fig1": {"params": _BASELINE, "run": {}},
    "fig2": {"params": _BASELINE, "run": {}},
    "fig2b": {"params": _BASELINE, "run": {}},
    "fig3": {"params": _BASELINE, "run": {}},
    "table2": {"params": {"t_max": 0.1}, "run": {"sample_times": [0.02, 0.06, 0.1]}},
    "section5": {"params": _PENALIZED, "run": {**_PENALIZED_RUN, "histogram_statistic": "p5_objective"}},
    "fig4": {"params": _PENALIZED, "run": _PENALIZED_RUN},
    "fig5": {"params": _PENALIZED, "run": {**_PENALIZED_RUN, "histogram_statistic": "p5_objective"}},
    "surrogate": {"params": _SURROGATE_PARAMS, "run": {"dt": 2.5e-4, "by_times": [10.0]}},
}

_SECTIONS = {"preset", "params", "run", "output", "surrogate"}


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    preset: str = "baseline"
    params: ModelParams = ModelParams()
    run: RunSettings = RunSettings()
    output: OutputSettings = OutputSettings()
    surrogate: SurrogateSettings | None = None

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, v: str) -> str:
        if v not in PRESET_DEFAULTS:
            raise ValueError(f"unknown preset {v!r}, expected one of {sorted(PRESET_DEFAULTS)}")
        return v

    @model_validator(mode="after")
    def _times_within_horizon(self) -> "RunConfig":
        horizon = self.params.t_max
        for name in ("sample_times", "by_times"):
            times = getattr(self.run, name)
            if times and (times[0] < 0 or times[-1] > horizon + 1e-12):
                raise ValueError(f"run.{name} must lie in [0, t_max={horizon}]")
        return self


def preset_document(preset: str) -> dict:
    if preset not in PRESET_DEFAULTS:
        raise ConfigError(f"unknown preset {preset!r}, expected one of {sorted(PRESET_DEFAULTS)}")
    doc = copy.deepcopy(PRESET_DEFAULTS[preset])
    doc["preset"] = preset
    return doc


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _format_errors(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "document"
        msg = e["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}")
    return "; ".join(parts)


def config_from_dict(doc: dict, preset: str | None = None) -> RunConfig:
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}, expected {sorted(_SECTIONS)}")
    for section in ("params", "run", "output", "surrogate"):
        if section in doc and doc[section] is not None and not isinstance(doc[section], dict):
            raise ConfigError(f"section {section!r} must be a mapping")
    name = preset or doc.get("preset") or "baseline"
    merged = _merge(preset_document(name), {k: v for k, v in doc.items() if v is not None})
    merged["preset"] = name
    try:
        return RunConfig(**merged)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {_format_errors(e)}") from e


def parse_config(text: str, preset: str | None = None) -> RunConfig:
    """Parse a YAML document, filling defaults from `preset` (or the document's own preset key)."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        problem = getattr(e, "problem", None) or str(e)
        raise ConfigError(f"malformed config document{where}: {problem}") from e
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping of sections")
    return config_from_dict(doc, preset)


def emit_config(config: RunConfig) -> str:
    doc = config.model_dump(mode="json")
    if doc["surrogate"] is None:
        del doc["surrogate"]
    return yaml.safe_dump(doc, sort_keys=False)


def with_overrides(config: RunConfig, *, run: dict | None = None, output: dict | None = None) -> RunConfig:
    """Copy of `config` with command-line overrides; None values are ignored."""
    doc = config.model_dump(mode="json")
    for section, changes in (("run", run), ("output", output)):
        doc[section].update({k: v for k, v in (changes or {}).items() if v is not None})
    return config_from_dict(doc)
