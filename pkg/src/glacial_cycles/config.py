"""Run configuration: flat ``key = value`` files with dotted namespaces.

::

    # comment
    params.b0 = 1.5
    integrator.event_tol = 1e-10
    experiment.sweep_step = 0.02
    output.directory = runs/sweep

Unknown keys and unparsable values are errors carrying the line number.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .integrator import IntegratorConfig
from .model import ModelParameters, Regime


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSettings:
    # simulate: start point; unset coordinates fall back to the projected retreat sink on the plane
    start_w: Optional[float] = None
    start_eta: Optional[float] = None
    start_xi: Optional[float] = None
    start_regime: Optional[Regime] = None
    sample_dt: Optional[float] = None
    # orbit
    orbit_tol: float = 1e-10
    max_iterations: int = 500
    n_seeds: int = 5
    rng_seed: int = 0
    allow_inadmissible: bool = False
    # sweep-b0
    sweep_start: float = 1.5
    sweep_stop: float = 2.5
    sweep_step: float = 0.02
    sweep_refine: bool = True
    workers: int = 1
    # nullclines
    nullcline_points: int = 201

    def __post_init__(self):
        for name in ("sweep_start", "sweep_stop", "sweep_step"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.sweep_step > 0:
            raise ValueError("sweep_step must be positive")
        if self.sweep_stop < self.sweep_start:
            raise ValueError("sweep_stop must not be below sweep_start")
        if self.sample_dt is not None and not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")
        if self.nullcline_points < 2:
            raise ValueError("nullcline_points must be at least 2")
        if self.workers < 1 or self.n_seeds < 0 or self.max_iterations < 1:
            raise ValueError("workers and max_iterations must be positive, n_seeds non-negative")
        if not self.orbit_tol > 0:
            raise ValueError("orbit_tol must be positive")


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"


@dataclass(frozen=True)
class RunConfig:
    params: ModelParameters = field(default_factory=ModelParameters)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    output: OutputSettings = field(default_factory=OutputSettings)


_SECTIONS = {
    "params": ModelParameters,
    "integrator": IntegratorConfig,
    "experiment": ExperimentSettings,
    "output": OutputSettings,
}


def _coerce(raw: str, annotation):
    text = raw.strip()
    origin = typing.get_origin(annotation)
    if origin is Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if text.lower() in ("none", ""):
            return None
        return _coerce(text, args[0])
    if annotation is bool:
        if text.lower() in ("true", "yes", "1", "on"):
            return True
        if text.lower() in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if annotation is int:
        return int(text)
    if annotation is float:
        return float(text)
    if isinstance(annotation, type) and issubclass(annotation, enum.Enum):
        try:
            return annotation(text.lower())
        except ValueError:
            choices = ", ".join(m.value for m in annotation)
            raise ValueError(f"expected one of {choices}, got {text!r}") from None
    if annotation is str:
        if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
            return text[1:-1]
        return text
    raise TypeError(f"unsupported field type {annotation!r}")


def parse_assignments(pairs: list[tuple[str, str, str]]) -> dict[str, dict]:
    """Turn ``(where, key, value)`` triples into per-section keyword dicts."""
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    for where, key, value in pairs:
        section, _, name = key.strip().partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"{where}: unknown key {key.strip()!r}")
        hints = typing.get_type_hints(_SECTIONS[section])
        if name not in hints or name not in {f.name for f in dataclasses.fields(_SECTIONS[section])}:
            raise ConfigError(f"{where}: unknown key {key.strip()!r}")
        try:
            sections[section][name] = _coerce(value, hints[name])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: bad value for {key.strip()!r}: {exc}") from None
    return sections


def build_config(sections: dict[str, dict]) -> RunConfig:
    built = {}
    for name, cls in _SECTIONS.items():
        try:
            built[name] = cls(**sections.get(name, {}))
        except ValueError as exc:
            raise ConfigError(f"invalid {name} settings: {exc}") from None
    return RunConfig(**built)


def _lines_to_pairs(text: str, source: str) -> list[tuple[str, str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = stripped.split("=", 1)
        pairs.append((f"{source}:{lineno}", key, value))
    return pairs


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[list[str]] = None
) -> RunConfig:
    """Read a config file (optional) and apply ``key=value`` overrides after it."""
    pairs = []
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        pairs.extend(_lines_to_pairs(text, str(path)))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, value = item.split("=", 1)
        pairs.append((f"--set {item}", key, value))
    # later assignments win
    return build_config(parse_assignments(pairs))


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    return build_config(parse_assignments(_lines_to_pairs(text, source)))


def config_to_text(config: RunConfig) -> str:
    """Inverse of :func:`parse_config_text` (every field written explicitly)."""
    lines = []
    for name in _SECTIONS:
        obj = getattr(config, name)
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, enum.Enum):
                value = value.value
            elif value is None:
                value = "none"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{name}.{f.name} = {value}")
    return "\n".join(lines) + "\n"
