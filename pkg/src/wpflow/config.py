"""Run configuration: one TOML file, validated before any computation."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .energy import FlowParams, power_law_model
from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["RunConfig", "load_config", "parse_config", "apply_overrides"]


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnergyBlock(_Block):
    family: Literal["power_law"] = "power_law"
    p: float = Field(gt=1.0)
    gamma: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _invertible(self):
        if self.gamma + 1.0 - self.p <= 0.0:
            raise ValueError(f"power_law needs gamma + 1 - p > 0 (gamma={self.gamma:g}, p={self.p:g})")
        return self

    @property
    def params(self) -> FlowParams:
        return FlowParams(self.p, self.gamma)


class DomainBlock(_Block):
    kind: Literal["whole_line", "interval"] = "interval"
    l: float = Field(default=1.0, gt=0.0)


class InitialBlock(_Block):
    density: Optional[Literal["uniform", "cosine_bump", "grid"]] = None
    amplitude: float = Field(default=0.5, ge=0.0, le=1.0)
    xs: Optional[List[float]] = None
    values: Optional[List[float]] = None
    N: Optional[int] = Field(default=None, ge=2)
    particles: Optional[List[float]] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.density is None) == (self.particles is None):
            raise ValueError("give exactly one of initial.density or initial.particles")
        if self.density == "grid" and (self.xs is None or self.values is None):
            raise ValueError("a grid density needs initial.xs and initial.values")
        if self.particles is not None and len(self.particles) < 2:
            raise ValueError("initial.particles needs at least two positions")
        return self


class IntegratorBlock(_Block):
    scheme: Literal["explicit_descent", "minimizing_movement"] = "explicit_descent"
    dt: float = Field(default=1e-4, gt=0.0)
    t_end: float = Field(default=0.1, gt=0.0)
    adapt: Literal["fixed", "adaptive"] = "fixed"
    safety: float = Field(default=0.9, gt=0.0, le=1.0)
    record_every: int = Field(default=10, ge=1)
    pinned: bool = True
    snapshot_every: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _dt_fits(self):
        if self.dt > self.t_end:
            raise ValueError("integrator.dt must not exceed integrator.t_end")
        return self


class PdeBlock(_Block):
    M: int = Field(default=1024, ge=2)
    safety: float = Field(default=0.4, gt=0.0, le=1.0)
    t_end: float = Field(default=0.1, gt=0.0)
    t_samples: List[float] = Field(default_factory=lambda: [0.01, 0.05, 0.1])


class StudyBlock(_Block):
    name: str = "pde_convergence"
    N_list: List[int] = Field(default_factory=lambda: [25, 50, 100, 200])
    t_end: float = Field(default=0.1, gt=0.0)
    t_samples: List[float] = Field(default_factory=lambda: [0.01, 0.05, 0.1])
    dt: Optional[float] = Field(default=None, gt=0.0)
    dt_fraction: float = Field(default=0.8, gt=0.0, le=1.0)
    seed: int = 0
    liminf_trials: int = Field(default=3, ge=0)
    tol: float = Field(default=0.02, gt=0.0)


class OutputBlock(_Block):
    dir: str = "runs"


class RunConfig(_Block):
    energy: EnergyBlock
    domain: DomainBlock = DomainBlock()
    initial: Optional[InitialBlock] = None
    integrator: IntegratorBlock = IntegratorBlock()
    pde: PdeBlock = PdeBlock()
    study: StudyBlock = StudyBlock()
    output: OutputBlock = OutputBlock()
    workers: int = Field(default=1, ge=1)

    @property
    def model(self):
        return power_law_model(self.energy.params)


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        key = ".".join(str(part) for part in e["loc"]) or "<root>"
        msg = e["msg"]
        if e["type"] == "missing":
            msg = "missing required key"
        elif e["type"] == "extra_forbidden":
            msg = "unknown key"
        lines.append(f"{key}: {msg}")
    return "\n".join(lines)


def _coerce(text: str):
    """Parse an override value as a TOML scalar or array, else keep the string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.sub=value`` overrides to a nested mapping (in place)."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        node = data
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key}: {part} is not a section")
            node = nxt
        node[parts[-1]] = _coerce(text.strip())
    return data


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_describe(err)) from None


def load_config(path, overrides=()) -> RunConfig:
    """Read a TOML file, apply ``--set`` overrides and validate."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    return parse_config(apply_overrides(data, overrides))
