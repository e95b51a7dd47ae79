"""Experiment configuration schema (TOML in, validated pydantic models out)."""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCENARIOS = ("born", "equivariance", "epr-nonlocal", "epr-local", "disagreement",
             "no-signaling", "continuity", "appendix")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Strict):
    n_points: int = Field(ge=8)
    dx: float = Field(gt=0)
    x0: Optional[float] = None  # None centres the grid on 0
    periodic: bool = True
    mass: float = Field(1.0, gt=0)


class PacketConfig(_Strict):
    center: float = 0.0
    width: float = Field(1.0, gt=0)
    momentum: float = 0.0


Amplitude = Union[float, List[float]]


class TermConfig(_Strict):
    amplitude: Amplitude = 1.0
    labels: List[int] = []
    packets: List[PacketConfig]

    @field_validator("amplitude")
    @classmethod
    def _complex_pair(cls, v):
        if isinstance(v, list) and len(v) != 2:
            raise ValueError("complex amplitudes are written [re, im]")
        return v


class PotentialConfig(_Strict):
    kind: Literal["zero", "harmonic", "barrier"]
    omega: Optional[List[float]] = None
    center: Optional[List[float]] = None
    dof: Optional[int] = None
    height: Optional[float] = None
    lo: Optional[float] = None
    hi: Optional[float] = None


class MeasurementConfig(_Strict):
    pointer_dof: int = 0
    factor: int = 0
    eigenvalues: List[float]
    coupling: float
    duration: float = Field(1.0, gt=0)
    destroy: bool = False
    support_sigma_cut: float = Field(5.0, gt=0)


class EPRConfig(_Strict):
    kind: Literal["anticorrelated", "shared-superposition"] = "anticorrelated"
    amplitudes: List[Amplitude] = [0.7071067811865476, 0.7071067811865476]
    n_points: int = Field(128, ge=8)
    dx: float = Field(0.25, gt=0)
    width: float = Field(1.0, gt=0)
    separation: float = Field(12.0, gt=0)


class PartitionConfig(_Strict):
    A: List[int]
    B: List[int]
    environment: List[int] = []


class UnitaryConfig(_Strict):
    """A unitary applied to one copy of the state in the no-signaling scenario."""

    kind: Literal["label-phase", "label-mix", "free-evolution", "kick"]
    factor: int = 0
    phase: float = 0.0
    angle: float = 0.0
    dof: int = 0
    time: float = 0.0
    strength: float = 0.0
    control: bool = False  # acts on an owned DOF; expected to change velocities


class ContinuityConfig(_Strict):
    owned_sets: List[List[int]] = [[0, 1], [1]]
    t_mid: float = Field(0.5, gt=0)
    levels: int = Field(3, ge=2)
    dt_fine: float = Field(1e-3, gt=0)


class AppendixConfig(_Strict):
    dims: List[List[int]] = [[2, 2], [2, 3]]
    n_hamiltonians: int = Field(5, ge=2)
    t: float = 1.0
    coupling: float = 0.5


class ModelConfig(_Strict):
    hbar: float = Field(1.0, gt=0)
    discrete_dims: List[int] = []
    grids: List[GridConfig] = []
    terms: List[TermConfig] = []
    potential: Optional[PotentialConfig] = None
    owned_dofs: Optional[List[int]] = None
    measurement: Optional[MeasurementConfig] = None
    epr: Optional[EPRConfig] = None
    partition: Optional[PartitionConfig] = None
    unitaries: List[UnitaryConfig] = []
    continuity: Optional[ContinuityConfig] = None
    appendix: Optional[AppendixConfig] = None


class Tolerances(_Strict):
    sigma: float = 3.0
    ks_coefficient: float = 1.63
    no_signaling: float = 1e-8
    control_min: float = 1e-3
    appendix: float = 1e-10
    min_order: float = 1.8
    unclassified_max: float = 0.005
    frozen_max: float = 0.005
    cross_branch_max: float = 0.01


class NumericsConfig(_Strict):
    dt: Optional[float] = Field(None, gt=0)
    steps: int = Field(0, ge=0)
    checkpoints: int = Field(10, ge=1)
    n_walkers: int = Field(10000, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    control_scale: float = 1.5
    n_probes: int = Field(20, ge=1)
    tolerances: Tolerances = Tolerances()


class OutputsConfig(_Strict):
    directory: Optional[str] = None
    formats: List[Literal["csv", "jsonl", "json"]] = ["csv", "jsonl", "json"]
    export_walkers: int = Field(1000, ge=0)
    raster_times: List[float] = [0.0]


class ExperimentConfig(_Strict):
    scenario: Literal["born", "equivariance", "epr-nonlocal", "epr-local", "disagreement",
                      "no-signaling", "continuity", "appendix"]
    model: ModelConfig = ModelConfig()
    numerics: NumericsConfig = NumericsConfig()
    outputs: OutputsConfig = OutputsConfig()

    def digest(self) -> str:
        canon = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


# fields each scenario cannot run without
REQUIRED = {
    "born": ["model.grids", "model.discrete_dims", "model.terms", "model.measurement"],
    "equivariance": ["model.grids", "model.terms", "model.owned_dofs", "numerics.dt", "numerics.steps"],
    "epr-nonlocal": ["model.epr"],
    "epr-local": ["model.epr"],
    "disagreement": ["model.epr"],
    "no-signaling": ["model.grids", "model.terms", "model.owned_dofs", "model.unitaries"],
    "continuity": ["model.grids", "model.terms", "numerics.dt"],
    "appendix": [],
}


def _lookup(cfg: ExperimentConfig, dotted: str):
    obj = cfg
    for part in dotted.split("."):
        obj = getattr(obj, part)
    return obj


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict, source: str = "<config>") -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_validation(exc)}") from None
    missing = []
    for dotted in REQUIRED[cfg.scenario]:
        value = _lookup(cfg, dotted)
        if value is None or (isinstance(value, list) and not value) or (dotted == "numerics.steps" and value == 0):
            missing.append(dotted)
    if missing:
        raise ConfigError(f"{source}: scenario {cfg.scenario!r} requires {', '.join(missing)}")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, str(path))
