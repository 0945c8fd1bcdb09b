"""Experiment configuration (JSON, schema ``circlekam/1``)."""
from __future__ import annotations

import hashlib
import json
from enum import Enum
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .model import GridSpec, Kind, LagrangianSpec

SCHEMA = "circlekam/1"


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Term(Strict):
    j: int
    k: int = 0
    cos: float = 0.0
    sin: float = 0.0


class MechanicalModel(Strict):
    kind: Literal["mechanical"]
    terms: list[Term] = []


class PendulumModel(Strict):
    kind: Literal["pendulum"]
    amplitude: float = 1.0
    harmonic: int = Field(1, ge=1)


class FreeModel(Strict):
    kind: Literal["free"]


class GenfunModel(Strict):
    kind: Literal["generating_function"]
    terms: list[Term] = []

    @field_validator("terms")
    @classmethod
    def _x_only(cls, v):
        if any(t.k != 0 for t in v):
            raise ValueError("generating-function potentials depend on x only (k must be 0)")
        return v


class StandardMapModel(Strict):
    kind: Literal["standard_map"]
    k: float = Field(ge=0.0)


ModelDecl = Annotated[
    Union[MechanicalModel, PendulumModel, FreeModel, GenfunModel, StandardMapModel], Field(discriminator="kind")
]


class GridDecl(Strict):
    n_space: int = Field(ge=16, le=2048)
    n_substeps: int = Field(1, ge=1, le=256)
    winding_cap: int = Field(2, ge=1, le=8)


class Task(str, Enum):
    ALPHA = "alpha"
    BARRIER = "barrier"
    SETS = "sets"
    REGULARITY = "regularity"
    CONNECT = "connect"


class ClassRange(Strict):
    start: float
    stop: float
    num: int = Field(ge=1, le=10001)


class ScheduleEntry(Strict):
    cls: float = Field(alias="class")
    epsilon: float = Field(gt=0.0, le=0.5)


class Params(Strict):
    c_grid: Union[list[float], ClassRange, None] = None
    classes: list[float] = [0.0]
    section: int | None = Field(None, ge=0)
    horizon: int = Field(100, ge=10, le=100000)
    max_n: int = Field(400, ge=4, le=100000)
    phi_n_max: int = Field(4096, ge=2, le=2**20)
    schedule: list[ScheduleEntry] = []
    dwell_padding: int = Field(2, ge=0, le=1000)
    t_cap: int = Field(64, ge=1, le=10000)
    n_samples: int = Field(5, ge=2, le=1000)
    refine: bool = True
    tol: float | None = Field(None, gt=0.0)


class ExperimentConfig(Strict):
    schema_: Literal["circlekam/1"] = Field(alias="schema")
    model: ModelDecl
    grid: GridDecl
    task: Task | None = None
    params: Params = Params()
    output_dir: str | None = None
    cache_dir: str | None = None
    workers: int = Field(1, ge=1, le=256)

    @model_validator(mode="after")
    def _connect_needs_schedule(self):
        if self.task is Task.CONNECT and not self.params.schedule:
            raise ValueError("connect task needs params.schedule")
        return self

    def lagrangian(self) -> LagrangianSpec:
        m = self.model
        if isinstance(m, PendulumModel):
            return LagrangianSpec.pendulum(m.amplitude, m.harmonic)
        if isinstance(m, FreeModel):
            return LagrangianSpec.free()
        if isinstance(m, StandardMapModel):
            return LagrangianSpec.standard_map(m.k)
        terms = tuple((t.j, t.k, t.cos, t.sin) for t in m.terms)
        if isinstance(m, GenfunModel):
            from .model import TrigPotential

            return LagrangianSpec(Kind.GENERATING_FUNCTION, TrigPotential(terms))
        return LagrangianSpec.mechanical(terms)

    def grid_spec(self) -> GridSpec:
        g = self.grid
        return GridSpec(g.n_space, g.n_substeps, g.winding_cap)

    def c_values(self) -> list:
        cg = self.params.c_grid
        if cg is None:
            return list(self.params.classes)
        if isinstance(cg, ClassRange):
            if cg.num == 1:
                return [cg.start]
            return [cg.start + (cg.stop - cg.start) * i / (cg.num - 1) for i in range(cg.num)]
        return list(cg)

    def digest(self) -> str:
        data = self.model_dump(mode="json", by_alias=True, exclude={"output_dir", "cache_dir", "workers"})
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


class ConfigError(Exception):
    pass


def load_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` with line or field diagnostics."""
    from pydantic import ValidationError

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        lines = []
        for err in e.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines)) from None
