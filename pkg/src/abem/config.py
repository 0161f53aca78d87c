"""Experiment configuration: schema, validation and construction of the objects
it describes.

A config is a YAML mapping; unknown keys are rejected at every level::

    name: lshape-singular
    geometry: {kind: lshape, scale: 0.25}
    mesh: {n_per_patch: 2}
    pde: {name: laplace}
    degree: 0
    theta: 0.5
    estimator: residual          # marking driver: residual | faermann
    mode: adaptive               # adaptive | uniform
    stop: {max_levels: 20, max_dofs: null, eta_tol: 0.0}
    quadrature: {far_order: 8, near_order: 16, far_threshold: 0.5}
    rhs:
      kind: manufactured
      density: {kind: power, center: [0, 0], exponent: -0.3333333333333333}
      degree: 2
      uniform_levels: 4
      grade_points: [[0, 0]]
      grade_levels: 30
    diagnostics: {faermann: true, axioms: false, inverse: false}
    output: {dir: out}

Right-hand sides: ``zero``, ``constant`` (``value``), ``fourier`` (circle and
Laplace only; ``a0``, ``cos``, ``sin`` map mode numbers to coefficients) and
``manufactured`` (density ``power`` or ``trig``).
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from abem.geometry import (
    BoundaryGeometry,
    circle,
    geometry_from_dict,
    load_geometry,
    lshape,
    square,
)
from abem.mesh import Mesh, initial_mesh
from abem.operators import PdeOperator, lame, laplace


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key or line."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CircleGeometry(_Strict):
    kind: Literal["circle"]
    radius: float = Field(0.5, gt=0)
    center: tuple[float, float] = (0.0, 0.0)
    n_arcs: int = Field(4, ge=1)


class LShapeGeometry(_Strict):
    kind: Literal["lshape"]
    scale: float = Field(0.25, gt=0)


class SquareGeometry(_Strict):
    kind: Literal["square"]
    side: float = Field(0.5, gt=0)
    origin: tuple[float, float] = (-0.25, -0.25)


class FileGeometry(_Strict):
    kind: Literal["file"]
    path: str


class PatchGeometry(_Strict):
    kind: Literal["patches"]
    patches: list[dict]


GeometrySpec = Annotated[Union[CircleGeometry, LShapeGeometry, SquareGeometry, FileGeometry,
                               PatchGeometry], Field(discriminator="kind")]


class MeshSpec(_Strict):
    n_per_patch: int = Field(1, ge=1)


class LaplaceSpec(_Strict):
    name: Literal["laplace"]


class LameSpec(_Strict):
    name: Literal["lame"]
    lam: float = 1.0
    mu: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _elliptic(self):
        if not self.lam + self.mu > 0:
            raise ValueError("lam + mu must be positive")
        return self


PdeSpec = Annotated[Union[LaplaceSpec, LameSpec], Field(discriminator="name")]


class StopSpec(_Strict):
    max_levels: Optional[int] = Field(10, ge=1)
    max_dofs: Optional[int] = Field(None, ge=1)
    eta_tol: float = Field(0.0, ge=0)


class QuadSpec(_Strict):
    far_order: int = Field(8, ge=1, le=64)
    near_order: int = Field(16, ge=2, le=40)
    far_threshold: float = Field(0.5, ge=0)
    potential_order: int = Field(16, ge=2, le=40)
    rhs_order: int = Field(16, ge=1, le=64)


class ZeroRhs(_Strict):
    kind: Literal["zero"]


class ConstantRhs(_Strict):
    kind: Literal["constant"]
    value: Union[float, list[float]] = 1.0


class FourierRhs(_Strict):
    kind: Literal["fourier"]
    a0: float = 0.0
    cos: dict[int, float] = Field(default_factory=dict)
    sin: dict[int, float] = Field(default_factory=dict)


class PowerDensity(_Strict):
    kind: Literal["power"]
    center: tuple[float, float]
    exponent: float
    amplitude: float = 1.0
    offset: float = 0.0


class TrigComponent(_Strict):
    amp: float = 1.0
    freq: tuple[float, float] = (0.0, 0.0)
    phase: float = 0.0


class TrigDensity(_Strict):
    kind: Literal["trig"]
    components: list[TrigComponent] = Field(min_length=1)


class ManufacturedRhs(_Strict):
    kind: Literal["manufactured"]
    density: Annotated[Union[PowerDensity, TrigDensity], Field(discriminator="kind")]
    degree: int = Field(2, ge=0, le=6)
    uniform_levels: int = Field(4, ge=0, le=12)
    grade_points: list[tuple[float, float]] = Field(default_factory=list)
    grade_levels: int = Field(0, ge=0, le=50)


RhsSpec = Annotated[Union[ZeroRhs, ConstantRhs, FourierRhs, ManufacturedRhs],
                    Field(discriminator="kind")]


class DiagnosticsSpec(_Strict):
    faermann: bool = True
    axioms: bool = False
    inverse: bool = False


class OutputSpec(_Strict):
    dir: str = "out"
    name: Optional[str] = None


class ExperimentConfig(_Strict):
    name: str = "experiment"
    geometry: GeometrySpec
    mesh: MeshSpec = MeshSpec()
    pde: PdeSpec = LaplaceSpec(name="laplace")
    degree: int = Field(0, ge=0, le=6)
    theta: float = Field(0.5, gt=0, le=1)
    estimator: Literal["residual", "faermann"] = "residual"
    mode: Literal["adaptive", "uniform"] = "adaptive"
    stop: StopSpec = StopSpec()
    quadrature: QuadSpec = QuadSpec()
    rhs: RhsSpec
    diagnostics: DiagnosticsSpec = DiagnosticsSpec()
    output: OutputSpec = OutputSpec()

    @model_validator(mode="after")
    def _consistent(self):
        if isinstance(self.rhs, FourierRhs):
            if not isinstance(self.geometry, CircleGeometry) or self.pde.name != "laplace":
                raise ValueError("rhs.kind fourier needs a circle geometry and the laplace pde")
        D = 2 if self.pde.name == "lame" else 1
        if isinstance(self.rhs, TrigDensity) and len(self.rhs.components) != D:
            raise ValueError("rhs.density.components must match the pde dimension")
        if isinstance(self.rhs, ManufacturedRhs) and isinstance(self.rhs.density, TrigDensity):
            if len(self.rhs.density.components) != D:
                raise ValueError(f"rhs.density.components needs {D} entries for this pde")
        if isinstance(self.rhs, ConstantRhs) and isinstance(self.rhs.value, list):
            if len(self.rhs.value) != D:
                raise ValueError(f"rhs.value needs {D} entries for this pde")
        return self

    # --- builders ---------------------------------------------------------
    def build_geometry(self, base_dir: Path | None = None) -> BoundaryGeometry:
        g = self.geometry
        if isinstance(g, CircleGeometry):
            return circle(g.radius, g.center, g.n_arcs)
        if isinstance(g, LShapeGeometry):
            return lshape(g.scale)
        if isinstance(g, SquareGeometry):
            return square(g.side, g.origin)
        if isinstance(g, FileGeometry):
            p = Path(g.path)
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            return load_geometry(p)
        return geometry_from_dict({"patches": g.patches})

    def build_pde(self) -> PdeOperator:
        if self.pde.name == "lame":
            return lame(self.pde.lam, self.pde.mu)
        return laplace()

    def build_mesh(self, geometry: BoundaryGeometry, n_per_patch: int | None = None) -> Mesh:
        return initial_mesh(geometry, n_per_patch or self.mesh.n_per_patch)

    def build_quad(self):
        from abem.galerkin import QuadConfig
        q = self.quadrature
        return QuadConfig(q.far_order, q.near_order, q.far_threshold, q.potential_order,
                          q.rhs_order)

    def build_problem(self, pde: PdeOperator, geometry: BoundaryGeometry, base: Mesh):
        from abem import problems as pb
        r = self.rhs
        if isinstance(r, ZeroRhs):
            return pb.zero_problem(pde)
        if isinstance(r, ConstantRhs):
            return pb.constant_problem(pde, r.value)
        if isinstance(r, FourierRhs):
            g = self.geometry
            return pb.fourier_circle_problem(pde, g.center, g.radius, r.a0, r.cos, r.sin)
        d = r.density
        if isinstance(d, PowerDensity):
            dens = pb.power_density(d.center, d.exponent, d.amplitude, d.offset)
        else:
            dens = pb.trig_density([c.model_dump() for c in d.components])
        return pb.manufactured_problem(pde, base, dens, r.degree, r.uniform_levels,
                                       r.grade_points, r.grade_levels, self.build_quad())

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"] if not str(p).startswith("function-"))
        lines.append(f"{loc or '<root>'}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: YAML error at {where}: {exc.problem}") from None
    return parse_config(data)


def bundled_config_dir() -> Path:
    return Path(__file__).with_name("configs")


def bundled_config(name: str) -> Path:
    p = bundled_config_dir() / f"{name}.yaml"
    if not p.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return p
