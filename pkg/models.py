"""
Pydantic models for run configuration and output records.
"""

import math
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from settings import CONSISTENCY_TOL, CONTRACTION_TOL

COMMANDS = ("spectrum", "asymptotics", "glue", "energy", "geometry", "flow")

Complex = Tuple[float, float]


def _positive(value: float, name: str) -> float:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


# Run configuration

class SpectrumParams(BaseModel):
    n: Tuple[int, int] = (-2, 2)
    l: Tuple[int, int] = (-2, 2)
    k: Tuple[int, int] = (-2, 2)
    tol: float = CONSISTENCY_TOL

    @model_validator(mode="after")
    def check_ranges(self):
        for name in ("n", "l", "k"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"Index range {name}=[{lo}, {hi}] is empty")
        _positive(self.tol, "tol")
        return self


class AsymptoticsParams(BaseModel):
    octets: List[Tuple[int, int, int]] = [(0, 1, 1)]
    span: Tuple[float, float] = (0.0, math.log(4.0))
    samples: int = 41
    coefficients: Tuple[float, float] = (1.0, 0.0)
    inputs: List[str] = []

    @field_validator("span")
    @classmethod
    def check_span(cls, v):
        if not v[1] > v[0]:
            raise ValueError(f"span must be increasing, got {v}")
        return v


class GlueParams(BaseModel):
    T_values: List[float] = [4.0, 5.0, 6.0, 7.0]
    r0: float = 1.0
    pieces: str = "demo"
    holonomy: Tuple[float, float] = (0.25, 0.35)
    s_window: Tuple[float, float] = (0.0, 2.0)
    points: Tuple[int, int] = (12, 12)
    cutoff: int = 0
    order: Literal[2, 4] = 2
    nu_max: int = 10
    tol: float = CONTRACTION_TOL
    solve: bool = True
    strict: bool = True

    @field_validator("T_values")
    @classmethod
    def check_sweep(cls, v):
        if not v:
            raise ValueError("T_values must not be empty")
        return v

    @field_validator("r0", "tol")
    @classmethod
    def check_positive(cls, v, info):
        return _positive(v, info.field_name)


class GeometryParams(BaseModel):
    T_values: List[float] = [float(T) for T in range(1, 11)]
    r0: float = 1.0

    @field_validator("T_values")
    @classmethod
    def check_sweep(cls, v):
        if not v:
            raise ValueError("T_values must not be empty")
        return v


class EnergyParams(BaseModel):
    trajectory: Literal["gradient_flow", "constant"] = "gradient_flow"
    cutoff: int = 1
    samples: int = 201
    t_end: float = 1.0
    amplitude: float = 0.1
    s0: Optional[float] = None
    gap_tol: float = 1e-6

    @field_validator("t_end", "gap_tol")
    @classmethod
    def check_positive(cls, v, info):
        return _positive(v, info.field_name)


class FlowParams(BaseModel):
    cutoff: int = 1
    span: Tuple[float, float] = (0.0, 1.0)
    samples: int = 21
    nu_max: int = 5
    amplitude: float = 0.0
    tol: float = CONTRACTION_TOL

    @field_validator("tol")
    @classmethod
    def check_positive(cls, v, info):
        return _positive(v, info.field_name)


class RunConfig(BaseModel):
    command: Optional[Literal["spectrum", "asymptotics", "glue", "energy", "geometry", "flow"]] = None
    seed: int = Field(0, ge=0, lt=2 ** 64)
    spectrum: SpectrumParams = Field(default_factory=SpectrumParams)
    asymptotics: AsymptoticsParams = Field(default_factory=AsymptoticsParams)
    glue: GlueParams = Field(default_factory=GlueParams)
    geometry: GeometryParams = Field(default_factory=GeometryParams)
    energy: EnergyParams = Field(default_factory=EnergyParams)
    flow: FlowParams = Field(default_factory=FlowParams)


class PieceRecord(BaseModel):
    kind: Literal["constant", "gauge_path", "offset", "disk_map"] = "constant"
    holonomy: Tuple[float, float] = (0.0, 0.0)
    spinor: Tuple[Complex, Complex] = ((0.0, 0.0), (0.0, 0.0))
    amplitude: float = 0.0
    center: float = 1.0
    width: float = 0.5
    shift: Tuple[float, float] = (0.0, 0.0)
    corners: Optional[Tuple[Complex, Complex, Complex, Complex]] = None
    bulge: Complex = (0.0, 0.0)


# Output records

class EigenReportRecord(BaseModel):
    tag: str = "dirac.eigenvalues"
    index: Tuple[int, int, int]
    eta: List[Complex]
    lambdas: List[Complex]
    eigenvalues: List[Complex]
    numeric: List[Complex]
    max_delta: float
    classes: List[str]
    claim_holds: Optional[bool] = None


class DecayRecord(BaseModel):
    tag: str = "decay"
    source: str
    family: str
    params: Dict[str, float]
    residuals: Dict[str, float]
    tied: bool
    predicted_rate: Optional[float] = None
    relative_error: Optional[float] = None


class GeometryRow(BaseModel):
    tag: str = "geometry"
    T: float
    R: float
    ell: float
    r: float
    epsilon: float
    half_angle: float
    arc_length: float
    arc_defect: float
    corner_defect: float
    upsilon_at_ell: float


class TraceRecord(BaseModel):
    tag: str = "glue.trace"
    T: float
    nu: int
    xi_norm: float
    sigma_norm: float
    c0: float
    c1: float
    c2: float


class SweepRow(BaseModel):
    T: float
    R: float
    epsilon: float
    residual_norm: Optional[float] = None
    correction_norm: Optional[float] = None
    contraction: Optional[float] = None
    iterations: Optional[int] = None
    converged: Optional[bool] = None
    error: Optional[str] = None


class SweepSummary(BaseModel):
    tag: str = "glue.sweep"
    pieces: str
    residual_slope: Optional[float] = None
    correction_slope: Optional[float] = None
    flagged: bool
    t0: Optional[float] = None
    runs: List[SweepRow]


class BoundRow(BaseModel):
    tag: str
    lhs: float
    rhs: float
    holds: bool


class EnergyReportRecord(BaseModel):
    tag: str = "energy"
    trajectory: str
    energy: float
    csd_initial: float
    csd_final: float
    topological: float
    identity_gap: float
    energy_gap: float
    s0: Optional[float] = None
    bounds: List[BoundRow] = []


class IterateRecord(BaseModel):
    tag: str = "flow.iterate"
    iterate: int
    rho: List[float]
    distance: Optional[float] = None
    sup_norm: float
    states: List[List[Complex]]
