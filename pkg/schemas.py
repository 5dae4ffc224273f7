from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from domain import BandedMatrix, DecayFit, JumpMoments, PlateauReport, TruncationRoot


class BandedMatrixDescription(BaseModel):
    """Self-describing JSON form of a banded matrix: bands keyed by numpy-style offset."""

    size: int
    bands: Dict[str, List[float]]
    flags: Dict[str, bool] = Field(default_factory=dict)

    @classmethod
    def from_matrix(cls, m: BandedMatrix) -> "BandedMatrixDescription":
        return cls(
            size=m.size,
            bands={str(k): v.tolist() for k, v in sorted(m.bands.items())},
            flags={
                "stochastic": m.stochastic,
                "tridiagonal": m.is_tridiagonal,
                "lower_triangular": m.is_lower_triangular,
            },
        )

    def to_matrix(self) -> BandedMatrix:
        return BandedMatrix(self.size, {int(k): v for k, v in self.bands.items()}, self.flags.get("stochastic", False))


class JumpMomentsOut(BaseModel):
    v_B: float
    D: float
    higher: float

    @classmethod
    def from_domain(cls, m: JumpMoments) -> "JumpMomentsOut":
        return cls(v_B=m.v_B, D=m.D, higher=m.higher)


class DecayFitOut(BaseModel):
    rate: float
    power_exponent: float
    log_prefactor: float
    fit_window: Tuple[int, int]
    residual: float
    exponent_fixed: bool = False

    class Config:
        from_attributes = True


class PlateauReportOut(BaseModel):
    plateau_value: float
    t_plateau: float
    t_plateau_full: float
    t_plateau_printed: float
    method: str

    class Config:
        from_attributes = True


class TruncationRootOut(BaseModel):
    ell: int
    epsilon: float
    psi: float
    eigenvalue: float
    second_psi: Optional[float] = None

    class Config:
        from_attributes = True


# --------------------
class OutputFile(BaseModel):
    name: str
    sha256: str


class RunManifest(BaseModel):
    command: str
    parameters: Dict[str, Any]
    seeds: List[int] = Field(default_factory=list)
    tool_version: str
    timestamp: datetime
    threads: int
    tolerances: Dict[str, float]
    outputs: List[OutputFile] = Field(default_factory=list)


class RunRecordOut(BaseModel):
    id: int
    command: str
    run_dir: str
    created_at: datetime
    status: str

    class Config:
        from_attributes = True


def decay_fit_out(fit: DecayFit) -> DecayFitOut:
    return DecayFitOut.model_validate(fit)


def plateau_out(report: PlateauReport) -> PlateauReportOut:
    return PlateauReportOut.model_validate(report)


def truncation_out(root: TruncationRoot) -> TruncationRootOut:
    return TruncationRootOut.model_validate(root)
