# app/hullshape/schemas.py
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

DEFAULT_REPS = 32
DEFAULT_REPS_LARGE_N = 8
LARGE_N = 10_000


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    model: str = Field(default="bm", min_length=1)
    dim: int = Field(default=2, ge=1, le=16)
    axis_scales: Optional[List[float]] = None
    grid_points: int = Field(default=512, ge=1, le=8192)
    n_schedule: List[int] = Field(default_factory=lambda: [100, 1000, 10000])
    # None: 32 replications up to n = 10^4, 8 beyond
    reps: Optional[int] = Field(default=None, ge=1)
    dirs: int = Field(default=720, ge=8)
    seed: int = Field(default=0, ge=0, le=2**64 - 1)
    threads: int = Field(default=0, ge=0)
    chunk_paths: int = Field(default=2048, ge=1)
    two_resolution: bool = False
    nested: bool = False
    # ball radius replacing the limit shape (negative control), None = true limit
    reference_radius: Optional[float] = Field(default=None, gt=0)

    @field_validator("n_schedule")
    @classmethod
    def _strictly_increasing(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("n_schedule must not be empty")
        if any(n < 2 for n in v):
            raise ValueError("every n in n_schedule must be >= 2 (ln n > 0)")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("n_schedule must be strictly increasing")
        return v

    def reps_for(self, n: int) -> int:
        if self.reps is not None:
            return self.reps
        return DEFAULT_REPS if n <= LARGE_N else DEFAULT_REPS_LARGE_N

    @model_validator(mode="after")
    def _scales_match_dim(self) -> "ExperimentConfig":
        if self.axis_scales is not None:
            if len(self.axis_scales) != self.dim:
                raise ValueError(f"axis_scales has {len(self.axis_scales)} entries for dim={self.dim}")
            if any(c <= 0 for c in self.axis_scales):
                raise ValueError("axis_scales must be > 0")
        return self


class GridInfo(BaseModel):
    grid_points: int
    dirs: int
    mesh: float
    mesh_error: float


class ConvergenceRecord(BaseModel):
    n: int
    rho: List[float]
    mean: float = Field(ge=0)
    se: float = Field(ge=0)
    rate: float
    rate_se: float
    grid: GridInfo
    rho_fine: Optional[List[float]] = None
    mean_fine: Optional[float] = None
    resolution_divergence: Optional[float] = None
    resolution_flag: bool = False


class RateRecord(BaseModel):
    n: int
    rate: float
    rate_se: float


class RateSeries(BaseModel):
    records: List[RateRecord]
    non_increasing: bool
    reference: str


class MomentRecord(BaseModel):
    n: int
    functional: str
    degree: int
    power: float
    values: List[float]
    estimate: float = Field(ge=0)
    se: float = Field(ge=0)
    target: float
    ratio: float
    relative_gap: float


class ExtremeRecord(BaseModel):
    n: int
    theta: List[float]
    z: List[float]
    mean: float
    se: float
    target: float
    moments: Dict[int, float]
    min_mean: float
    oracle_mean: Optional[float] = None
    oracle_sd: Optional[float] = None
    oracle_moments: Optional[Dict[int, float]] = None


class SanityCheck(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class CriterionResult(BaseModel):
    id: int
    title: str
    passed: bool
    detail: str
    seconds: float


class RunManifest(BaseModel):
    subcommand: str
    config: Dict[str, Any]
    seed: int
    version: str
    wall_time_s: float
    checks: List[SanityCheck] = Field(default_factory=list)
    artifacts: List[str] = Field(default_factory=list)
    passed: bool = True
