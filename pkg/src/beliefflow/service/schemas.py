"""Pydantic request/response models of the elicitation service."""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator

MAX_DIM = 32


class CreateSessionRequest(BaseModel):
    dim: int = Field(ge=1, le=MAX_DIM)
    names: list[str] | None = None
    lower: list[float]
    upper: list[float]
    k: int = Field(default=5, ge=2, le=10)
    lambda_weight: float = Field(default=0.0, ge=0.0, le=1.0)
    s_lik: float = Field(default=1.0, gt=0.0)

    @model_validator(mode="after")
    def check_bounds(self):
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise ValueError("bounds must list one value per dimension")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("lower bounds must be strictly below upper bounds")
        if self.names is not None and len(self.names) != self.dim:
            raise ValueError("names must list one label per dimension")
        return self


class SessionView(BaseModel):
    id: str
    dim: int
    names: list[str]
    lower: list[float]
    upper: list[float]
    k: int
    lambda_weight: float
    s_lik: float
    dataset_size: int
    pending_queries: int
    has_model: bool
    training: "TrainStatusView"


class QueryView(BaseModel):
    query_id: str
    names: list[str]
    points: list[list[float]]


class SubmitRankingRequest(BaseModel):
    query_id: str
    ranking: list[int]


class SubmitAck(BaseModel):
    query_id: str
    dataset_size: int


class TrainRequest(BaseModel):
    iterations: int = Field(default=2000, ge=1, le=500_000)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    batch_size: int | None = Field(default=None, ge=1)
    seed: int = 0


class TrainStatusView(BaseModel):
    state: str  # idle | running | failed | done
    progress: float = 0.0
    trace_tail: list[float] = []
    error: str | None = None


class SamplesView(BaseModel):
    points: list[list[float]]


class DensityGridView(BaseModel):
    axes: list[int]
    x: list[float]
    y: list[float]
    density: list[list[float]]


class MarginalView(BaseModel):
    dim: int
    centers: list[float]
    density: list[float]


class MarginalsView(BaseModel):
    resolution: int
    dims: list[MarginalView]


class ErrorBody(BaseModel):
    code: str
    message: str
    field: str | None = None
