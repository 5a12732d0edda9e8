"""Request/response models for the HTTP service.

Requests name a scenario either by bundled name (``scenario``) or by
inline YAML (``yaml_text``), never both; optional override fields replace
the corresponding scenario values after validation, so a client can reuse
one file across seed lists and horizons without editing it.
"""

from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

__all__ = [
    "HealthResponse",
    "ScenarioInfo",
    "ScenarioListResponse",
    "ScenarioDetailResponse",
    "ValidateRequest",
    "CellInfo",
    "ValidateResponse",
    "RunRequest",
    "StationReport",
    "RunResponse",
    "SweepRequest",
    "SummaryRow",
    "RunRow",
    "TraceFile",
    "SweepResponse",
]


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ScenarioInfo(BaseModel):
    name: str
    description: str = ""


class ScenarioListResponse(BaseModel):
    scenarios: List[ScenarioInfo]


class ScenarioDetailResponse(BaseModel):
    name: str
    description: str = ""
    yaml_text: str


class _ScenarioSource(BaseModel):
    """Shared source selection: a bundled name or inline YAML text."""

    scenario: Optional[str] = Field(
        default=None, description="Name of a bundled scenario.")
    yaml_text: Optional[str] = Field(
        default=None, description="Inline scenario YAML.")
    name: str = Field(
        default="scenario", description="Name used for inline YAML scenarios.")

    @model_validator(mode="after")
    def _exactly_one_source(self) -> "_ScenarioSource":
        if (self.scenario is None) == (self.yaml_text is None):
            raise ValueError("give exactly one of scenario or yaml_text")
        return self


class ValidateRequest(_ScenarioSource):
    pass


class CellInfo(BaseModel):
    label: str
    n_stations: int


class ValidateResponse(BaseModel):
    valid: bool
    name: Optional[str] = None
    fingerprint: Optional[str] = None
    cells: List[CellInfo] = []
    seeds: int = 0
    total_runs: int = 0
    horizon_slots: Optional[int] = None
    horizon_us: Optional[int] = None
    error: Optional[str] = None


class _Overrides(_ScenarioSource):
    seeds: Optional[List[int]] = Field(
        default=None, description="Replace the scenario's seed list.")
    horizon_slots: Optional[int] = Field(default=None, ge=1)
    horizon_us: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _one_horizon(self) -> "_Overrides":
        if self.horizon_slots is not None and self.horizon_us is not None:
            raise ValueError("give at most one of horizon_slots or horizon_us")
        return self


class RunRequest(_Overrides):
    seed: Optional[int] = Field(
        default=None, description="Seed to run; defaults to the scenario's first.")
    cell_index: int = Field(
        default=0, ge=0, description="Which sweep cell to run.")
    record_trace: bool = False


class StationReport(BaseModel):
    station_id: int
    attempts: int
    successes: int
    failures: int
    packets_delivered: int
    mean_access_delay_us: Optional[float] = None
    jitter_us: Optional[float] = None
    max_det_failure_streak: int = 0


class RunResponse(BaseModel):
    scenario_name: str
    cell_label: str
    n_stations: int
    seed: int
    normalized_throughput: float
    packet_throughput: float
    collision_probability: float
    convergence_slot: Optional[int] = None
    jain_index: Optional[float] = None
    slots: int
    wall_time_us: int
    per_station: List[StationReport]
    report_text: str
    trace_csv: Optional[str] = None


class SweepRequest(_Overrides):
    workers: int = Field(default=1, ge=1, le=64)
    record_traces: bool = False


class SummaryRow(BaseModel):
    protocol: str
    n_stations: int
    seeds: int
    throughput_mean: float
    throughput_std: float
    collision_prob_mean: float
    collision_prob_std: float
    conv_slot_mean: Optional[float] = None
    conv_slot_std: Optional[float] = None
    nonconverged: int
    jain_mean: Optional[float] = None
    jain_std: Optional[float] = None


class RunRow(BaseModel):
    protocol: str
    n_stations: int
    seed: int
    throughput: float
    packet_throughput: float
    collision_prob: float
    convergence_slot: Optional[int] = None
    jain: Optional[float] = None
    slots: int
    wall_time_us: int


class TraceFile(BaseModel):
    name: str
    csv_text: str


class SweepResponse(BaseModel):
    scenario_name: str
    fingerprint: str
    out_dir: Optional[str] = None
    summary_rows: List[SummaryRow]
    run_rows: List[RunRow]
    summary_csv: str
    runs_csv: str
    traces: List[TraceFile] = []
