"""HTTP service exposing the simulator.

A thin, stateless wrapper: scenarios come in (by bundled name or inline
YAML), validated results and CSV-ready sweep output go out. All simulation
work happens synchronously in the request; there is no job queue, no
persistence and no shared mutable state, so the service scales by running
more of it.
"""

from __future__ import annotations

import dataclasses

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..metrics import UndefinedMetricError
from ..protocols import ConfigError
from ..scenario import (
    Scenario,
    ScenarioError,
    bundled_scenario_text,
    bundled_scenarios,
    load_scenario,
    parse_scenario_text,
)
from ..sweep import run_one, run_sweep
from .models import (
    CellInfo,
    HealthResponse,
    RunRequest,
    RunResponse,
    RunRow,
    ScenarioDetailResponse,
    ScenarioInfo,
    ScenarioListResponse,
    StationReport,
    SummaryRow,
    SweepRequest,
    SweepResponse,
    TraceFile,
    ValidateRequest,
    ValidateResponse,
)

__all__ = ["app", "create_app"]


def _resolve_scenario(req) -> Scenario:
    if req.scenario is not None:
        return load_scenario(req.scenario)
    return parse_scenario_text(req.yaml_text, name=req.name)


def _apply_overrides(scenario: Scenario, req) -> Scenario:
    changes = {}
    if req.seeds is not None:
        if not req.seeds:
            raise ScenarioError("seeds must not be empty")
        if len(set(req.seeds)) != len(req.seeds):
            raise ScenarioError("seeds must be distinct")
        changes["seeds"] = tuple(req.seeds)
    if req.horizon_slots is not None:
        changes["horizon_slots"] = req.horizon_slots
        changes["horizon_us"] = None
    elif req.horizon_us is not None:
        changes["horizon_slots"] = None
        changes["horizon_us"] = req.horizon_us
    return dataclasses.replace(scenario, **changes) if changes else scenario


def create_app() -> FastAPI:
    app = FastAPI(
        title="ecasim",
        version=__version__,
        description="Slotted-CSMA contention simulator: scenario validation, "
                    "single runs, and seeded parameter sweeps.",
    )

    @app.exception_handler(ConfigError)
    async def _config_error(_: Request, exc: ConfigError) -> JSONResponse:
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(UndefinedMetricError)
    async def _metric_error(_: Request, exc: UndefinedMetricError) -> JSONResponse:
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(version=__version__)

    @app.get("/scenarios", response_model=ScenarioListResponse)
    def list_scenarios() -> ScenarioListResponse:
        return ScenarioListResponse(scenarios=[
            ScenarioInfo(name=name, description=desc)
            for name, desc in bundled_scenarios().items()
        ])

    @app.get("/scenarios/{name}", response_model=ScenarioDetailResponse)
    def scenario_detail(name: str) -> ScenarioDetailResponse:
        try:
            text = bundled_scenario_text(name)
        except ScenarioError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return ScenarioDetailResponse(
            name=name,
            description=bundled_scenarios().get(name, ""),
            yaml_text=text,
        )

    @app.post("/scenarios/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest) -> ValidateResponse:
        try:
            scenario = _resolve_scenario(req)
        except ConfigError as exc:
            return ValidateResponse(valid=False, error=str(exc))
        cells = scenario.cells()
        return ValidateResponse(
            valid=True,
            name=scenario.name,
            fingerprint=scenario.fingerprint(),
            cells=[CellInfo(label=c.label, n_stations=c.n_stations)
                   for c in cells],
            seeds=len(scenario.seeds),
            total_runs=len(cells) * len(scenario.seeds),
            horizon_slots=scenario.horizon_slots,
            horizon_us=scenario.horizon_us,
        )

    @app.post("/run", response_model=RunResponse)
    def run(req: RunRequest) -> RunResponse:
        scenario = _apply_overrides(_resolve_scenario(req), req)
        cells = scenario.cells()
        if req.cell_index >= len(cells):
            raise HTTPException(
                status_code=422,
                detail=f"cell_index {req.cell_index} out of range "
                       f"(scenario has {len(cells)} cells)")
        cell = cells[req.cell_index]
        seed = req.seed if req.seed is not None else scenario.seeds[0]
        result = run_one(cell, seed, scenario.durations, scenario.impairments,
                         scenario.horizon_slots, scenario.horizon_us,
                         record_trace=req.record_trace,
                         fingerprint=scenario.fingerprint())
        return RunResponse(
            scenario_name=scenario.name,
            cell_label=cell.label,
            n_stations=cell.n_stations,
            seed=seed,
            normalized_throughput=result.throughput,
            packet_throughput=result.packet_throughput,
            collision_probability=result.collision_prob,
            convergence_slot=result.convergence_slot,
            jain_index=result.jain,
            slots=result.slots,
            wall_time_us=result.wall_time_us,
            per_station=[StationReport(**dataclasses.asdict(sc))
                         for sc in result.per_station],
            report_text=result.report_text,
            trace_csv=result.trace_csv,
        )

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest) -> SweepResponse:
        scenario = _apply_overrides(_resolve_scenario(req), req)
        result = run_sweep(scenario, out_dir=None, workers=req.workers,
                           record_traces=req.record_traces)
        return SweepResponse(
            scenario_name=result.scenario_name,
            fingerprint=result.fingerprint,
            out_dir=scenario.out_dir,
            summary_rows=[SummaryRow(**row) for row in result.summary_rows],
            run_rows=[RunRow(**row) for row in result.run_rows],
            summary_csv=result.summary_csv,
            runs_csv=result.runs_csv,
            traces=[TraceFile(name=name, csv_text=csv_text)
                    for name, csv_text in result.traces],
        )

    return app


app = create_app()
