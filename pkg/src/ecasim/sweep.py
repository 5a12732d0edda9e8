"""Sweep execution: run every (cell, seed) pair and write plot-ready CSV.

A sweep is the cross product of a scenario's cells (protocol x station
count) and its seed list. Each run is independent and deterministic, so the
pairs can be executed serially or across a process pool with bit-identical
results: workers return finished rows, and everything is ordered by
(cell index, seed) before any output is produced.

Output files (all optional - omit ``out_dir`` to keep results in memory):

* ``summary.csv`` - one row per cell with mean/stddev aggregates.
* ``runs.csv``    - one row per (cell, seed).
* ``traces/*.trace.csv`` - full per-slot records, when requested.
"""

from __future__ import annotations

import re
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .channel import (
    ImpairmentModel,
    Simulation,
    SlotDurations,
    StationCounters,
    trace_to_csv,
)
from .metrics import build_report
from .protocols import ConfigError
from .scenario import Scenario, SweepCell, build_stations

__all__ = [
    "SweepExecutionError",
    "RunResult",
    "SweepResult",
    "run_one",
    "run_sweep",
    "SUMMARY_COLUMNS",
    "RUNS_COLUMNS",
]

SUMMARY_COLUMNS = (
    "protocol", "n_stations", "seeds",
    "throughput_mean", "throughput_std",
    "collision_prob_mean", "collision_prob_std",
    "conv_slot_mean", "conv_slot_std", "nonconverged",
    "jain_mean", "jain_std",
)

RUNS_COLUMNS = (
    "protocol", "n_stations", "seed",
    "throughput", "packet_throughput", "collision_prob",
    "convergence_slot", "jain", "slots", "wall_time_us",
)


class SweepExecutionError(RuntimeError):
    """A run inside a sweep failed; the message carries its coordinates."""


@dataclass(frozen=True)
class RunResult:
    """Metrics of one finished (cell, seed) run."""

    label: str
    n_stations: int
    seed: int
    throughput: float
    packet_throughput: float
    collision_prob: float
    convergence_slot: Optional[int]
    jain: Optional[float]
    slots: int
    wall_time_us: int
    per_station: Tuple[StationCounters, ...] = ()
    report_text: str = ""
    trace_csv: Optional[str] = None

    @property
    def trace_name(self) -> str:
        return f"{_safe_name(self.label)}_n{self.n_stations}_seed{self.seed}.trace.csv"


@dataclass
class SweepResult:
    """Everything a sweep produced, in deterministic order."""

    scenario_name: str
    fingerprint: str
    summary_rows: List[Dict[str, object]]
    run_rows: List[Dict[str, object]]
    summary_csv: str
    runs_csv: str
    traces: Tuple[Tuple[str, str], ...] = ()
    summary_path: Optional[Path] = None
    runs_path: Optional[Path] = None
    trace_paths: Tuple[Path, ...] = ()


def run_one(cell: SweepCell, seed: int,
            durations: SlotDurations,
            impairments: ImpairmentModel,
            horizon_slots: Optional[int],
            horizon_us: Optional[int],
            record_trace: bool = False,
            fingerprint: str = "") -> RunResult:
    """Execute one (cell, seed) pair and reduce it to metrics."""
    stations, traffic = build_stations(cell, seed)
    sim = Simulation(stations, traffic, durations=durations,
                     impairments=impairments, seed=seed,
                     record_trace=record_trace,
                     fingerprint=f"{fingerprint}:{cell.label}:n{cell.n_stations}:seed{seed}")
    trace = sim.run(horizon_slots=horizon_slots, horizon_us=horizon_us)
    report = build_report(trace, durations)
    return RunResult(
        label=cell.label,
        n_stations=cell.n_stations,
        seed=seed,
        throughput=report.normalized_throughput,
        packet_throughput=report.packet_throughput,
        collision_prob=report.collision_probability,
        convergence_slot=report.convergence_slot,
        jain=report.jain_index,
        slots=trace.slots,
        wall_time_us=trace.wall_time_us,
        per_station=trace.per_station,
        report_text=report.to_kv_text(),
        trace_csv=trace_to_csv(trace) if record_trace else None,
    )


def _execute(task) -> RunResult:
    cell, seed, durations, impairments, hs, hu, record, fp = task
    try:
        return run_one(cell, seed, durations, impairments, hs, hu, record, fp)
    except Exception as exc:
        raise SweepExecutionError(
            f"run failed for {cell.label} n={cell.n_stations} seed={seed}: {exc}"
        ) from exc


def _fmt(value, places: int = 6) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.{places}f}"
    return str(value)


def _safe_name(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "-", label)


def _summarize(cell: SweepCell, results: List[RunResult]) -> Dict[str, object]:
    throughputs = [r.throughput for r in results]
    collisions = [r.collision_prob for r in results]
    conv = [r.convergence_slot for r in results if r.convergence_slot is not None]
    jains = [r.jain for r in results if r.jain is not None]
    row: Dict[str, object] = {
        "protocol": cell.label,
        "n_stations": cell.n_stations,
        "seeds": len(results),
        "throughput_mean": statistics.fmean(throughputs),
        "throughput_std": statistics.pstdev(throughputs),
        "collision_prob_mean": statistics.fmean(collisions),
        "collision_prob_std": statistics.pstdev(collisions),
        "conv_slot_mean": statistics.fmean(conv) if conv else None,
        "conv_slot_std": statistics.pstdev(conv) if conv else None,
        "nonconverged": len(results) - len(conv),
        "jain_mean": statistics.fmean(jains) if jains else None,
        "jain_std": statistics.pstdev(jains) if jains else None,
    }
    return row

def _to_csv(columns: Tuple[str, ...], rows: List[Dict[str, object]]) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    return "\n".join(lines) + "\n"


def run_sweep(scenario: Scenario,
              out_dir: Optional[str] = None,
              workers: int = 1,
              record_traces: bool = False) -> SweepResult:
    """Run the whole sweep; write CSV files when ``out_dir`` is given."""
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    cells = scenario.cells()
    fingerprint = scenario.fingerprint()
    tasks = [
        (cell, seed, scenario.durations, scenario.impairments,
         scenario.horizon_slots, scenario.horizon_us, record_traces, fingerprint)
        for cell in cells for seed in scenario.seeds
    ]
    if workers == 1 or len(tasks) == 1:
        results = [_execute(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute, tasks, chunksize=1))

    per_cell: List[List[RunResult]] = []
    it = iter(results)
    for cell in cells:
        per_cell.append([next(it) for _ in scenario.seeds])

    summary_rows = [_summarize(cell, cell_results)
                    for cell, cell_results in zip(cells, per_cell)]
    run_rows: List[Dict[str, object]] = []
    for cell_results in per_cell:
        for r in cell_results:
            run_rows.append({
                "protocol": r.label,
                "n_stations": r.n_stations,
                "seed": r.seed,
                "throughput": r.throughput,
                "packet_throughput": r.packet_throughput,
                "collision_prob": r.collision_prob,
                "convergence_slot": r.convergence_slot,
                "jain": r.jain,
                "slots": r.slots,
                "wall_time_us": r.wall_time_us,
            })

    summary_csv = _to_csv(SUMMARY_COLUMNS, summary_rows)
    runs_csv = _to_csv(RUNS_COLUMNS, run_rows)
    traces: List[Tuple[str, str]] = []
    if record_traces:
        for cell_results in per_cell:
            for r in cell_results:
                traces.append((r.trace_name, r.trace_csv))

    summary_path = runs_path = None
    trace_paths: List[Path] = []
    if out_dir is not None:
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        summary_path = root / "summary.csv"
        runs_path = root / "runs.csv"
        summary_path.write_text(summary_csv)
        runs_path.write_text(runs_csv)
        if traces:
            trace_dir = root / "traces"
            trace_dir.mkdir(exist_ok=True)
            for name, csv_text in traces:
                path = trace_dir / name
                path.write_text(csv_text)
                trace_paths.append(path)

    return SweepResult(
        scenario_name=scenario.name,
        fingerprint=fingerprint,
        summary_rows=summary_rows,
        run_rows=run_rows,
        summary_csv=summary_csv,
        runs_csv=runs_csv,
        traces=tuple(traces),
        summary_path=summary_path,
        runs_path=runs_path,
        trace_paths=tuple(trace_paths),
    )
