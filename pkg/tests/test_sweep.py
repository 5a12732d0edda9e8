"""Tests for sweep execution: per-run metrics, aggregation, CSV output,
file layout, and serial/parallel equivalence."""

import dataclasses
import statistics

import pytest

from ecasim.channel import Saturated, Simulation, trace_from_csv
from ecasim.metrics import build_report
from ecasim.protocols import ConfigError, Station
from ecasim.scenario import build_stations, parse_scenario_text
from ecasim.sweep import (
    RUNS_COLUMNS,
    SUMMARY_COLUMNS,
    RunResult,
    SweepExecutionError,
    run_one,
    run_sweep,
)

BASE = parse_scenario_text(
    "name: unit\nprotocol: ECA\nn: 2\nhorizon: 300\nseeds: [0, 1, 2]\n")

GRID = parse_scenario_text(
    "name: grid\nn: 2\nhorizon: 200\nseeds: [0, 1]\n"
    "sweep: {protocols: [CA, ECA], n_stations: [2, 3]}\n")


class TestRunOne:
    def test_matches_direct_simulation(self):
        cell = BASE.cells()[0]
        result = run_one(cell, 1, BASE.durations, BASE.impairments,
                         BASE.horizon_slots, BASE.horizon_us)
        stations, traffic = build_stations(cell, 1)
        sim = Simulation(stations, traffic, durations=BASE.durations,
                         impairments=BASE.impairments, seed=1)
        trace = sim.run(horizon_slots=BASE.horizon_slots)
        report = build_report(trace, BASE.durations)
        assert result.throughput == report.normalized_throughput
        assert result.collision_prob == report.collision_probability
        assert result.convergence_slot == trace.convergence_slot
        assert result.jain == report.jain_index
        assert result.slots == trace.slots == 300
        assert result.wall_time_us == trace.wall_time_us
        assert result.per_station == trace.per_station
        assert result.report_text == report.to_kv_text()
        assert result.trace_csv is None

    def test_trace_recording(self):
        cell = BASE.cells()[0]
        result = run_one(cell, 0, BASE.durations, BASE.impairments,
                         300, None, record_trace=True, fingerprint="fp")
        assert result.trace_csv is not None
        rebuilt = trace_from_csv(result.trace_csv)
        assert rebuilt.slots == 300
        assert rebuilt.wall_time_us == result.wall_time_us

    def test_trace_name_is_filesystem_safe(self):
        result = RunResult(label="StickyECA(2)", n_stations=4, seed=7,
                           throughput=0.0, packet_throughput=0.0,
                           collision_prob=0.0, convergence_slot=None,
                           jain=None, slots=0, wall_time_us=0)
        assert result.trace_name == "StickyECA-2-_n4_seed7.trace.csv"
        assert "(" not in result.trace_name


class TestRunSweep:
    def test_row_counts_and_order(self):
        result = run_sweep(GRID)
        cells = GRID.cells()
        assert result.scenario_name == "grid"
        assert result.fingerprint == GRID.fingerprint()
        assert len(result.summary_rows) == len(cells) == 4
        assert len(result.run_rows) == len(cells) * len(GRID.seeds) == 8
        expected_order = [(c.label, c.n_stations, s)
                          for c in cells for s in GRID.seeds]
        actual_order = [(r["protocol"], r["n_stations"], r["seed"])
                        for r in result.run_rows]
        assert actual_order == expected_order

    def test_seed_order_follows_scenario_not_sorting(self):
        scn = parse_scenario_text("n: 2\nhorizon: 100\nseeds: [5, 3]\n")
        result = run_sweep(scn)
        assert [r["seed"] for r in result.run_rows] == [5, 3]

    def test_summary_aggregates_run_rows(self):
        result = run_sweep(BASE)
        row = result.summary_rows[0]
        tps = [r["throughput"] for r in result.run_rows]
        convs = [r["convergence_slot"] for r in result.run_rows
                 if r["convergence_slot"] is not None]
        assert row["seeds"] == 3
        assert row["throughput_mean"] == pytest.approx(statistics.fmean(tps))
        assert row["throughput_std"] == pytest.approx(statistics.pstdev(tps))
        assert row["conv_slot_mean"] == pytest.approx(statistics.fmean(convs))
        assert row["nonconverged"] == 3 - len(convs)

    def test_nonconverged_counting_for_ca(self):
        scn = parse_scenario_text(
            "protocol: CA\nn: 2\nhorizon: 300\nseeds: [0, 1]\n")
        row = run_sweep(scn).summary_rows[0]
        # CA stations never enter the deterministic schedule, so no run
        # can satisfy the absorption predicate.
        assert row["nonconverged"] == 2
        assert row["conv_slot_mean"] is None

    def test_csv_shape_and_formatting(self):
        result = run_sweep(GRID)
        summary_lines = result.summary_csv.splitlines()
        runs_lines = result.runs_csv.splitlines()
        assert summary_lines[0] == ",".join(SUMMARY_COLUMNS)
        assert runs_lines[0] == ",".join(RUNS_COLUMNS)
        assert len(summary_lines) == 1 + 4
        assert len(runs_lines) == 1 + 8
        first = dict(zip(SUMMARY_COLUMNS, summary_lines[1].split(",")))
        assert first["protocol"] == "CA"
        # Floats are fixed-point with six places; absent values are empty.
        assert "." in first["throughput_mean"]
        assert len(first["throughput_mean"].split(".")[1]) == 6
        assert first["conv_slot_mean"] == ""

    def test_deterministic_output(self):
        a = run_sweep(GRID)
        b = run_sweep(GRID)
        assert a.summary_csv == b.summary_csv
        assert a.runs_csv == b.runs_csv

    def test_parallel_matches_serial(self):
        serial = run_sweep(GRID, workers=1)
        parallel = run_sweep(GRID, workers=2)
        assert parallel.summary_csv == serial.summary_csv
        assert parallel.runs_csv == serial.runs_csv

    def test_rejects_bad_worker_count(self):
        with pytest.raises(ConfigError):
            run_sweep(BASE, workers=0)

    def test_run_failures_carry_coordinates(self):
        # Strip the horizon so every run raises, then check the wrapper
        # names the failing (cell, seed).
        broken = dataclasses.replace(BASE, horizon_slots=None, horizon_us=None)
        with pytest.raises(SweepExecutionError) as exc:
            run_sweep(broken)
        assert "ECA" in str(exc.value)
        assert "seed=0" in str(exc.value)


class TestSweepFiles:
    def test_out_dir_layout(self, tmp_path):
        out = tmp_path / "results"
        result = run_sweep(BASE, out_dir=str(out), record_traces=True)
        assert result.summary_path == out / "summary.csv"
        assert result.runs_path == out / "runs.csv"
        assert result.summary_path.read_text() == result.summary_csv
        assert result.runs_path.read_text() == result.runs_csv
        assert len(result.trace_paths) == 3
        for path in result.trace_paths:
            assert path.parent == out / "traces"
            assert path.name.endswith(".trace.csv")
            rebuilt = trace_from_csv(path.read_text())
            assert rebuilt.slots == 300

    def test_traces_only_when_requested(self, tmp_path):
        out = tmp_path / "results"
        result = run_sweep(BASE, out_dir=str(out))
        assert result.traces == ()
        assert result.trace_paths == ()
        assert not (out / "traces").exists()

    def test_in_memory_only_without_out_dir(self):
        result = run_sweep(BASE, record_traces=True)
        assert result.summary_path is None
        assert result.trace_paths == ()
        assert len(result.traces) == 3
        name, text = result.traces[0]
        assert name == "ECA_n2_seed0.trace.csv"
        assert trace_from_csv(text).slots == 300

    def test_out_dir_created_recursively(self, tmp_path):
        nested = tmp_path / "a" / "b" / "c"
        run_sweep(BASE, out_dir=str(nested))
        assert (nested / "summary.csv").is_file()
