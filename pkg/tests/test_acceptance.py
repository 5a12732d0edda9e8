"""Acceptance gate: eleven end-to-end claims, each verified at full scale.

Every test here runs a complete experiment (hundreds to thousands of
simulations), prints one ``[C<n>] PASS/FAIL`` verdict line carrying the
measured quantities, and then asserts the claim at its stated tolerance.
The whole file takes several minutes; the heavyweight item is C2, which
drives one-million-slot horizons at full schedule occupancy.
"""

from __future__ import annotations

import dataclasses
import math
import statistics
import time

import pytest

from ecasim.channel import Simulation
from ecasim.metrics import jain_fairness
from ecasim.oracle import (
    certify,
    exact_convergence_distribution,
    monte_carlo_convergence,
    tv_distance,
)
from ecasim.protocols import ProtocolConfig
from ecasim.scenario import build_stations, load_scenario, parse_scenario_text
from ecasim.sweep import run_one, run_sweep


def _verdict(tag: str, ok: bool, detail: str) -> str:
    line = f"[{tag}] {'PASS' if ok else 'FAIL'} - {detail}"
    print(line, flush=True)
    return line


def _single_cell(protocol: str, n: int):
    text = f"protocol: {protocol}\nn: {n}\ntraffic: saturated\n"
    return parse_scenario_text(text, name="acceptance").cells()[0]


def _se_diff(row_a, row_b) -> float:
    """Standard error of the difference of two cell means (matched seed counts)."""
    assert row_a["seeds"] == row_b["seeds"]
    return math.sqrt(row_a["throughput_std"] ** 2
                     + row_b["throughput_std"] ** 2) / math.sqrt(row_a["seeds"])


# --------------------------------------------------------------------------
# C1: two saturated stations always lock into a collision-free alternation.
# --------------------------------------------------------------------------

def test_c01_two_station_runs_always_converge_and_stay_clean():
    cell = _single_cell("ECA", 2)
    t0 = time.perf_counter()
    converged = 0
    post_collisions = 0
    for seed in range(1000):
        stations, traffic = build_stations(cell, seed)
        trace = Simulation(stations, traffic, seed=seed).run(horizon_slots=10_000)
        if trace.convergence_slot is not None:
            converged += 1
        post_collisions += trace.collisions_after_convergence
    elapsed = time.perf_counter() - t0
    ok = converged == 1000 and post_collisions == 0 and elapsed < 5.0
    detail = (f"{converged}/1000 runs converged, {post_collisions} collisions "
              f"after convergence, {elapsed:.2f}s (budget 5s)")
    _verdict("C1", ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------
# C2: absorption across the station grid, certificate-checked on every
# converged run.  The N=16 leg exercises a schedule with zero spare slots.
# --------------------------------------------------------------------------

def test_c02_absorption_across_the_station_grid():
    grid = (2, 4, 6, 8, 12, 16)
    per_n = {}
    bad_certificates = 0
    for n in grid:
        cell = _single_cell("ECA", n)
        count = 0
        for seed in range(100):
            stations, traffic = build_stations(cell, seed)
            trace = Simulation(stations, traffic, seed=seed).run(
                horizon_slots=1_000_000, stop_on_convergence=True)
            if trace.convergence_slot is None:
                continue
            count += 1
            cert = certify(stations, traffic)
            if not cert.certified or len(set(cert.offsets)) != n:
                bad_certificates += 1
        per_n[n] = count
    ok = all(v == 100 for v in per_n.values()) and bad_certificates == 0
    tallies = ", ".join(f"N={n}: {v}/100" for n, v in per_n.items())
    detail = (f"convergence within 10^6 slots [{tallies}]; "
              f"{bad_certificates} certificate failures on converged runs")
    _verdict("C2", ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------
# C3: the exhaustive convergence-slot distribution matches Monte Carlo.
# --------------------------------------------------------------------------

def test_c03_exact_distribution_matches_sampling():
    cfg = ProtocolConfig(cw_min=4, cw_max=8, base_cycle=4)
    t0 = time.perf_counter()
    exact = exact_convergence_distribution(2, cfg, horizon=200)
    sampled = monte_carlo_convergence(2, cfg, horizon=200,
                                      runs=100_000, base_seed=0)
    tv = tv_distance(exact.as_floats(), sampled)
    elapsed = time.perf_counter() - t0
    ok = tv <= 0.01 and elapsed < 60.0
    detail = (f"total-variation distance {tv:.4f} (tolerance 0.01) over "
              f"10^5 sampled runs, {elapsed:.1f}s (budget 60s)")
    _verdict("C3", ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------
# C4 + C5 share one full sweep across the station grid.
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def station_grid_summary():
    result = run_sweep(load_scenario("fig5_sweep"), workers=1)
    return {(row["protocol"], row["n_stations"]): row
            for row in result.summary_rows}


def test_c04_throughput_ordering_across_the_grid(station_grid_summary):
    ns = sorted({n for _, n in station_grid_summary})
    failures = []
    for n in ns:
        ca = station_grid_summary[("CA", n)]
        eca = station_grid_summary[("ECA", n)]
        sticky = station_grid_summary[("StickyECA(2)", n)]
        if n >= 5:
            margin = eca["throughput_mean"] - ca["throughput_mean"]
            if not margin > 2 * _se_diff(eca, ca):
                failures.append(f"ECA-CA margin {margin:.4f} at N={n}")
        margin = sticky["throughput_mean"] - eca["throughput_mean"]
        if not margin > -2 * _se_diff(sticky, eca):
            failures.append(f"Sticky-ECA margin {margin:.4f} at N={n}")
    ok = not failures
    detail = ("ECA > CA at every N >= 5 and StickyECA(2) >= ECA at every N, "
              "at 2x-standard-error margins over 30 seeds"
              if ok else "; ".join(failures))
    _verdict("C4", ok, detail)
    assert ok, detail


def test_c05_legacy_throughput_never_recovers_with_contention(station_grid_summary):
    ns = sorted({n for _, n in station_grid_summary})
    rows = [station_grid_summary[("CA", n)] for n in ns]
    increases = []
    for prev, cur in zip(rows, rows[1:]):
        step = cur["throughput_mean"] - prev["throughput_mean"]
        if step > 0:
            increases.append((cur["n_stations"], step, 2 * _se_diff(prev, cur)))
    ok = (not increases
          or (len(increases) == 1 and increases[0][1] <= increases[0][2]))
    detail = (f"CA mean throughput non-increasing over {len(rows)} grid points "
              f"({len(increases)} upward steps, 1 allowed within noise)")
    if increases:
        detail += "; " + ", ".join(
            f"+{step:.4f} at N={n} (noise band {band:.4f})"
            for n, step, band in increases)
    _verdict("C5", ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------
# C6: stickiness accelerates schedule construction.
# --------------------------------------------------------------------------

def test_c06_stickiness_speeds_up_convergence():
    medians = {}
    stragglers = {}
    for protocol in ("ECA", "StickyECA(2)"):
        cell = _single_cell(protocol, 10)
        slots = []
        missing = 0
        for seed in range(200):
            stations, traffic = build_stations(cell, seed)
            trace = Simulation(stations, traffic, seed=seed).run(
                horizon_slots=1_000_000, stop_on_convergence=True)
            if trace.convergence_slot is None:
                missing += 1
                slots.append(1_000_000)
            else:
                slots.append(trace.convergence_slot)
        medians[protocol] = statistics.median(slots)
        stragglers[protocol] = missing
    ok = (medians["StickyECA(2)"] < medians["ECA"]
          and not any(stragglers.values()))
    detail = (f"median convergence slot at N=10 over 200 seeds: "
              f"StickyECA(2) {medians['StickyECA(2)']:.0f} < "
              f"ECA {medians['ECA']:.0f}")
    _verdict("C6", ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------
# C7: a settled mixed-length schedule is exactly fair, because the
# double-length station sends twice the packets per access.
# --------------------------------------------------------------------------

def test_c07_mixed_schedule_lengths_stay_exactly_fair():
    scenario = load_scenario("adaptive_fairness")
    cell = scenario.cells()[0]
    hyper_cycle = 8          # lcm of cycle lengths 4, 4 and 8
    window = 10 * hyper_cycle
    hits = 0
    unfair = []
    for seed in range(200):
        stations, traffic = build_stations(cell, seed)
        trace = Simulation(stations, traffic, seed=seed,
                           record_trace=True).run(
            horizon_slots=scenario.horizon_slots)
        if trace.convergence_slot is None:
            continue
        exponents = sorted(s.schedule_exponent for s in trace.final_snapshots)
        if exponents != [0, 0, 1]:
            continue
        hits += 1
        tail = trace.records[-window:]
        packets = {counter.station_id: 0 for counter in trace.per_station}
        clean = all(record.outcome_code in ("E", "S") for record in tail)
        for record in tail:
            if record.outcome_code == "S":
                packets[record.transmitters[0]] += record.n_packets
        counts = list(packets.values())
        if not (clean and len(set(counts)) == 1
                and jain_fairness(counts) == 1.0):
            unfair.append(seed)
    ok = hits >= 1 and not unfair
    detail = (f"{hits}/200 seeds settled on schedule exponents (0,0,1); "
              f"packet counts over 10 hyper-cycles exactly equal "
              f"(Jain index 1.0) on {hits - len(unfair)} of them")
    _verdict("C7", ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------
# C8: one-shot traffic never builds a schedule, so the deterministic
# protocol collapses onto the legacy one.
# --------------------------------------------------------------------------

def test_c08_single_packet_traffic_erases_the_protocol_gap():
    result = run_sweep(load_scenario("single_packet"), workers=1)
    rows = {row["protocol"]: row for row in result.summary_rows}
    ca = rows["CA"]["throughput_mean"]
    eca = rows["ECA"]["throughput_mean"]
    relative = abs(eca - ca) / ca
    ok = relative < 0.02
    detail = (f"transient-traffic throughput CA {ca:.6f} vs ECA {eca:.6f}, "
              f"{100 * relative:.3f}% relative difference (tolerance 2%)")
    _verdict("C8", ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------
# C9: replacing half a legacy cell helps, and absorption is never declared
# while legacy stations contend.
# --------------------------------------------------------------------------

def test_c09_mixed_population_beats_all_legacy():
    mixed = run_sweep(load_scenario("coexistence_mixed"), workers=1)
    legacy = run_sweep(load_scenario("coexistence_legacy"), workers=1)
    row_mixed = mixed.summary_rows[0]
    row_legacy = legacy.summary_rows[0]
    margin = row_mixed["throughput_mean"] - row_legacy["throughput_mean"]
    band = 2 * _se_diff(row_mixed, row_legacy)
    never_converged = all(row["convergence_slot"] is None
                          for row in mixed.run_rows)
    cell = load_scenario("coexistence_mixed").cells()[0]
    spurious_certificates = 0
    for seed in (0, 1, 2):
        stations, traffic = build_stations(cell, seed)
        Simulation(stations, traffic, seed=seed).run(horizon_slots=10_000)
        if certify(stations, traffic).certified:
            spurious_certificates += 1
    ok = margin > band and never_converged and spurious_certificates == 0
    detail = (f"5 CA + 5 ECA {row_mixed['throughput_mean']:.4f} vs 10 CA "
              f"{row_legacy['throughput_mean']:.4f}, margin {margin:.4f} > "
              f"{band:.4f} (2x standard error); no absorption declared or "
              f"certified with legacy stations saturated")
    _verdict("C9", ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------
# C10: under clock drift, sticky stations shed the schedule instead of
# deadlocking on it, and still beat legacy on collisions.
# --------------------------------------------------------------------------

def test_c10_sticky_stations_survive_clock_drift():
    scenario = load_scenario("drift")
    collision = {}
    worst_streak = 0
    for cell in scenario.cells():
        probs = []
        for seed in scenario.seeds:
            result = run_one(cell, seed, scenario.durations,
                             scenario.impairments, scenario.horizon_slots,
                             scenario.horizon_us)
            probs.append(result.collision_prob)
            if cell.label == "StickyECA(2)":
                worst_streak = max(
                    worst_streak,
                    max(c.max_det_failure_streak for c in result.per_station))
        collision[cell.label] = statistics.fmean(probs)
    ok = (worst_streak <= 2
          and collision["StickyECA(2)"] < collision["CA"])
    detail = (f"misalignment 1%: worst deterministic failure streak "
              f"{worst_streak} (limit 2), collision probability "
              f"StickyECA(2) {collision['StickyECA(2)']:.4f} < "
              f"CA {collision['CA']:.4f}")
    _verdict("C10", ok, detail)
    assert ok, detail


# --------------------------------------------------------------------------
# C11: re-running any (scenario, seed) reproduces every output byte.
# --------------------------------------------------------------------------

def test_c11_replays_are_byte_identical(tmp_path):
    compared = 0
    mismatched = []
    for name, seeds in (("two_station", None), ("drift", (0, 1, 2))):
        scenario = load_scenario(name)
        if seeds is not None:
            scenario = dataclasses.replace(scenario, seeds=seeds)
        replays = []
        for attempt in ("first", "second"):
            out = tmp_path / name / attempt
            run_sweep(scenario, out_dir=str(out), workers=1,
                      record_traces=True)
            replays.append(out)
        first, second = replays
        names = sorted(p.relative_to(first)
                       for p in first.rglob("*") if p.is_file())
        assert names == sorted(p.relative_to(second)
                               for p in second.rglob("*") if p.is_file())
        for rel in names:
            compared += 1
            if (first / rel).read_bytes() != (second / rel).read_bytes():
                mismatched.append(f"{name}/{rel}")
    ok = not mismatched and compared > 0
    detail = (f"{compared} output files (summaries, per-run tables, full "
              f"traces) byte-identical across independent replays"
              if ok else f"differing files: {', '.join(mismatched)}")
    _verdict("C11", ok, detail)
    assert ok, detail
