"""Performance metrics computed from channel traces.

All functions are pure: they read a finished :class:`~ecasim.channel.Trace`
and return numbers. Definitions:

* normalized throughput - fraction of wall time spent carrying payload,
  ``(packets_delivered * t_payload) / wall_time``.
* collision probability - fraction of transmission *attempts* that failed
  (per-attempt, not per-slot: one collision slot with three transmitters is
  three failed attempts).
* jain index - ``(sum x)^2 / (n * sum x^2)`` over per-station packet counts;
  1.0 exactly when every station delivered the same amount.
* access delay - head-of-queue to success feedback, in microseconds.
* jitter - per-station standard deviation of inter-success times (our
  definition; there is no standard one).

Convergence detection prefers the exact absorption predicate evaluated
online during the run; for traces that carry only per-slot records (for
example re-imported CSV exports) an observational fallback is provided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .channel import (
    OUTCOME_COLLISION,
    OUTCOME_ERROR,
    OUTCOME_SUCCESS,
    SlotDurations,
    StationCounters,
    Trace,
)
from .protocols import ConfigError

__all__ = [
    "UndefinedMetricError",
    "MetricsReport",
    "throughput",
    "packet_throughput",
    "collision_probability",
    "jain_fairness",
    "detect_convergence",
    "build_report",
]

OBSERVATIONAL_HYPER_CYCLES = 3


class UndefinedMetricError(ValueError):
    """The requested metric is undefined on this input (e.g. empty trace)."""


@dataclass(frozen=True)
class MetricsReport:
    """Flat summary of one finished run."""

    normalized_throughput: float
    packet_throughput: float
    collision_probability: float
    convergence_slot: Optional[int]
    jain_index: Optional[float]
    per_station: Tuple[StationCounters, ...]

    def to_kv_text(self) -> str:
        """Serialize as one ``key=value`` pair per line."""
        lines = [
            f"normalized_throughput={self.normalized_throughput:.6f}",
            f"packet_throughput={self.packet_throughput:.6f}",
            f"collision_probability={self.collision_probability:.6f}",
            "convergence_slot=" + (str(self.convergence_slot)
                                   if self.convergence_slot is not None else ""),
            "jain_index=" + (f"{self.jain_index:.6f}"
                             if self.jain_index is not None else ""),
        ]
        for sc in self.per_station:
            prefix = f"station.{sc.station_id}"
            delay = (f"{sc.mean_access_delay_us:.1f}"
                     if sc.mean_access_delay_us is not None else "")
            jitter = f"{sc.jitter_us:.1f}" if sc.jitter_us is not None else ""
            lines.append(f"{prefix}.packets={sc.packets_delivered}")
            lines.append(f"{prefix}.attempts={sc.attempts}")
            lines.append(f"{prefix}.mean_access_delay_us={delay}")
            lines.append(f"{prefix}.jitter_us={jitter}")
        return "\n".join(lines) + "\n"


def throughput(trace: Trace, durations: SlotDurations = SlotDurations()) -> float:
    """Payload-time fraction of the total wall time."""
    if trace.slots == 0:
        raise UndefinedMetricError("throughput of an empty trace is undefined")
    if trace.wall_time_us <= 0:
        raise UndefinedMetricError("throughput over zero wall time is undefined")
    return (trace.packets_delivered * durations.t_payload) / trace.wall_time_us


def packet_throughput(trace: Trace) -> float:
    """Delivered packets per second of wall time."""
    if trace.slots == 0 or trace.wall_time_us <= 0:
        raise UndefinedMetricError("packet throughput is undefined on this trace")
    return trace.packets_delivered / (trace.wall_time_us / 1_000_000)


def collision_probability(trace: Trace) -> float:
    """Fraction of transmission attempts that failed; 0.0 with no attempts."""
    if trace.attempts == 0:
        return 0.0
    return trace.failed_attempts / trace.attempts


def jain_fairness(per_station_packets: Sequence[float]) -> float:
    """Jain's fairness index of a non-degenerate allocation vector."""
    n = len(per_station_packets)
    if n == 0:
        raise UndefinedMetricError("fairness of an empty allocation is undefined")
    total = float(sum(per_station_packets))
    squares = float(sum(x * x for x in per_station_packets))
    if squares == 0.0:
        raise UndefinedMetricError("fairness of an all-zero allocation is undefined")
    return (total * total) / (n * squares)


def _observational_convergence(trace: Trace, hyper_cycle: int) -> Optional[int]:
    """Fallback for record-only traces: earliest success slot from which the
    trace stays collision-free for at least a few hyper-cycles."""
    records = trace.records
    window = OBSERVATIONAL_HYPER_CYCLES * hyper_cycle
    last_bad = -1
    for rec in records:
        if rec.outcome_code in (OUTCOME_COLLISION, OUTCOME_ERROR):
            last_bad = rec.slot_index
    for rec in records:
        if rec.slot_index <= last_bad:
            continue
        if rec.outcome_code == OUTCOME_SUCCESS:
            if len(records) - rec.slot_index >= window:
                return rec.slot_index
            return None
    return None


def detect_convergence(trace: Trace,
                       hyper_cycle: Optional[int] = None) -> Optional[int]:
    """First slot at which the absorption predicate held, if ever.

    A trace produced by the simulator carries the exact answer (the
    predicate is evaluated online against full station state). A trace
    rebuilt from per-slot records alone cannot: for those, the fallback
    reports the earliest success slot after which no collision is observed
    for at least three hyper-cycles, which needs the hyper-cycle length -
    taken from the trace's schedule table or the ``hyper_cycle`` argument.
    """
    if trace.convergence_slot is not None:
        return trace.convergence_slot
    if trace.final_snapshots is not None:
        # Exact tracking ran and never fired.
        return None
    if trace.records is None:
        raise ConfigError(
            "convergence detection needs station snapshots or per-slot records")
    if hyper_cycle is None:
        if not trace.station_cycles:
            raise ConfigError(
                "record-only traces need an explicit hyper-cycle length")
        hyper_cycle = math.lcm(*trace.station_cycles)
    if hyper_cycle < 1:
        raise ConfigError("hyper-cycle length must be positive")
    return _observational_convergence(trace, hyper_cycle)


def build_report(trace: Trace,
                 durations: SlotDurations = SlotDurations()) -> MetricsReport:
    """Assemble the standard metrics for one finished run."""
    packets = [sc.packets_delivered for sc in trace.per_station]
    try:
        jain: Optional[float] = jain_fairness(packets) if packets else None
    except UndefinedMetricError:
        jain = None
    return MetricsReport(
        normalized_throughput=throughput(trace, durations),
        packet_throughput=packet_throughput(trace),
        collision_probability=collision_probability(trace),
        convergence_slot=trace.convergence_slot,
        jain_index=jain,
        per_station=trace.per_station,
    )
