"""Slotted discrete-event channel loop.

Each channel slot, every backlogged station ticks its backoff state machine;
the set of transmitters determines the slot outcome:

* no transmitter              -> short empty slot
* two or more transmitters    -> collision slot, failure fed back to all
* exactly one transmitter     -> success, unless a channel error or (for a
  deterministic-mode transmitter) a clock-drift misalignment turns the
  access into a failure

Slot durations are integer microseconds throughout, so wall-clock accounting
is exact and a run is replayable bit-for-bit from its scenario and seed.
The run loop is event-driven: stretches of guaranteed-empty slots are applied
in one batch, which changes nothing observable (no randomness is consumed in
an empty slot) but makes long converged runs cheap.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

from .oracle import collision_free_alignment
from .protocols import (
    STREAM_ARRIVALS,
    STREAM_CHANNEL,
    ConfigError,
    Mode,
    Outcome,
    Station,
    StationSnapshot,
    substream,
)

__all__ = [
    "SlotDurations",
    "Saturated",
    "Bernoulli",
    "SinglePacket",
    "TrafficModel",
    "ImpairmentModel",
    "SlotRecord",
    "StationCounters",
    "Trace",
    "Simulation",
    "trace_to_csv",
    "trace_from_csv",
    "TRACE_COLUMNS",
]

SIGMA_DEFAULT = 20
T_OVERHEAD_DEFAULT = 200
T_PAYLOAD_DEFAULT = 1000
T_COLLISION_DEFAULT = 1200


def _require_positive_int(value, name: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
        raise ConfigError(f"{name} must be a positive integer (microseconds)")
    return value


@dataclass(frozen=True)
class SlotDurations:
    """Slot timing in integer microseconds.

    A successful access lasts ``t_overhead + n_packets * t_payload``; the
    defaults split a 1200 us busy slot into 200 us of framing plus one
    1000 us payload, with 20 us empty slots.
    """

    sigma: int = SIGMA_DEFAULT
    t_overhead: int = T_OVERHEAD_DEFAULT
    t_payload: int = T_PAYLOAD_DEFAULT
    t_collision: int = T_COLLISION_DEFAULT

    def __post_init__(self) -> None:
        _require_positive_int(self.sigma, "sigma")
        _require_positive_int(self.t_overhead, "t_overhead")
        _require_positive_int(self.t_payload, "t_payload")
        _require_positive_int(self.t_collision, "t_collision")
        if self.sigma >= self.t_collision:
            raise ConfigError("sigma must be much shorter than t_collision")

    def success_duration(self, n_packets: int) -> int:
        return self.t_overhead + n_packets * self.t_payload


@dataclass(frozen=True)
class Saturated:
    """The station always has traffic queued."""


@dataclass(frozen=True)
class Bernoulli:
    """Per-slot packet arrivals with a bounded queue."""

    arrival_prob: float
    queue_capacity: int = 8

    def __post_init__(self) -> None:
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ConfigError("arrival_prob must be in [0, 1]")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")


@dataclass(frozen=True)
class SinglePacket:
    """Stations join with one packet, transmit it, and leave again."""

    join_rate: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.join_rate <= 1.0:
            raise ConfigError("join_rate must be in [0, 1]")


TrafficModel = Union[Saturated, Bernoulli, SinglePacket]


@dataclass(frozen=True)
class ImpairmentModel:
    """Channel imperfections, both per transmission attempt.

    ``p_err`` corrupts any lone transmission; ``p_misalign`` models
    clock-drift slot misalignment and only ever hits a transmitter that is
    on the deterministic schedule. Either way the transmitter just sees a
    failure - the feedback channel cannot tell errors from collisions.
    """

    p_err: float = 0.0
    p_misalign: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_err <= 1.0:
            raise ConfigError("p_err must be in [0, 1]")
        if not 0.0 <= self.p_misalign <= 1.0:
            raise ConfigError("p_misalign must be in [0, 1]")

    @property
    def ideal(self) -> bool:
        return self.p_err == 0.0 and self.p_misalign == 0.0


OUTCOME_EMPTY = "E"
OUTCOME_SUCCESS = "S"
OUTCOME_COLLISION = "C"
OUTCOME_ERROR = "X"


@dataclass(frozen=True)
class SlotRecord:
    """One resolved channel slot."""

    slot_index: int
    outcome_code: str
    transmitters: Tuple[int, ...]
    n_packets: int
    duration_us: int
    wall_time_start_us: int


@dataclass(frozen=True)
class StationCounters:
    station_id: int
    attempts: int
    successes: int
    failures: int
    packets_delivered: int
    mean_access_delay_us: Optional[float]
    jitter_us: Optional[float]
    max_det_failure_streak: int


@dataclass
class Trace:
    """Everything a finished run left behind.

    ``records`` is only populated when the run was asked to keep per-slot
    records; the aggregate counters are always present and always consistent
    with the slots that produced them.
    """

    fingerprint: str
    slots: int
    wall_time_us: int
    empty_slots: int
    success_slots: int
    collision_slots: int
    error_slots: int
    attempts: int
    failed_attempts: int
    packets_delivered: int
    per_station: Tuple[StationCounters, ...]
    convergence_slot: Optional[int]
    collisions_after_convergence: int
    records: Optional[List[SlotRecord]] = None
    final_snapshots: Optional[Tuple[StationSnapshot, ...]] = None
    converged_snapshots: Optional[Tuple[StationSnapshot, ...]] = None
    station_cycles: Optional[Tuple[int, ...]] = None


class _StationStats:
    __slots__ = ("attempts", "successes", "failures", "packets",
                 "delay_sum_us", "delay_count", "last_success_us",
                 "gap_sum", "gap_sq_sum", "gap_count",
                 "det_fail_streak", "max_det_fail_streak", "head_since_us")

    def __init__(self) -> None:
        self.attempts = 0
        self.successes = 0
        self.failures = 0
        self.packets = 0
        self.delay_sum_us = 0
        self.delay_count = 0
        self.last_success_us = None
        self.gap_sum = 0
        self.gap_sq_sum = 0
        self.gap_count = 0
        self.det_fail_streak = 0
        self.max_det_fail_streak = 0
        self.head_since_us = 0

    def counters(self, station_id: int) -> StationCounters:
        mean_delay = (self.delay_sum_us / self.delay_count
                      if self.delay_count else None)
        jitter = None
        if self.gap_count >= 1:
            mean_gap = self.gap_sum / self.gap_count
            var = max(self.gap_sq_sum / self.gap_count - mean_gap * mean_gap, 0.0)
            jitter = math.sqrt(var)
        return StationCounters(
            station_id=station_id,
            attempts=self.attempts,
            successes=self.successes,
            failures=self.failures,
            packets_delivered=self.packets,
            mean_access_delay_us=mean_delay,
            jitter_us=jitter,
            max_det_failure_streak=self.max_det_fail_streak,
        )


class Simulation:
    """Drives a set of stations over a slotted channel.

    ``step()`` executes exactly one slot; ``run()`` executes slots up to a
    horizon, batching guaranteed-empty stretches. Both paths share the same
    per-slot body, so they produce identical traces.
    """

    def __init__(self, stations: Sequence[Station],
                 traffic: Sequence[TrafficModel],
                 durations: SlotDurations = SlotDurations(),
                 impairments: ImpairmentModel = ImpairmentModel(),
                 seed: int = 0,
                 record_trace: bool = False,
                 fingerprint: str = "") -> None:
        if len(stations) == 0:
            raise ConfigError("at least one station is required")
        if len(stations) != len(traffic):
            raise ConfigError("one traffic model per station is required")
        self.stations = list(stations)
        self.traffic = list(traffic)
        self.durations = durations
        self.impairments = impairments
        self.seed = seed
        self.fingerprint = fingerprint
        self.records: Optional[List[SlotRecord]] = [] if record_trace else None

        self.slot = 0
        self.wall_us = 0
        self.empty_slots = 0
        self.success_slots = 0
        self.collision_slots = 0
        self.error_slots = 0
        self.attempts = 0
        self.failed_attempts = 0
        self.packets_delivered = 0

        self.convergence_slot: Optional[int] = None
        self.converged_snapshots: Optional[Tuple[StationSnapshot, ...]] = None
        self.collisions_after_convergence = 0

        self._sigma = durations.sigma
        self._t_overhead = durations.t_overhead
        self._t_payload = durations.t_payload
        self._t_collision = durations.t_collision
        self._stats = [_StationStats() for _ in self.stations]
        self._chan_rng = None
        if not impairments.ideal:
            self._chan_rng = substream(seed, STREAM_CHANNEL)

        # Per-station traffic state. Saturated stations are always
        # backlogged; the others carry a queue of arrival timestamps and an
        # event-driven next-arrival slot.
        self._saturated = [isinstance(t, Saturated) for t in self.traffic]
        self._all_saturated = all(self._saturated)
        self._queues: List[Optional[List[int]]] = []
        self._contending: List[bool] = []
        self._next_arrival: List[Optional[int]] = []
        self._arr_rng = []
        for idx, model in enumerate(self.traffic):
            if isinstance(model, Saturated):
                self._queues.append(None)
                self._contending.append(True)
                self._next_arrival.append(None)
                self._arr_rng.append(None)
            else:
                rng = substream(seed, STREAM_ARRIVALS, self.stations[idx].station_id)
                self._arr_rng.append(rng)
                self._queues.append([])
                self._contending.append(False)
                rate = (model.arrival_prob if isinstance(model, Bernoulli)
                        else model.join_rate)
                first = int(rng.geometric(rate)) - 1 if rate > 0.0 else None
                self._next_arrival.append(first)

    # -- traffic ---------------------------------------------------------

    def _process_arrivals(self) -> None:
        if self._all_saturated:
            return
        slot = self.slot
        for idx, nxt in enumerate(self._next_arrival):
            if nxt is None or nxt != slot:
                continue
            model = self.traffic[idx]
            queue = self._queues[idx]
            if isinstance(model, Bernoulli):
                if len(queue) < model.queue_capacity:
                    queue.append(self.wall_us)
                if not self._contending[idx]:
                    self._contending[idx] = True
                    self.stations[idx].rejoin()
                    self._stats[idx].head_since_us = self.wall_us
                self._next_arrival[idx] = slot + int(self._arr_rng[idx].geometric(model.arrival_prob))
            else:  # SinglePacket: one packet, then leave
                queue.append(self.wall_us)
                self._contending[idx] = True
                self.stations[idx].rejoin()
                self._stats[idx].head_since_us = self.wall_us
                self._next_arrival[idx] = None

    def _schedule_next_join(self, idx: int) -> None:
        model = self.traffic[idx]
        if isinstance(model, SinglePacket) and model.join_rate > 0.0:
            self._next_arrival[idx] = self.slot + int(self._arr_rng[idx].geometric(model.join_rate))

    # -- slot engine ------------------------------------------------------

    def step(self) -> SlotRecord:
        """Execute exactly one channel slot and return its record."""
        return self._advance(True)

    def _advance(self, build_record: bool) -> Optional[SlotRecord]:
        """One channel slot; builds a :class:`SlotRecord` only when needed.

        ``run`` passes ``build_record=False`` so that untraced simulations skip
        the per-slot record allocation; everything else (state updates, counters,
        convergence detection) is identical on both paths.
        """
        if not self._all_saturated:
            self._process_arrivals()
        transmitters = []
        stations = self.stations
        contending = self._contending
        for idx in range(len(stations)):
            if contending[idx]:
                station = stations[idx]
                b = station.b
                if b > 0:
                    # Inlined slot_tick(), minus the awaiting-feedback guard:
                    # the engine always resolves feedback within the slot, so
                    # the guard can never fire here.
                    station.b = b - 1
                else:
                    station.awaiting_feedback = True
                    transmitters.append((idx, 1 << station.schedule_exponent))

        slot = self.slot
        wall = self.wall_us
        want_record = build_record or self.records is not None
        record = None
        n_tx = len(transmitters)

        if n_tx == 0:
            code = OUTCOME_EMPTY
            duration = self._sigma
            self.empty_slots += 1
            if want_record:
                record = SlotRecord(slot, code, (), 0, duration, wall)
        elif n_tx >= 2:
            code = OUTCOME_COLLISION
            duration = self._t_collision
            self.collision_slots += 1
            if want_record:
                ids = tuple(stations[idx].station_id for idx, _ in transmitters)
                record = SlotRecord(slot, code, ids, 0, duration, wall)
            for idx, _ in transmitters:
                self._feed_failure(idx)
        else:
            idx, n_offered = transmitters[0]
            station = stations[idx]
            imp = self.impairments
            fail_code = None
            if imp.p_err > 0.0 and self._chan_rng.random() < imp.p_err:
                fail_code = OUTCOME_ERROR
            elif (station.mode == Mode.DETERMINISTIC and imp.p_misalign > 0.0
                  and self._chan_rng.random() < imp.p_misalign):
                fail_code = OUTCOME_COLLISION
            if fail_code is not None:
                code = fail_code
                duration = self._t_collision
                if fail_code == OUTCOME_ERROR:
                    self.error_slots += 1
                else:
                    self.collision_slots += 1
                if want_record:
                    record = SlotRecord(slot, code, (station.station_id,), 0,
                                        duration, wall)
                self._feed_failure(idx)
            else:
                code = OUTCOME_SUCCESS
                queue = self._queues[idx]
                n_packets = n_offered if queue is None else min(n_offered, len(queue))
                duration = self._t_overhead + n_packets * self._t_payload
                self.success_slots += 1
                if want_record:
                    record = SlotRecord(slot, code, (station.station_id,),
                                        n_packets, duration, wall)
                self._feed_success(idx, n_packets, wall + duration)

        if self.convergence_slot is None:
            if n_tx and self._all_saturated and collision_free_alignment(stations):
                self.convergence_slot = slot
                self.converged_snapshots = tuple(st.snapshot() for st in stations)
        elif code == OUTCOME_COLLISION:
            self.collisions_after_convergence += 1

        if self.records is not None:
            self.records.append(record)
        self.wall_us = wall + duration
        self.slot = slot + 1
        return record

    def _feed_failure(self, idx: int) -> None:
        station = self.stations[idx]
        stats = self._stats[idx]
        stats.attempts += 1
        stats.failures += 1
        self.attempts += 1
        self.failed_attempts += 1
        was_deterministic = station.mode == Mode.DETERMINISTIC
        station.on_feedback(Outcome.FAILURE)
        if was_deterministic:
            stats.det_fail_streak += 1
            if stats.det_fail_streak > stats.max_det_fail_streak:
                stats.max_det_fail_streak = stats.det_fail_streak
            if station.mode == Mode.RANDOM:
                stats.det_fail_streak = 0
        else:
            stats.det_fail_streak = 0

    def _feed_success(self, idx: int, n_packets: int, end_us: int) -> None:
        station = self.stations[idx]
        stats = self._stats[idx]
        stats.attempts += 1
        stats.successes += 1
        stats.packets += n_packets
        stats.det_fail_streak = 0
        self.attempts += 1
        self.packets_delivered += n_packets

        stats.delay_sum_us += end_us - stats.head_since_us
        stats.delay_count += 1
        if stats.last_success_us is not None:
            gap = end_us - stats.last_success_us
            stats.gap_sum += gap
            stats.gap_sq_sum += gap * gap
            stats.gap_count += 1
        stats.last_success_us = end_us

        station.on_feedback(Outcome.SUCCESS)

        queue = self._queues[idx]
        if queue is None:
            stats.head_since_us = end_us
            return
        del queue[:n_packets]
        if queue:
            stats.head_since_us = queue[0]
        else:
            self._contending[idx] = False
            self._schedule_next_join(idx)

    # -- run loop ---------------------------------------------------------

    def run(self, horizon_slots: Optional[int] = None,
            horizon_us: Optional[int] = None,
            stop_on_convergence: bool = False) -> Trace:
        """Run until the slot or wall-clock horizon and return the trace.

        Stretches of guaranteed-empty slots (every pending backoff counter and
        arrival strictly in the future) are batch-decremented instead of being
        stepped one at a time; the resulting trace is identical to the stepped
        one.  With ``stop_on_convergence`` the run ends early once the
        absorption predicate holds, which is exact: the remaining slots of a
        converged ideal run contain no further state change of interest.
        """
        if horizon_slots is None and horizon_us is None:
            raise ConfigError("a horizon (slots or microseconds) is required")
        if horizon_slots is not None and horizon_slots <= 0:
            raise ConfigError("horizon must be positive")
        if horizon_us is not None and horizon_us <= 0:
            raise ConfigError("horizon must be positive")
        # Sentinel horizons keep the hot loop branch-free; at least one bound
        # is real, so the empty-stretch cap below is always finite.
        unbounded = sys.maxsize
        hs = horizon_slots if horizon_slots is not None else unbounded
        hu = horizon_us if horizon_us is not None else unbounded
        stations = self.stations
        contending = self._contending
        idx_range = range(len(stations))
        all_saturated = self._all_saturated
        sigma = self._sigma
        advance = self._advance
        while True:
            slot = self.slot
            if slot >= hs or self.wall_us >= hu:
                break
            if stop_on_convergence and self.convergence_slot is not None:
                break
            # Longest stretch of guaranteed-empty slots from here (-1: unbounded).
            gap = -1
            busy_now = False
            for idx in idx_range:
                if contending[idx]:
                    b = stations[idx].b
                    if b == 0:
                        busy_now = True
                        break
                    if gap < 0 or b < gap:
                        gap = b
            if busy_now:
                advance(False)
                continue
            if not all_saturated:
                for nxt in self._next_arrival:
                    if nxt is not None:
                        d = nxt - slot
                        if d <= 0:
                            busy_now = True
                            break
                        if gap < 0 or d < gap:
                            gap = d
                if busy_now:
                    advance(False)
                    continue
            bound = hs - slot
            if gap < 0 or bound < gap:
                gap = bound
            if hu is not unbounded:
                bound = -(-(hu - self.wall_us) // sigma)
                if bound < gap:
                    gap = bound
            # gap >= 1 here: neither horizon is reached and every pending
            # backoff or arrival is at least one slot away.
            for idx in idx_range:
                if contending[idx]:
                    stations[idx].b -= gap
            if self.records is not None:
                wall = self.wall_us
                for i in range(gap):
                    self.records.append(
                        SlotRecord(slot + i, OUTCOME_EMPTY, (), 0, sigma,
                                   wall + i * sigma))
            self.empty_slots += gap
            self.slot = slot + gap
            self.wall_us += gap * sigma
        return self.trace()

    def trace(self) -> Trace:
        return Trace(
            fingerprint=self.fingerprint,
            slots=self.slot,
            wall_time_us=self.wall_us,
            empty_slots=self.empty_slots,
            success_slots=self.success_slots,
            collision_slots=self.collision_slots,
            error_slots=self.error_slots,
            attempts=self.attempts,
            failed_attempts=self.failed_attempts,
            packets_delivered=self.packets_delivered,
            per_station=tuple(stats.counters(st.station_id)
                              for st, stats in zip(self.stations, self._stats)),
            convergence_slot=self.convergence_slot,
            collisions_after_convergence=self.collisions_after_convergence,
            records=self.records,
            final_snapshots=tuple(st.snapshot() for st in self.stations),
            converged_snapshots=self.converged_snapshots,
            station_cycles=tuple(st.cycle_slots for st in self.stations),
        )


TRACE_COLUMNS = ("slot_index", "outcome_code", "transmitter_ids",
                 "n_packets", "duration_us", "wall_time_us")


def trace_to_csv(trace: Trace) -> str:
    """Serialize per-slot records to the fixed-column CSV text."""
    if trace.records is None:
        raise ConfigError("trace was recorded without per-slot records")
    lines = [",".join(TRACE_COLUMNS)]
    for rec in trace.records:
        ids = "|".join(str(i) for i in rec.transmitters)
        lines.append(f"{rec.slot_index},{rec.outcome_code},{ids},"
                     f"{rec.n_packets},{rec.duration_us},{rec.wall_time_start_us}")
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str, fingerprint: str = "") -> Trace:
    """Rebuild a trace (records plus derived aggregates) from CSV text.

    Station-state snapshots and delay statistics are not representable in
    the record format, so the result carries counters only.
    """
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != ",".join(TRACE_COLUMNS):
        raise ConfigError("unrecognized trace header")
    records = []
    per_station: dict = {}
    empty = success = collision = error = 0
    attempts = failed = packets = 0
    wall_end = 0
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 6:
            raise ConfigError(f"malformed trace row: {ln!r}")
        slot_index = int(parts[0])
        code = parts[1]
        ids = tuple(int(x) for x in parts[2].split("|")) if parts[2] else ()
        n_packets = int(parts[3])
        duration = int(parts[4])
        wall = int(parts[5])
        records.append(SlotRecord(slot_index, code, ids, n_packets, duration, wall))
        wall_end = wall + duration
        for sid in ids:
            st = per_station.setdefault(sid, [0, 0, 0, 0])  # att, succ, fail, pkts
            st[0] += 1
        if code == OUTCOME_EMPTY:
            empty += 1
        elif code == OUTCOME_SUCCESS:
            success += 1
            attempts += 1
            packets += n_packets
            per_station[ids[0]][1] += 1
            per_station[ids[0]][3] += n_packets
        elif code == OUTCOME_COLLISION:
            collision += 1
            attempts += len(ids)
            failed += len(ids)
            for sid in ids:
                per_station[sid][2] += 1
        elif code == OUTCOME_ERROR:
            error += 1
            attempts += 1
            failed += 1
            per_station[ids[0]][2] += 1
        else:
            raise ConfigError(f"unknown outcome code {code!r}")
    counters = tuple(
        StationCounters(sid, att, succ, fail, pkts, None, None, 0)
        for sid, (att, succ, fail, pkts) in sorted(per_station.items()))
    return Trace(
        fingerprint=fingerprint,
        slots=len(records),
        wall_time_us=wall_end,
        empty_slots=empty,
        success_slots=success,
        collision_slots=collision,
        error_slots=error,
        attempts=attempts,
        failed_attempts=failed,
        packets_delivered=packets,
        per_station=counters,
        convergence_slot=None,
        collisions_after_convergence=0,
        records=records,
    )
