"""Ground-truth convergence checking and small-instance exhaustive analysis.

Three layers, each feeding the one above:

* ``collision_free_alignment`` - the pure state predicate: every contender is
  on the deterministic schedule, no two schedules ever put a transmission in
  the same slot, and no station still has a schedule adaptation pending.
  This is the definition of "converged" used everywhere else.
* ``certify`` - verifies the predicate operationally by driving clones of
  the stations through an ideal channel for a full hyper-cycle (restarting
  the accounting whenever a schedule length changes), producing a
  :class:`ConvergenceCertificate`.
* ``exact_convergence_distribution`` - exhaustively expands the joint
  backoff-state Markov chain of a toy configuration with exact rational
  probabilities. Random choices are not sampled: a tape is injected as the
  stations' generator and every choice point is branched on, so the
  enumeration runs the very same transition code as the simulator.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .protocols import (
    ConfigError,
    Mode,
    ProtocolConfig,
    Station,
    StationSnapshot,
)

__all__ = [
    "NotCertifiableError",
    "StateSpaceError",
    "ConvergenceCertificate",
    "ConvergenceDistribution",
    "collision_free_alignment",
    "certify",
    "exact_convergence_distribution",
    "monte_carlo_convergence",
    "tv_distance",
]

MAX_ENUMERATION_STATES = 10_000_000

_ENUM_MAX_STATIONS = 3
_ENUM_MAX_CW_MIN = 8
_ENUM_MAX_BASE_CYCLE = 8

_CERTIFY_SLOT_CAP = 1_000_000


class NotCertifiableError(ConfigError):
    """Certification was requested for a setup it is not defined on."""


class StateSpaceError(RuntimeError):
    """Exhaustive enumeration exceeded the allowed state-space size."""


def _adaptation_pending(station: Station) -> bool:
    """Would this station still double its schedule given only successes?

    Replays the station's own adaptation rule over a copy of its attempt
    window under an all-success future. A station with a pending doubling
    is not absorbed yet - the doubling will move its transmissions.
    """
    cfg = station.cfg
    if not station.kind.is_adaptive:
        return False
    if station.schedule_exponent >= cfg.max_schedule_exponent:
        return False
    window = deque(station.window, maxlen=cfg.adapt_window)
    for _ in range(cfg.adapt_window):
        window.append(int(True))
        if len(window) == cfg.adapt_window:
            failures = cfg.adapt_window - sum(window)
            if failures / cfg.adapt_window > cfg.adapt_threshold:
                return True
    return False


def collision_free_alignment(stations: Sequence[Station]) -> bool:
    """True iff the stations form a collision-free absorbing schedule.

    Requires every station to be in deterministic mode with no schedule
    adaptation pending, and the transmission schedules to be pairwise
    disjoint. Two periodic schedules with cycles ``Ci``, ``Ck`` and next
    transmissions ``bi``, ``bk`` slots away collide somewhere iff
    ``(bi - bk) mod gcd(Ci, Ck)`` is zero, so disjointness is an exact
    arithmetic check, not a heuristic.
    """
    for st in stations:
        if st.mode != Mode.DETERMINISTIC:
            return False
        if _adaptation_pending(st):
            return False
    n = len(stations)
    for i in range(n):
        bi = stations[i].b
        ci = stations[i].cycle_slots
        for k in range(i + 1, n):
            g = math.gcd(ci, stations[k].cycle_slots)
            if (bi - stations[k].b) % g == 0:
                return False
    return True


@dataclass(frozen=True)
class ConvergenceCertificate:
    """Verified statement that a global state is collision-free-absorbing.

    ``hyper_cycle`` is the least common multiple of all station cycles and
    ``offsets`` the per-station next-transmission slot modulo the station's
    own cycle, both describing the state that was examined (certified or
    not).
    """

    certified: bool
    hyper_cycle: int
    offsets: Tuple[int, ...]


def certify(station_states: Sequence[Station],
            traffic: Optional[Sequence[object]] = None) -> ConvergenceCertificate:
    """Operationally verify absorption by simulating clones forward.

    Clones of the given stations are run over an ideal channel for one full
    hyper-cycle. If a schedule length changes along the way (an adaptive
    station doubling), the accounting restarts: the run is extended until a
    complete hyper-cycle of the current schedule table has passed with no
    collision, no mode change and no further doubling pending. Certified
    means exactly that, which by periodicity extends to every future slot.
    """
    from .channel import ImpairmentModel, Saturated, Simulation

    if len(station_states) == 0:
        raise NotCertifiableError("at least one station is required")
    if traffic is not None:
        if len(traffic) != len(station_states):
            raise NotCertifiableError("one traffic model per station is required")
        for model in traffic:
            if not isinstance(model, Saturated):
                raise NotCertifiableError(
                    "a certificate is only defined for saturated traffic")

    cycles = [st.cycle_slots for st in station_states]
    hyper = math.lcm(*cycles)
    offsets = tuple(st.b % st.cycle_slots for st in station_states)

    if any(st.mode != Mode.DETERMINISTIC for st in station_states):
        return ConvergenceCertificate(False, hyper, offsets)

    from .protocols import substream

    clones = [
        Station.from_snapshot(st.cfg, st.snapshot(), rng=substream(0, 3, st.station_id))
        for st in station_states
    ]
    sim = Simulation(clones, [Saturated() for _ in clones],
                     impairments=ImpairmentModel(), seed=0)
    exponents = [st.schedule_exponent for st in clones]
    target = hyper
    certified = True
    while sim.slot < target or any(_adaptation_pending(st) for st in clones):
        record = sim.step()
        if record.outcome_code in ("C", "X"):
            certified = False
            break
        if any(st.mode != Mode.DETERMINISTIC for st in clones):
            certified = False
            break
        current = [st.schedule_exponent for st in clones]
        if current != exponents:
            exponents = current
            target = sim.slot + math.lcm(*(st.cycle_slots for st in clones))
        if sim.slot > _CERTIFY_SLOT_CAP:
            raise StateSpaceError("certification did not settle within the slot cap")
    return ConvergenceCertificate(certified, hyper, offsets)


# ---------------------------------------------------------------------------
# Exhaustive enumeration
# ---------------------------------------------------------------------------


class _NeedChoice(Exception):
    """A choice point beyond the current tape prefix was reached."""

    def __init__(self, n_outcomes: int) -> None:
        super().__init__(n_outcomes)
        self.n_outcomes = n_outcomes


class _Tape:
    """Stands in for a random generator, replaying an enumerated choice path.

    Each ``integers`` call consumes one recorded choice and multiplies the
    path probability by ``1/n``; a call past the end of the path aborts the
    attempt so the caller can branch on all ``n`` outcomes.
    """

    __slots__ = ("path", "pos", "prob")

    def __init__(self, path: Tuple[int, ...]) -> None:
        self.path = path
        self.pos = 0
        self.prob = Fraction(1)

    def integers(self, low: int, high: Optional[int] = None) -> int:
        if high is None:
            low, high = 0, low
        n = int(high) - int(low)
        if n <= 0:
            raise ConfigError("empty choice range")
        if self.pos >= len(self.path):
            raise _NeedChoice(n)
        value = self.path[self.pos]
        self.pos += 1
        self.prob *= Fraction(1, n)
        return int(low) + value

    def random(self) -> float:
        raise ConfigError(
            "probabilistic stickiness draws cannot be enumerated exactly")


@dataclass
class ConvergenceDistribution:
    """Exact probability mass over the convergence slot of a toy setup.

    ``pmf[t]`` is the exact probability that convergence (the alignment
    predicate first holding) happens at slot ``t``. Mass not assigned by
    ``horizon`` is the ``deficit`` - the probability of not converging in
    time, which is genuinely positive for setups with no collision-free
    schedule.
    """

    pmf: Dict[int, Fraction]
    horizon: int
    states_explored: int

    @property
    def total_mass(self) -> Fraction:
        return sum(self.pmf.values(), Fraction(0))

    @property
    def deficit(self) -> Fraction:
        return Fraction(1) - self.total_mass

    def probability(self, slot: int) -> Fraction:
        return self.pmf.get(slot, Fraction(0))

    def as_floats(self) -> Dict[Optional[int], float]:
        """The distribution as floats, with ``None`` holding the deficit."""
        out: Dict[Optional[int], float] = {
            slot: float(p) for slot, p in sorted(self.pmf.items())
        }
        out[None] = float(self.deficit)
        return out

    def to_csv(self) -> str:
        lines = ["slot_index,probability"]
        for slot in sorted(self.pmf):
            lines.append(f"{slot},{float(self.pmf[slot])!r}")
        return "\n".join(lines) + "\n"


def tv_distance(dist_a: Mapping[Optional[int], float],
                dist_b: Mapping[Optional[int], float]) -> float:
    """Total-variation distance between two distributions over slots/None."""
    keys = set(dist_a) | set(dist_b)
    return 0.5 * sum(abs(dist_a.get(k, 0.0) - dist_b.get(k, 0.0)) for k in keys)


def _snapshot_from_key(station_id: int, comp: tuple, include_window: bool) -> StationSnapshot:
    mode, cw, b, exponent, failures = comp[:5]
    window = comp[5] if include_window else ()
    return StationSnapshot(
        station_id=station_id,
        mode=Mode(mode),
        cw=cw,
        b=b,
        schedule_exponent=exponent,
        consecutive_failures=failures,
        window=window,
    )


def exact_convergence_distribution(
        n_stations: int,
        cfg: Optional[ProtocolConfig] = None,
        horizon: int = 256,
        max_states: int = MAX_ENUMERATION_STATES) -> ConvergenceDistribution:
    """Exhaustively compute the convergence-slot distribution of a toy setup.

    Expands the joint station-state Markov chain slot by slot with exact
    ``Fraction`` probabilities. The per-slot transition table is built by
    running the channel's own ``step()`` on reconstructed stations whose
    generator is an enumeration tape, so oracle and simulator share
    semantics by construction rather than by reimplementation.
    """
    from .channel import ImpairmentModel, Saturated, Simulation

    if cfg is None:
        cfg = ProtocolConfig(cw_min=4, cw_max=8, base_cycle=4)
    if not 1 <= n_stations <= _ENUM_MAX_STATIONS:
        raise ConfigError(
            f"exhaustive enumeration supports 1..{_ENUM_MAX_STATIONS} stations")
    if cfg.cw_min > _ENUM_MAX_CW_MIN:
        raise ConfigError(
            f"exhaustive enumeration requires cw_min <= {_ENUM_MAX_CW_MIN}")
    if cfg.base_cycle > _ENUM_MAX_BASE_CYCLE:
        raise ConfigError(
            f"exhaustive enumeration requires base_cycle <= {_ENUM_MAX_BASE_CYCLE}")
    if cfg.kind.name == "ProbStickyECA":
        raise ConfigError(
            "probabilistic stickiness draws cannot be enumerated exactly")
    if horizon < 1:
        raise ConfigError("horizon must be positive")

    include_window = cfg.kind.is_adaptive
    traffic = [Saturated() for _ in range(n_stations)]
    ideal = ImpairmentModel()

    def expand(key: tuple) -> List[Tuple[tuple, Fraction, bool]]:
        merged: Dict[Tuple[tuple, bool], Fraction] = {}
        stack: List[Tuple[int, ...]] = [()]
        while stack:
            path = stack.pop()
            tape = _Tape(path)
            stations = [
                Station.from_snapshot(
                    cfg, _snapshot_from_key(i, key[i], include_window), rng=tape)
                for i in range(n_stations)
            ]
            sim = Simulation(stations, traffic, impairments=ideal, seed=0)
            try:
                sim.step()
            except _NeedChoice as need:
                stack.extend(path + (v,) for v in range(need.n_outcomes))
                continue
            next_key = tuple(st.snapshot().key(include_window) for st in stations)
            converged = sim.convergence_slot is not None
            slot_key = (next_key, converged)
            merged[slot_key] = merged.get(slot_key, Fraction(0)) + tape.prob
        return [(k, p, conv) for (k, conv), p in merged.items()]

    # Initial distribution: every station fresh, uniform independent draws.
    frontier: Dict[tuple, Fraction] = {}
    initial_mass = Fraction(1, cfg.cw_min ** n_stations)

    def seed_frontier(prefix: tuple, depth: int) -> None:
        if depth == n_stations:
            frontier[prefix] = frontier.get(prefix, Fraction(0)) + initial_mass
            return
        for b in range(cfg.cw_min):
            comp = (int(Mode.RANDOM), cfg.cw_min, b, 0, 0)
            if include_window:
                comp = comp + ((),)
            seed_frontier(prefix + (comp,), depth + 1)

    seed_frontier((), 0)

    table: Dict[tuple, List[Tuple[tuple, Fraction, bool]]] = {}
    pmf: Dict[int, Fraction] = {}
    for t in range(horizon):
        if not frontier:
            break
        successors: Dict[tuple, Fraction] = {}
        for key, mass in frontier.items():
            transitions = table.get(key)
            if transitions is None:
                transitions = expand(key)
                table[key] = transitions
                if len(table) > max_states:
                    raise StateSpaceError(
                        f"state space exceeded {max_states} states")
            for next_key, prob, converged in transitions:
                if converged:
                    pmf[t] = pmf.get(t, Fraction(0)) + mass * prob
                else:
                    successors[next_key] = successors.get(next_key, Fraction(0)) + mass * prob
        frontier = successors

    return ConvergenceDistribution(pmf=pmf, horizon=horizon,
                                   states_explored=len(table))


def monte_carlo_convergence(
        n_stations: int,
        cfg: Optional[ProtocolConfig] = None,
        horizon: int = 256,
        runs: int = 100_000,
        base_seed: int = 0) -> Dict[Optional[int], float]:
    """Empirical convergence-slot distribution from independent sampled runs.

    Returns frequencies keyed by convergence slot, with ``None`` holding the
    fraction of runs that did not converge by the horizon - directly
    comparable to :meth:`ConvergenceDistribution.as_floats`.
    """
    from .channel import Saturated, Simulation

    if cfg is None:
        cfg = ProtocolConfig(cw_min=4, cw_max=8, base_cycle=4)
    if runs < 1:
        raise ConfigError("runs must be positive")
    counts: Dict[Optional[int], int] = {}
    traffic = [Saturated() for _ in range(n_stations)]
    for i in range(runs):
        seed = base_seed + i
        stations = [Station(cfg, seed, sid) for sid in range(n_stations)]
        sim = Simulation(stations, traffic, seed=seed)
        sim.run(horizon_slots=horizon, stop_on_convergence=True)
        slot = sim.convergence_slot
        counts[slot] = counts.get(slot, 0) + 1
    return {key: value / runs for key, value in counts.items()}
