"""Per-station backoff state machines for slotted CSMA contention.

One :class:`Station` is one contender. The channel loop drives it with
``slot_tick()`` once per slot and reports the result of each transmission
attempt through ``on_feedback()``. Four protocol flavors share this
machinery:

* ``CA``            - classic CSMA/CA: a fresh random backoff after every
                      transmission, binary exponential backoff on failure.
* ``ECA``           - CSMA/ECA: identical to CA except that the backoff
                      after a *successful* transmission is the fixed,
                      network-wide deterministic value.
* ``StickyECA(k)``  - keeps the deterministic backoff for up to ``k-1``
                      consecutive failures before reverting to random
                      behavior (``k = 2`` is CSMA/E2CA).
* ``ProbStickyECA`` - on a failure while deterministic, sticks with
                      probability ``p_stick``.
* ``AdaptiveECA``   - CSMA/ECA that doubles its schedule length (and the
                      number of packets sent per access) when the failure
                      rate over its recent attempts is high.

All randomness flows through the station's own named stream, so a station
is replayable from ``(config, seed, station_id)`` alone.
"""

from __future__ import annotations

import enum
import re
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "ProtocolViolation",
    "Outcome",
    "Mode",
    "ProtocolKind",
    "ProtocolConfig",
    "TransmitDecision",
    "StationSnapshot",
    "Station",
    "backoff_stream",
    "substream",
]

CW_MIN_DEFAULT = 16
CW_MAX_DEFAULT = 1024
BASE_CYCLE_DEFAULT = 16
SCHEDULE_EXPONENT_CAP_DEFAULT = 4
ADAPT_WINDOW_DEFAULT = 8
ADAPT_THRESHOLD_DEFAULT = 0.5
STICKINESS_DEFAULT = 2
P_STICK_DEFAULT = 0.5

# Sub-stream domains, so station backoff draws, station arrival processes and
# channel impairment draws never share a stream.
STREAM_BACKOFF = 0
STREAM_ARRIVALS = 1
STREAM_CHANNEL = 2


class ConfigError(ValueError):
    """Invalid protocol or scenario configuration."""


class ProtocolViolation(RuntimeError):
    """The decide/feedback contract was broken by the caller."""


class Outcome(enum.IntEnum):
    FAILURE = 0
    SUCCESS = 1


class Mode(enum.IntEnum):
    RANDOM = 0
    DETERMINISTIC = 1


def substream(seed: int, *key: int) -> np.random.Generator:
    """Derive an independent, reproducible generator from a base seed and key."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *key))))


def backoff_stream(seed: int, station_id: int) -> np.random.Generator:
    return substream(seed, STREAM_BACKOFF, station_id)


def _is_pow2(n: int) -> bool:
    return isinstance(n, int) and n >= 1 and (n & (n - 1)) == 0


_KIND_NAMES = ("CA", "ECA", "StickyECA", "ProbStickyECA", "AdaptiveECA")
_KIND_RE = re.compile(r"^(?P<name>[A-Za-z2]+)(?:\((?P<arg>[^)]*)\))?$")


@dataclass(frozen=True)
class ProtocolKind:
    """Protocol flavor plus its flavor-specific parameters."""

    name: str
    stickiness: int = 0
    p_stick: float = 0.0

    # Derived flags, precomputed because feedback handling reads them per
    # transmission; excluded from equality and repr.
    uses_deterministic_backoff: bool = field(init=False, repr=False, compare=False, default=False)
    is_sticky: bool = field(init=False, repr=False, compare=False, default=False)
    is_adaptive: bool = field(init=False, repr=False, compare=False, default=False)

    def __post_init__(self) -> None:
        if self.name not in _KIND_NAMES:
            raise ConfigError(f"unknown protocol kind {self.name!r}")
        if self.name == "StickyECA" and self.stickiness < 1:
            raise ConfigError("stickiness must be >= 1")
        if self.name == "ProbStickyECA" and not 0.0 <= self.p_stick <= 1.0:
            raise ConfigError("p_stick must be in [0, 1]")
        object.__setattr__(self, "uses_deterministic_backoff", self.name != "CA")
        object.__setattr__(self, "is_sticky",
                           self.name in ("StickyECA", "ProbStickyECA"))
        object.__setattr__(self, "is_adaptive", self.name == "AdaptiveECA")

    @classmethod
    def ca(cls) -> "ProtocolKind":
        return cls("CA")

    @classmethod
    def eca(cls) -> "ProtocolKind":
        return cls("ECA")

    @classmethod
    def sticky(cls, stickiness: int = STICKINESS_DEFAULT) -> "ProtocolKind":
        return cls("StickyECA", stickiness=stickiness)

    @classmethod
    def prob_sticky(cls, p_stick: float = P_STICK_DEFAULT) -> "ProtocolKind":
        return cls("ProbStickyECA", p_stick=p_stick)

    @classmethod
    def adaptive(cls) -> "ProtocolKind":
        return cls("AdaptiveECA")

    @classmethod
    def parse(cls, text: str) -> "ProtocolKind":
        """Parse labels like ``CA``, ``ECA``, ``StickyECA(2)``, ``ProbStickyECA(0.5)``.

        ``E2CA`` is accepted as an alias for ``StickyECA(2)``.
        """
        m = _KIND_RE.match(text.strip())
        if not m:
            raise ConfigError(f"cannot parse protocol {text!r}")
        name, arg = m.group("name"), m.group("arg")
        if name == "E2CA":
            if arg is not None:
                raise ConfigError("E2CA takes no parameter")
            return cls.sticky(2)
        if name == "StickyECA":
            return cls.sticky(int(arg) if arg else STICKINESS_DEFAULT)
        if name == "ProbStickyECA":
            return cls.prob_sticky(float(arg) if arg else P_STICK_DEFAULT)
        if name in ("CA", "ECA", "AdaptiveECA"):
            if arg is not None:
                raise ConfigError(f"{name} takes no parameter")
            return cls(name)
        raise ConfigError(f"unknown protocol kind {text!r}")

    def label(self) -> str:
        if self.name == "StickyECA":
            return f"StickyECA({self.stickiness})"
        if self.name == "ProbStickyECA":
            return f"ProbStickyECA({self.p_stick:g})"
        return self.name


@dataclass(frozen=True)
class ProtocolConfig:
    """Contention parameters shared by every station of a group.

    ``base_cycle`` is the collision-free schedule length at exponent 0; the
    deterministic backoff at exponent ``j`` is ``base_cycle * 2**j - 1`` and a
    station at exponent ``j`` sends ``2**j`` packets per channel access.
    """

    kind: ProtocolKind = ProtocolKind("ECA")
    cw_min: int = CW_MIN_DEFAULT
    cw_max: int = CW_MAX_DEFAULT
    base_cycle: int = BASE_CYCLE_DEFAULT
    max_schedule_exponent: int = SCHEDULE_EXPONENT_CAP_DEFAULT
    adapt_window: int = ADAPT_WINDOW_DEFAULT
    adapt_threshold: float = ADAPT_THRESHOLD_DEFAULT
    # Shrinking the schedule when contention drops is deliberately not
    # implemented; the flag exists so scenarios fail loudly instead of
    # silently ignoring it.
    enable_schedule_shrink: bool = False

    def __post_init__(self) -> None:
        if not _is_pow2(self.cw_min):
            raise ConfigError("cw_min must be a power of two")
        if not _is_pow2(self.cw_max):
            raise ConfigError("cw_max must be a power of two")
        if self.cw_min > self.cw_max:
            raise ConfigError("cw_min must not exceed cw_max")
        if not _is_pow2(self.base_cycle):
            raise ConfigError("base_cycle must be a power of two")
        if self.max_schedule_exponent < 0:
            raise ConfigError("max_schedule_exponent must be >= 0")
        if self.adapt_window < 1:
            raise ConfigError("adapt_window must be >= 1")
        if not 0.0 <= self.adapt_threshold <= 1.0:
            raise ConfigError("adapt_threshold must be in [0, 1]")
        if self.enable_schedule_shrink:
            raise ConfigError("schedule shrinking is not implemented")

    def deterministic_backoff(self, exponent: int = 0) -> int:
        return self.base_cycle * (1 << exponent) - 1

    def packets_per_access(self, exponent: int = 0) -> int:
        return 1 << exponent

    def cycle_slots(self, exponent: int = 0) -> int:
        return self.base_cycle * (1 << exponent)


class TransmitDecision(NamedTuple):
    transmit: bool
    n_packets: int


_NO_TX = TransmitDecision(False, 0)


@dataclass(frozen=True)
class StationSnapshot:
    """Immutable copy of the dynamic station state, enough to resume a run."""

    station_id: int
    mode: Mode
    cw: int
    b: int
    schedule_exponent: int
    consecutive_failures: int
    window: tuple

    def key(self, include_window: bool) -> tuple:
        dyn = (int(self.mode), self.cw, self.b, self.schedule_exponent,
               self.consecutive_failures)
        return dyn + (self.window,) if include_window else dyn


class Station:
    """Backoff state machine for one contender.

    Drive it with ``slot_tick()`` exactly once per channel slot while the
    station is backlogged, and call ``on_feedback()`` after every slot in
    which it transmitted. The constructor implements the fresh-station
    contract: random mode, minimum contention window, uniform initial draw.
    """

    __slots__ = ("station_id", "cfg", "kind", "rng", "b", "cw", "mode",
                 "schedule_exponent", "consecutive_failures", "window",
                 "awaiting_feedback")

    def __init__(self, cfg: ProtocolConfig, seed: Optional[int],
                 station_id: int, rng: Optional[object] = None) -> None:
        if rng is None:
            if seed is None:
                raise ConfigError("either seed or rng is required")
            rng = backoff_stream(seed, station_id)
        self.station_id = station_id
        self.cfg = cfg
        self.kind = cfg.kind
        self.rng = rng
        self.mode = Mode.RANDOM
        self.cw = cfg.cw_min
        self.b = int(rng.integers(0, self.cw))
        self.schedule_exponent = 0
        self.consecutive_failures = 0
        self.window = deque(maxlen=cfg.adapt_window)
        self.awaiting_feedback = False

    # -- decide / feedback contract -------------------------------------

    def slot_tick(self) -> TransmitDecision:
        """Advance one slot: decrement the counter or decide to transmit."""
        if self.awaiting_feedback:
            raise ProtocolViolation(
                f"station {self.station_id}: slot_tick before feedback")
        if self.b > 0:
            self.b -= 1
            return _NO_TX
        self.awaiting_feedback = True
        return TransmitDecision(True, 1 << self.schedule_exponent)

    def on_feedback(self, outcome: Outcome) -> None:
        """Re-arm the backoff counter from the outcome of our transmission."""
        if not self.awaiting_feedback:
            raise ProtocolViolation(
                f"station {self.station_id}: feedback without a transmission")
        self.awaiting_feedback = False
        self.window.append(int(outcome))
        if outcome == Outcome.SUCCESS:
            self.cw = self.cfg.cw_min
            self.consecutive_failures = 0
            if not self.kind.uses_deterministic_backoff:
                self.b = int(self.rng.integers(0, self.cw))
                return
            if self.kind.is_adaptive:
                self.adapt_schedule()
            self.mode = Mode.DETERMINISTIC
            self.b = self.cfg.deterministic_backoff(self.schedule_exponent)
            return
        # Failure. Stickiness only ever applies to a station that is
        # currently on the deterministic schedule; everyone else follows
        # plain binary exponential backoff.
        if self.mode == Mode.DETERMINISTIC and self.kind.is_sticky:
            if self.kind.name == "StickyECA":
                self.consecutive_failures += 1
                if self.consecutive_failures < self.kind.stickiness:
                    self.b = self.cfg.deterministic_backoff(self.schedule_exponent)
                    return
                self.consecutive_failures = 0
            else:  # ProbStickyECA
                if self.rng.random() < self.kind.p_stick:
                    self.b = self.cfg.deterministic_backoff(self.schedule_exponent)
                    return
        self.mode = Mode.RANDOM
        self.cw = min(2 * self.cw, self.cfg.cw_max)
        self.b = int(self.rng.integers(0, self.cw))

    def adapt_schedule(self) -> None:
        """Double the schedule when the recent failure rate is high.

        No-op unless this is an adaptive station with a full attempt window
        whose failure fraction exceeds the threshold and whose exponent is
        below the cap. Doubling clears the window.
        """
        cfg = self.cfg
        if not self.kind.is_adaptive or len(self.window) < cfg.adapt_window:
            return
        failures = cfg.adapt_window - sum(self.window)
        if (failures / cfg.adapt_window > cfg.adapt_threshold
                and self.schedule_exponent < cfg.max_schedule_exponent):
            self.schedule_exponent += 1
            self.window.clear()

    def rejoin(self) -> None:
        """Re-enter contention after an idle period with a fresh random draw."""
        self.mode = Mode.RANDOM
        self.cw = self.cfg.cw_min
        self.b = int(self.rng.integers(0, self.cw))
        self.consecutive_failures = 0
        self.awaiting_feedback = False

    # -- derived values ---------------------------------------------------

    @property
    def cycle_slots(self) -> int:
        return self.cfg.cycle_slots(self.schedule_exponent)

    @property
    def next_tx_offset(self) -> int:
        """Slots until the next transmission, counted from the current slot."""
        return self.b + 1

    # -- persistence ------------------------------------------------------

    def snapshot(self) -> StationSnapshot:
        return StationSnapshot(
            station_id=self.station_id,
            mode=self.mode,
            cw=self.cw,
            b=self.b,
            schedule_exponent=self.schedule_exponent,
            consecutive_failures=self.consecutive_failures,
            window=tuple(self.window),
        )

    @classmethod
    def from_snapshot(cls, cfg: ProtocolConfig, snap: StationSnapshot,
                      seed: Optional[int] = None,
                      rng: Optional[object] = None) -> "Station":
        """Resume a station from a snapshot without consuming any randomness."""
        if rng is None:
            if seed is None:
                raise ConfigError("either seed or rng is required")
            rng = backoff_stream(seed, snap.station_id)
        st = object.__new__(cls)
        st.station_id = snap.station_id
        st.cfg = cfg
        st.kind = cfg.kind
        st.rng = rng
        st.mode = snap.mode
        st.cw = snap.cw
        st.b = snap.b
        st.schedule_exponent = snap.schedule_exponent
        st.consecutive_failures = snap.consecutive_failures
        st.window = deque(snap.window, maxlen=cfg.adapt_window)
        st.awaiting_feedback = False
        return st

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (f"Station(id={self.station_id}, {self.kind.label()}, "
                f"mode={self.mode.name}, b={self.b}, cw={self.cw}, "
                f"j={self.schedule_exponent})")


def new_station(cfg: ProtocolConfig, seed: int, station_id: int) -> Station:
    """Functional alias for the fresh-station constructor."""
    return Station(cfg, seed, station_id)
