"""Deterministic slotted-CSMA contention simulator.

Simulates CSMA/CA alongside the collision-free-schedule family (ECA, sticky
ECA, probabilistic-sticky ECA, schedule-length-adaptive ECA) on a common
slotted channel, with an exhaustive toy-scale oracle for ground truth.
"""

from .protocols import (
    ConfigError,
    Mode,
    Outcome,
    ProtocolConfig,
    ProtocolKind,
    ProtocolViolation,
    Station,
    StationSnapshot,
    TransmitDecision,
    new_station,
)
from .channel import (
    Bernoulli,
    ImpairmentModel,
    Saturated,
    Simulation,
    SinglePacket,
    SlotDurations,
    SlotRecord,
    Trace,
    trace_from_csv,
    trace_to_csv,
)
from .oracle import (
    ConvergenceCertificate,
    ConvergenceDistribution,
    NotCertifiableError,
    StateSpaceError,
    certify,
    collision_free_alignment,
    exact_convergence_distribution,
    monte_carlo_convergence,
    tv_distance,
)

__version__ = "0.1.0"
