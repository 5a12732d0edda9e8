"""Scenario files: experiment descriptions loaded from YAML.

A scenario names the station mix (one or more groups, each with a protocol,
a count and a traffic model), the slot timing, channel impairments, the
horizon, and the seed list. A ``sweep`` section turns the single base group
into a grid of (protocol, station-count) cells that share everything else.

Every omitted field takes a documented default, so the smallest useful file
is two lines::

    protocol: ECA
    n: 2

Bundled scenarios (the shipped experiment set) are addressable by bare name
wherever a scenario path is accepted.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import yaml

from .channel import (
    Bernoulli,
    ImpairmentModel,
    Saturated,
    SinglePacket,
    SlotDurations,
    TrafficModel,
)
from .protocols import ConfigError, ProtocolConfig, ProtocolKind, Station

__all__ = [
    "ScenarioError",
    "StationGroup",
    "SweepCell",
    "Scenario",
    "load_scenario",
    "parse_scenario_text",
    "bundled_scenarios",
    "bundled_scenario_text",
]

DEFAULT_HORIZON_SLOTS = 10_000
DEFAULT_SEEDS = (0,)


class ScenarioError(ConfigError):
    """A scenario file failed to parse or validate."""


@dataclass(frozen=True)
class StationGroup:
    """A block of identically configured stations."""

    count: int
    config: ProtocolConfig
    traffic: TrafficModel

    @property
    def kind(self) -> ProtocolKind:
        return self.config.kind


@dataclass(frozen=True)
class SweepCell:
    """One concrete experiment: a station mix to run across the seed list."""

    label: str
    n_stations: int
    groups: Tuple[StationGroup, ...]


@dataclass(frozen=True)
class Scenario:
    """A fully validated experiment description."""

    name: str
    groups: Tuple[StationGroup, ...]
    durations: SlotDurations
    impairments: ImpairmentModel
    horizon_slots: Optional[int]
    horizon_us: Optional[int]
    seeds: Tuple[int, ...]
    out_dir: Optional[str]
    sweep_n: Optional[Tuple[int, ...]] = None
    sweep_protocols: Optional[Tuple[ProtocolKind, ...]] = None

    def cells(self) -> List[SweepCell]:
        """Expand the sweep grid; a plain scenario is a single cell."""
        if self.sweep_n is None and self.sweep_protocols is None:
            label = "+".join(f"{g.count}x{g.kind.label()}" for g in self.groups)
            if len(self.groups) == 1:
                label = self.groups[0].kind.label()
            total = sum(g.count for g in self.groups)
            return [SweepCell(label, total, self.groups)]
        base = self.groups[0]
        kinds = self.sweep_protocols or (base.kind,)
        counts = self.sweep_n or (base.count,)
        cells = []
        for kind in kinds:
            cfg = dataclasses.replace(base.config, kind=kind)
            for n in counts:
                group = StationGroup(count=n, config=cfg, traffic=base.traffic)
                cells.append(SweepCell(kind.label(), n, (group,)))
        return cells

    def fingerprint(self) -> str:
        """Stable digest of the fully resolved scenario."""
        canonical = repr((
            self.name, self.groups, self.durations, self.impairments,
            self.horizon_slots, self.horizon_us, self.seeds,
            self.sweep_n, self.sweep_protocols,
        ))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def build_stations(cell: SweepCell, seed: int) -> Tuple[List[Station], List[TrafficModel]]:
    """Instantiate the stations and traffic models of one cell."""
    stations: List[Station] = []
    traffic: List[TrafficModel] = []
    sid = 0
    for group in cell.groups:
        for _ in range(group.count):
            stations.append(Station(group.config, seed, sid))
            traffic.append(group.traffic)
            sid += 1
    return stations, traffic


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOP_KEYS = {"name", "groups", "protocol", "n", "traffic", "config",
             "durations", "impairments", "horizon", "seeds", "out_dir",
             "sweep"}
_GROUP_KEYS = {"protocol", "count", "n", "traffic", "config"}
_CONFIG_KEYS = {"cw_min", "cw_max", "base_cycle", "max_schedule_exponent",
                "adapt_window", "adapt_threshold", "enable_schedule_shrink"}
_DURATION_KEYS = {"sigma", "t_overhead", "t_payload", "t_collision"}
_IMPAIRMENT_KEYS = {"p_err", "p_misalign"}
_SWEEP_KEYS = {"n_stations", "protocols"}


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ScenarioError(f"unknown field {unknown[0]!r} in {where}")


def _require_mapping(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(f"{where} must be a mapping")
    return value


def _parse_config(raw, where: str) -> ProtocolConfig:
    if raw is None:
        return ProtocolConfig()
    mapping = _require_mapping(raw, where)
    _reject_unknown(mapping, _CONFIG_KEYS, where)
    try:
        return ProtocolConfig(**mapping)
    except TypeError as exc:
        raise ScenarioError(f"invalid {where}: {exc}") from exc


def _parse_traffic(raw, where: str) -> TrafficModel:
    if raw is None:
        return Saturated()
    if isinstance(raw, str):
        name = raw.strip().lower()
        if name == "saturated":
            return Saturated()
        raise ScenarioError(
            f"{where}: traffic {raw!r} needs parameters; use a mapping")
    mapping = _require_mapping(raw, where)
    kind = mapping.get("kind")
    if kind == "saturated":
        _reject_unknown(mapping, {"kind"}, where)
        return Saturated()
    if kind == "bernoulli":
        _reject_unknown(mapping, {"kind", "arrival_prob", "queue_capacity"}, where)
        if "arrival_prob" not in mapping:
            raise ScenarioError(f"{where}: bernoulli traffic needs arrival_prob")
        return Bernoulli(arrival_prob=float(mapping["arrival_prob"]),
                         queue_capacity=int(mapping.get("queue_capacity", 8)))
    if kind == "single_packet":
        _reject_unknown(mapping, {"kind", "join_rate"}, where)
        if "join_rate" not in mapping:
            raise ScenarioError(f"{where}: single_packet traffic needs join_rate")
        return SinglePacket(join_rate=float(mapping["join_rate"]))
    raise ScenarioError(
        f"{where}: traffic kind must be one of saturated, bernoulli, "
        f"single_packet (got {kind!r})")


def _parse_group(raw, where: str) -> StationGroup:
    mapping = _require_mapping(raw, where)
    _reject_unknown(mapping, _GROUP_KEYS, where)
    if "count" in mapping and "n" in mapping:
        raise ScenarioError(f"{where}: give either count or n, not both")
    count = mapping.get("count", mapping.get("n"))
    if count is None:
        raise ScenarioError(f"{where}: count is required")
    if not isinstance(count, int) or isinstance(count, bool) or count < 1:
        raise ScenarioError(f"{where}: count must be a positive integer")
    kind = ProtocolKind.parse(str(mapping.get("protocol", "ECA")))
    config = _parse_config(mapping.get("config"), f"{where}.config")
    config = dataclasses.replace(config, kind=kind)
    traffic = _parse_traffic(mapping.get("traffic"), where)
    return StationGroup(count=count, config=config, traffic=traffic)


def _parse_horizon(raw) -> Tuple[Optional[int], Optional[int]]:
    if raw is None:
        return DEFAULT_HORIZON_SLOTS, None
    if isinstance(raw, int) and not isinstance(raw, bool):
        slots, us = raw, None
    else:
        mapping = _require_mapping(raw, "horizon")
        _reject_unknown(mapping, {"slots", "us"}, "horizon")
        if len(mapping) != 1:
            raise ScenarioError("horizon: give exactly one of slots or us")
        slots = mapping.get("slots")
        us = mapping.get("us")
    for label, value in (("slots", slots), ("us", us)):
        if value is not None and (not isinstance(value, int)
                                  or isinstance(value, bool) or value <= 0):
            raise ScenarioError(f"horizon.{label} must be a positive integer")
    return slots, us


def _parse_seeds(raw) -> Tuple[int, ...]:
    if raw is None:
        return DEFAULT_SEEDS
    if isinstance(raw, list):
        if not raw:
            raise ScenarioError("seeds must not be empty")
        seeds = []
        for item in raw:
            if not isinstance(item, int) or isinstance(item, bool):
                raise ScenarioError("seeds must be integers")
            seeds.append(item)
        if len(set(seeds)) != len(seeds):
            raise ScenarioError("seeds must be distinct")
        return tuple(seeds)
    mapping = _require_mapping(raw, "seeds")
    _reject_unknown(mapping, {"base_seed", "n_seeds"}, "seeds")
    base = mapping.get("base_seed", 0)
    n = mapping.get("n_seeds")
    if n is None:
        raise ScenarioError("seeds: n_seeds is required")
    if not isinstance(base, int) or isinstance(base, bool):
        raise ScenarioError("seeds.base_seed must be an integer")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ScenarioError("seeds.n_seeds must be a positive integer")
    return tuple(range(base, base + n))


def _parse_sweep(raw) -> Tuple[Optional[Tuple[int, ...]], Optional[Tuple[ProtocolKind, ...]]]:
    if raw is None:
        return None, None
    mapping = _require_mapping(raw, "sweep")
    _reject_unknown(mapping, _SWEEP_KEYS, "sweep")
    if not mapping:
        raise ScenarioError("sweep must name n_stations and/or protocols")
    sweep_n = None
    if "n_stations" in mapping:
        values = mapping["n_stations"]
        if not isinstance(values, list) or not values:
            raise ScenarioError("sweep.n_stations must be a non-empty list")
        for v in values:
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ScenarioError("sweep.n_stations entries must be positive integers")
        if len(set(values)) != len(values):
            raise ScenarioError("sweep.n_stations entries must be distinct")
        sweep_n = tuple(values)
    sweep_kinds = None
    if "protocols" in mapping:
        values = mapping["protocols"]
        if not isinstance(values, list) or not values:
            raise ScenarioError("sweep.protocols must be a non-empty list")
        sweep_kinds = tuple(ProtocolKind.parse(str(v)) for v in values)
        if len(set(sweep_kinds)) != len(sweep_kinds):
            raise ScenarioError("sweep.protocols entries must be distinct")
    return sweep_n, sweep_kinds


def parse_scenario_text(text: str, name: str = "scenario") -> Scenario:
    """Parse and validate scenario YAML text."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            raise ScenarioError(
                f"parse error at line {mark.line + 1}, column {mark.column + 1}: "
                f"{getattr(exc, 'problem', exc)}") from exc
        raise ScenarioError(f"parse error: {exc}") from exc
    if raw is None:
        raw = {}
    mapping = _require_mapping(raw, "scenario")
    _reject_unknown(mapping, _TOP_KEYS, "scenario")

    shorthand = {k for k in ("protocol", "n", "traffic", "config") if k in mapping}
    if "groups" in mapping and shorthand:
        raise ScenarioError(
            f"give either groups or the top-level shorthand "
            f"({sorted(shorthand)[0]}), not both")
    if "groups" in mapping:
        raw_groups = mapping["groups"]
        if not isinstance(raw_groups, list) or not raw_groups:
            raise ScenarioError("groups must be a non-empty list")
        groups = tuple(_parse_group(g, f"groups[{i}]")
                       for i, g in enumerate(raw_groups))
    else:
        group_raw = {
            "protocol": mapping.get("protocol", "ECA"),
            "count": mapping.get("n", 2),
            "traffic": mapping.get("traffic"),
            "config": mapping.get("config"),
        }
        groups = (_parse_group(group_raw, "scenario"),)

    sweep_n, sweep_kinds = _parse_sweep(mapping.get("sweep"))
    if (sweep_n or sweep_kinds) and len(groups) != 1:
        raise ScenarioError("sweep requires exactly one station group")

    durations_raw = mapping.get("durations")
    if durations_raw is None:
        durations = SlotDurations()
    else:
        dmap = _require_mapping(durations_raw, "durations")
        _reject_unknown(dmap, _DURATION_KEYS, "durations")
        durations = SlotDurations(**dmap)

    imp_raw = mapping.get("impairments")
    if imp_raw is None:
        impairments = ImpairmentModel()
    else:
        imap = _require_mapping(imp_raw, "impairments")
        _reject_unknown(imap, _IMPAIRMENT_KEYS, "impairments")
        impairments = ImpairmentModel(**{k: float(v) for k, v in imap.items()})

    horizon_slots, horizon_us = _parse_horizon(mapping.get("horizon"))
    seeds = _parse_seeds(mapping.get("seeds"))

    out_dir = mapping.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ScenarioError("out_dir must be a string")

    scenario_name = mapping.get("name", name)
    if not isinstance(scenario_name, str) or not scenario_name:
        raise ScenarioError("name must be a non-empty string")

    return Scenario(
        name=scenario_name,
        groups=groups,
        durations=durations,
        impairments=impairments,
        horizon_slots=horizon_slots,
        horizon_us=horizon_us,
        seeds=seeds,
        out_dir=out_dir,
        sweep_n=sweep_n,
        sweep_protocols=sweep_kinds,
    )


def bundled_scenarios() -> Dict[str, str]:
    """Names and descriptions of the scenarios shipped with the package."""
    out = {}
    root = resources.files(__package__) / "scenarios"
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".yaml"):
            name = entry.name[:-len(".yaml")]
            first = entry.read_text().splitlines()[0].strip()
            desc = first[1:].strip() if first.startswith("#") else ""
            out[name] = desc
    return out


def bundled_scenario_text(name: str) -> str:
    """The YAML text of a bundled scenario."""
    entry = resources.files(__package__) / "scenarios" / f"{name}.yaml"
    if not entry.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return entry.read_text()


def load_scenario(path_or_name: str) -> Scenario:
    """Load a scenario from a file path or a bundled scenario name."""
    path = Path(path_or_name)
    if path.is_file():
        return parse_scenario_text(path.read_text(), name=path.stem)
    if "/" not in str(path_or_name) and not str(path_or_name).endswith(".yaml"):
        try:
            text = bundled_scenario_text(str(path_or_name))
        except ScenarioError:
            raise ScenarioError(f"scenario file not found: {path_or_name}")
        return parse_scenario_text(text, name=str(path_or_name))
    raise ScenarioError(f"scenario file not found: {path_or_name}")
