"""Scenario configuration: typed sections loaded from a YAML document."""

from __future__ import annotations

import copy
import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError


class Layout(str, enum.Enum):
    ONE_DIRECTIONAL = "OneDirectional"
    BI_DIRECTIONAL = "BiDirectional"


class AirspaceMode(str, enum.Enum):
    SLOT_BASED = "SlotBased"
    TRAJECTORY_BASED = "TrajectoryBased"

    @classmethod
    def parse(cls, value: str | AirspaceMode) -> AirspaceMode:
        if isinstance(value, AirspaceMode):
            return value
        aliases = {"slot": cls.SLOT_BASED, "trajectory": cls.TRAJECTORY_BASED}
        if value.lower() in aliases:
            return aliases[value.lower()]
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown airspace mode {value!r}") from None


class DispatchMode(str, enum.Enum):
    SERIAL = "Serial"
    PARALLEL_FAN_OUT = "ParallelFanOut"


@dataclass(frozen=True)
class VertiportSpec:
    id: int
    name: str
    lat: float
    lon: float
    fato_count: int = 1
    layout: Layout = Layout.ONE_DIRECTIONAL
    turnaround_time: int = 120

    @property
    def position(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass(frozen=True)
class VehicleType:
    name: str
    pax_capacity: int
    cruise_speed: float  # km/h
    battery_capacity: float  # kWh
    cruise_energy_rate: float  # kWh/km
    hover_energy_per_cycle: float  # kWh per take-off or landing
    min_reserve: float  # kWh
    charge_rate: float  # kWh/h

    def flight_energy(self, distance_km: float) -> float:
        return self.cruise_energy_rate * distance_km + 2 * self.hover_energy_per_cycle

    @property
    def max_leg_km(self) -> float:
        """Longest leg flyable from a full battery without breaching the reserve."""
        usable = self.battery_capacity - self.min_reserve - 2 * self.hover_energy_per_cycle
        return max(0.0, usable / self.cruise_energy_rate)


@dataclass(frozen=True)
class VehicleSpec:
    id: int
    vtype: str
    home: int


@dataclass(frozen=True)
class SyntheticDemand:
    count: int = 1239
    # (lat, lon, spread_km, weight)
    clusters: tuple[tuple[float, float, float, float], ...] = ()
    peaks: tuple[tuple[float, float, float], ...] = ((0.3, 0.12, 0.55), (0.75, 0.12, 0.45))
    min_trip_km: float = 5.0


@dataclass(frozen=True)
class DemandConfig:
    source: str = "synthetic"
    synthetic: SyntheticDemand = field(default_factory=SyntheticDemand)
    ground_speed: float = 30.0  # km/h
    lead_time: int = 1800


@dataclass(frozen=True)
class ModeChoiceConfig:
    beta_time: float = -0.0006  # per second
    beta_cost: float = -0.05  # per EUR
    asc_uam: float = 0.0
    car_speed: float = 40.0
    car_cost_rate: float = 0.3
    detour_factor: float = 1.3
    ground_cost_rate: float = 0.3


@dataclass(frozen=True)
class MissionConfig:
    max_legs: int = 2
    pooling: bool = True
    pooling_window: int = 900
    connection_time: int = 300
    estimated_pax: int = 1


@dataclass(frozen=True)
class VertidromeConfig:
    slot_duration: int = 90
    interdependence_buffer: int = 60
    horizon: int = 86400
    granularity: int = 30


@dataclass(frozen=True)
class AirspaceConfig:
    mode: AirspaceMode = AirspaceMode.SLOT_BASED
    separation_km: float = 1.0
    sample_step: int = 10
    k_paths: int = 3
    delay_step: int = 30
    max_delay: int = 1800
    lattice_spacing_km: float = 2.0
    lattice_margin_km: float = 2.0


@dataclass(frozen=True)
class PriceParams:
    base_fare: float = 0.0
    price_per_km: float = 2.0

    def __post_init__(self):
        if self.base_fare < 0 or self.price_per_km < 0:
            raise ConfigError("price parameters must be non-negative")


@dataclass(frozen=True)
class CostModel:
    fixed_per_vehicle: float = 400.0  # EUR per vehicle per run
    energy_price: float = 0.3  # EUR/kWh
    per_flight_cost: float = 60.0  # EUR/flight (pilot, landing fees)


@dataclass(frozen=True)
class EconomicsConfig:
    cost_model: CostModel = field(default_factory=CostModel)
    price_loop: bool = False
    target_margin: float = 0.0
    damping: float = 0.5
    tol: float = 0.01
    max_iters: int = 10


@dataclass(frozen=True)
class EndpointSpec:
    name: str
    transport: str = "inprocess"  # or "remote"
    address: str = "127.0.0.1"
    port: int = 0
    timeout: float = 30.0


@dataclass(frozen=True)
class StageWiring:
    mode: DispatchMode = DispatchMode.PARALLEL_FAN_OUT
    endpoints: tuple[EndpointSpec, ...] = ()


@dataclass(frozen=True)
class OrchestratorConfig:
    batch_interval: int = 0
    metrics_cadence: int = 300


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    start: int
    duration: int
    vertiports: tuple[VertiportSpec, ...]
    vehicle_types: tuple[VehicleType, ...]
    vehicles: tuple[VehicleSpec, ...]
    demand: DemandConfig = field(default_factory=DemandConfig)
    mode_choice: ModeChoiceConfig = field(default_factory=ModeChoiceConfig)
    missions: MissionConfig = field(default_factory=MissionConfig)
    vertidrome: VertidromeConfig = field(default_factory=VertidromeConfig)
    airspace: AirspaceConfig = field(default_factory=AirspaceConfig)
    pricing: PriceParams = field(default_factory=PriceParams)
    economics: EconomicsConfig = field(default_factory=EconomicsConfig)
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)
    pipeline: dict[str, StageWiring] = field(default_factory=dict)
    base_dir: Path | None = None

    @property
    def end(self) -> int:
        return self.start + self.duration

    def vehicle_type(self, name: str) -> VehicleType:
        for vt in self.vehicle_types:
            if vt.name == name:
                return vt
        raise ConfigError(f"unknown vehicle type {name!r}")

    def replace(self, **changes) -> ScenarioConfig:
        """Copy with top-level or dotted (``"airspace.mode"``) overrides."""
        flat = {k: v for k, v in changes.items() if "." not in k}
        cfg = dataclasses.replace(self, **flat)
        for key, value in changes.items():
            if "." not in key:
                continue
            section, attr = key.split(".", 1)
            sub = getattr(cfg, section)
            cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(sub, **{attr: value})})
        return cfg


# -- loading -----------------------------------------------------------------

_SECTIONS = {
    "mode_choice": ModeChoiceConfig,
    "missions": MissionConfig,
    "vertidrome": VertidromeConfig,
    "orchestrator": OrchestratorConfig,
}


def _build(cls, raw: dict | None, where: str):
    raw = dict(raw or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _vertiport(raw: dict) -> VertiportSpec:
    raw = dict(raw)
    if "layout" in raw:
        try:
            raw["layout"] = Layout(raw["layout"])
        except ValueError:
            raise ConfigError(f"vertiport {raw.get('id')}: bad layout {raw['layout']!r}") from None
    vp = _build(VertiportSpec, raw, "vertiport")
    if vp.fato_count < 1:
        raise ConfigError(f"vertiport {vp.id}: fato_count must be >= 1")
    if not -90 <= vp.lat <= 90 or not -180 <= vp.lon <= 180:
        raise ConfigError(f"vertiport {vp.id}: position out of range")
    if vp.turnaround_time < 0:
        raise ConfigError(f"vertiport {vp.id}: negative turnaround")
    return vp


def _vehicle_type(raw: dict) -> VehicleType:
    vt = _build(VehicleType, raw, "vehicle_type")
    numeric = [f.name for f in dataclasses.fields(VehicleType) if f.name != "name"]
    for attr in numeric:
        if not getattr(vt, attr) > 0:
            raise ConfigError(f"vehicle type {vt.name}: {attr} must be > 0")
    if vt.min_reserve >= vt.battery_capacity:
        raise ConfigError(f"vehicle type {vt.name}: min_reserve must be below battery_capacity")
    return vt


def _fleet(raw: list, vertiport_ids: list[int]) -> list[VehicleSpec]:
    vehicles: list[VehicleSpec] = []
    for entry in raw or []:
        if "count" in entry:
            # distribute round-robin over the listed (or all) home vertiports
            homes = entry.get("homes", vertiport_ids)
            first = entry.get("first_id", len(vehicles))
            for i in range(int(entry["count"])):
                vehicles.append(VehicleSpec(first + i, entry["type"], homes[i % len(homes)]))
        else:
            vehicles.append(VehicleSpec(int(entry["id"]), entry["type"], int(entry["home"])))
    return vehicles


def _pipeline(raw: dict | None) -> dict[str, StageWiring]:
    out = {}
    for stage, spec in (raw or {}).items():
        endpoints = tuple(_build(EndpointSpec, e, f"pipeline.{stage}") for e in spec.get("endpoints", []))
        for ep in endpoints:
            if ep.transport not in ("inprocess", "remote"):
                raise ConfigError(f"pipeline.{stage}: endpoint {ep.name} has bad transport {ep.transport!r}")
        try:
            mode = DispatchMode(spec.get("mode", "ParallelFanOut"))
        except ValueError:
            raise ConfigError(f"pipeline.{stage}: bad mode {spec.get('mode')!r}") from None
        out[stage] = StageWiring(mode=mode, endpoints=endpoints)
    return out


def config_from_dict(raw: dict[str, Any], base_dir: Path | None = None) -> ScenarioConfig:
    raw = copy.deepcopy(raw)
    scen = raw.get("scenario", {})
    vertiports = [_vertiport(v) for v in raw.get("vertiports", [])]
    types = [_vehicle_type(v) for v in raw.get("vehicle_types", [])]
    vehicles = _fleet(raw.get("fleet", []), [v.id for v in vertiports])

    demand_raw = dict(raw.get("demand", {}))
    synth_raw = dict(demand_raw.pop("synthetic", {}) or {})
    for key in ("clusters", "peaks"):
        if key in synth_raw:
            synth_raw[key] = tuple(tuple(float(x) for x in row) for row in synth_raw[key])
    demand = _build(DemandConfig, {**demand_raw, "synthetic": _build(SyntheticDemand, synth_raw, "demand.synthetic")}, "demand")

    air_raw = dict(raw.get("airspace", {}))
    if "mode" in air_raw:
        air_raw["mode"] = AirspaceMode.parse(air_raw["mode"])
    airspace = _build(AirspaceConfig, air_raw, "airspace")

    econ_raw = dict(raw.get("economics", {}))
    econ_raw["cost_model"] = _build(CostModel, econ_raw.get("cost_model"), "economics.cost_model")
    economics = _build(EconomicsConfig, econ_raw, "economics")

    sections = {name: _build(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    cfg = ScenarioConfig(
        name=str(scen.get("name", "scenario")),
        seed=int(scen.get("seed", 0)),
        start=int(scen.get("start", 0)),
        duration=int(scen.get("duration", 4 * 3600)),
        vertiports=tuple(vertiports),
        vehicle_types=tuple(types),
        vehicles=tuple(vehicles),
        demand=demand,
        airspace=airspace,
        pricing=_build(PriceParams, raw.get("pricing"), "pricing"),
        economics=economics,
        pipeline=_pipeline(raw.get("pipeline")),
        base_dir=base_dir,
        **sections,
    )
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    if len(cfg.vertiports) < 2:
        raise ConfigError("scenario needs at least 2 vertiports")
    if not cfg.vehicles:
        raise ConfigError("scenario needs at least 1 vehicle")
    for kind, ids in (
        ("vertiport", [v.id for v in cfg.vertiports]),
        ("vehicle", [v.id for v in cfg.vehicles]),
        ("vehicle type", [t.name for t in cfg.vehicle_types]),
    ):
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate {kind} ids")
    known = {v.id for v in cfg.vertiports}
    types = {t.name for t in cfg.vehicle_types}
    for veh in cfg.vehicles:
        if veh.home not in known:
            raise ConfigError(f"vehicle {veh.id} homed at unknown vertiport {veh.home}")
        if veh.vtype not in types:
            raise ConfigError(f"vehicle {veh.id} has unknown type {veh.vtype!r}")
    if cfg.demand.lead_time < 0:
        raise ConfigError("lead_time must be >= 0")
    if cfg.orchestrator.batch_interval < 0:
        raise ConfigError("batch_interval must be >= 0")
    if cfg.missions.max_legs < 1:
        raise ConfigError("max_legs must be >= 1")


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, base_dir=path.parent)


def default_scenario_path() -> Path:
    return Path(__file__).parent / "data" / "hamburg.yaml"
