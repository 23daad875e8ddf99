"""Authoritative world state, event log, clock and metrics.

Every mutation is expressed as an event record that is appended to the log
and then applied; ``WorldState.replay`` applies the same records to a fresh
state, so a log is always sufficient to rebuild the run.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field

from .airspace import Trajectory4D
from .config import Layout, PriceParams, ScenarioConfig, VehicleType, VertiportSpec
from .errors import ConflictRetry, ConfigError, RejectBooking, SimulationInvariantViolation
from .geo import great_circle_km
from .vertidrome import Slot, SlotCalendar, SlotState

ENERGY_EPS = 1e-9


class FlightKind(str, enum.Enum):
    REVENUE = "Revenue"
    DEADHEAD = "Deadhead"


class FlightStatus(str, enum.Enum):
    SCHEDULED = "scheduled"
    AIRBORNE = "airborne"
    LANDED = "landed"


class RequestStatus(str, enum.Enum):
    UAM = "uam"
    CAR = "car"
    REJECTED = "rejected"


@dataclass
class Flight:
    id: int
    vehicle: int
    origin: int
    destination: int
    departure: int
    arrival: int
    departure_slot: int
    arrival_slot: int
    trajectory: int
    kind: FlightKind
    distance_flown: float
    energy: float
    manifest: list[int] = field(default_factory=list)
    status: FlightStatus = FlightStatus.SCHEDULED

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kind"] = self.kind.value
        d["status"] = self.status.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Flight:
        d = dict(d)
        d["kind"] = FlightKind(d["kind"])
        d["status"] = FlightStatus(d["status"])
        d["manifest"] = list(d["manifest"])
        return cls(**d)


@dataclass
class Vehicle:
    id: int
    vtype: str
    home: int
    location: int
    energy_available: float
    energy_ref_time: int  # time the energy value refers to (charging accrues from here)
    schedule: list[int] = field(default_factory=list)
    next_index: int = 0  # first schedule entry not yet landed
    airborne: int | None = None
    reserved: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Itinerary:
    request: int
    flights: list[int]
    fare: float
    departure: int
    arrival: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Booking:
    """A planned itinerary ready to commit.

    New flights, slots and trajectories carry provisional negative ids that
    the commit maps to permanent ones. ``legs`` lists the flight of every leg
    in order: pooled legs reference existing (non-negative) flight ids.
    """

    request: int
    version: int
    fare: float
    legs: list[int]
    flights: list[Flight] = field(default_factory=list)
    slots: list[Slot] = field(default_factory=list)
    trajectories: list[Trajectory4D] = field(default_factory=list)


@dataclass(frozen=True)
class MetricsFrame:
    timestamp: int
    cumulative_requests: int
    cumulative_uam_passengers: int
    flights_airborne: int
    cumulative_flights: int
    cumulative_deadheads: int
    mode_share: float

    FIELDS = (
        "timestamp",
        "cumulative_requests",
        "cumulative_uam_passengers",
        "flights_airborne",
        "cumulative_flights",
        "cumulative_deadheads",
        "mode_share",
    )

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


@dataclass(frozen=True)
class SimEvent:
    time: int
    kind: str
    vehicle: int
    flight: int | None = None


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def encode_record(record: dict) -> str:
    return _canonical(record)


class WorldState:
    """Single writer store for the whole simulation."""

    def __init__(self, init: dict):
        self.scenario: str = init["scenario"]
        self.rng_seed: int = init["seed"]
        self.start: int = init["start"]
        self.clock: int = init["start"]
        self.version = 0
        self.vertiports: dict[int, VertiportSpec] = {}
        for v in init["vertiports"]:
            v = dict(v)
            v["layout"] = Layout(v["layout"])
            self.vertiports[v["id"]] = VertiportSpec(**v)
        self.vehicle_types: dict[str, VehicleType] = {t["name"]: VehicleType(**t) for t in init["vehicle_types"]}
        self.vehicles: dict[int, Vehicle] = {}
        for v in init["vehicles"]:
            vt = self.vehicle_types[v["vtype"]]
            self.vehicles[v["id"]] = Vehicle(
                v["id"], v["vtype"], v["home"], v["home"], vt.battery_capacity, init["start"]
            )
        self.price_params = PriceParams(**init["price_params"])
        vd = init["vertidrome"]
        self.calendars: dict[int, SlotCalendar] = {
            vp.id: SlotCalendar(vp.id, vp.fato_count, vp.layout, vd["slot_duration"], vd["buffer"])
            for vp in self.vertiports.values()
        }
        self.flights: dict[int, Flight] = {}
        self.slots: dict[int, Slot] = {}
        self.trajectories: dict[int, Trajectory4D] = {}
        self.requests: dict[int, dict] = {}
        self.itineraries: dict[int, Itinerary] = {}
        self.next_ids = {"flight": 0, "slot": 0, "trajectory": 0}
        self.event_log: list[dict] = []

    # -- construction ----------------------------------------------------------

    @classmethod
    def replay(cls, records: list[dict]) -> WorldState:
        if not records or records[0]["kind"] != "init":
            raise ValueError("event log must start with an init record")
        world = cls(records[0]["payload"])
        world.event_log.append(records[0])
        for rec in records[1:]:
            world.event_log.append(rec)
            world._apply(rec)
        return world

    # -- event plumbing --------------------------------------------------------

    def _record(self, kind: str, time: int | None = None, **payload) -> dict:
        rec = {"seq": len(self.event_log), "kind": kind, "t": self.clock if time is None else time, "payload": payload}
        self.event_log.append(rec)
        self._apply(rec)
        return rec

    def _apply(self, rec: dict) -> None:
        p = rec["payload"]
        self.clock = rec["t"]
        kind = rec["kind"]
        if kind == "slot_committed":
            slot = Slot.from_dict(p["slot"])
            self.calendars[slot.vertiport].commit_slot(dataclasses.replace(slot, state=SlotState.OFFERED))
            self.slots[slot.id] = slot
            self.next_ids["slot"] = slot.id + 1
        elif kind == "trajectory_committed":
            traj = Trajectory4D.from_dict(p["trajectory"])
            self.trajectories[traj.id] = traj
            self.next_ids["trajectory"] = traj.id + 1
        elif kind == "flight_scheduled":
            f = Flight.from_dict(p["flight"])
            self.flights[f.id] = f
            veh = self.vehicles[f.vehicle]
            veh.schedule.append(f.id)
            veh.reserved = p["reserved"]
            self.next_ids["flight"] = f.id + 1
        elif kind == "seat_booked":
            self.flights[p["flight"]].manifest.append(p["passenger"])
        elif kind == "itinerary_committed":
            it = Itinerary(**p["itinerary"])
            self.itineraries[it.request] = it
        elif kind == "booking_committed":
            self.version = p["version"]
        elif kind == "request_resolved":
            self.requests[p["request"]["id"]] = dict(p["request"])
        elif kind == "departure":
            veh = self.vehicles[p["vehicle"]]
            veh.energy_available = p["energy"]
            veh.energy_ref_time = rec["t"]
            veh.airborne = p["flight"]
            self.flights[p["flight"]].status = FlightStatus.AIRBORNE
        elif kind == "arrival":
            veh = self.vehicles[p["vehicle"]]
            f = self.flights[p["flight"]]
            veh.energy_available = p["energy"]
            veh.energy_ref_time = rec["t"]
            veh.reserved = p["reserved"]
            veh.airborne = None
            veh.location = f.destination
            veh.next_index += 1
            f.status = FlightStatus.LANDED
        elif kind == "charge_complete":
            self.vehicles[p["vehicle"]].energy_available = p["energy"]
        elif kind in ("clock", "init"):
            pass
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    # -- read helpers ----------------------------------------------------------

    def vtype_of(self, vehicle_id: int) -> VehicleType:
        return self.vehicle_types[self.vehicles[vehicle_id].vtype]

    def vehicle_flights(self, vehicle_id: int) -> list[Flight]:
        return [self.flights[f] for f in self.vehicles[vehicle_id].schedule]

    def active_trajectories(self, after: float | None = None) -> list[Trajectory4D]:
        """Committed trajectories still airborne or planned at ``after``."""
        t = self.clock if after is None else after
        return [tr for tr in self.trajectories.values() if tr.arrival >= t]

    def free_seats(self, flight_id: int) -> int:
        f = self.flights[flight_id]
        return self.vtype_of(f.vehicle).pax_capacity - len(f.manifest)

    def state_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.rng_seed,
            "clock": self.clock,
            "version": self.version,
            "vehicles": [v.to_dict() for _, v in sorted(self.vehicles.items())],
            "flights": [f.to_dict() for _, f in sorted(self.flights.items())],
            "slots": [s.to_dict() for _, s in sorted(self.slots.items())],
            "calendars": {
                str(k): [s.to_dict() for s in c.slots()] for k, c in sorted(self.calendars.items())
            },
            "trajectories": [t.to_dict() for _, t in sorted(self.trajectories.items())],
            "requests": [r for _, r in sorted(self.requests.items())],
            "itineraries": [i.to_dict() for _, i in sorted(self.itineraries.items())],
            "price_params": dataclasses.asdict(self.price_params),
            "next_ids": dict(self.next_ids),
        }

    def checksum(self) -> str:
        return hashlib.sha256(_canonical(self.state_dict()).encode()).hexdigest()

    def log_bytes(self) -> bytes:
        return "".join(encode_record(r) + "\n" for r in self.event_log).encode()

    # -- energy projection ------------------------------------------------------

    def energy_at(self, vehicle_id: int, t: float) -> float:
        """Battery level at ``t`` derived from the committed schedule alone.

        Mirrors the execution rules of ``advance_clock`` (charge while parked,
        debit on landing), so planning never depends on how far the clock has
        been advanced.
        """
        veh = self.vehicles[vehicle_id]
        vt = self.vehicle_types[veh.vtype]
        cap = vt.battery_capacity
        e = cap
        ref = self.start
        for fid in veh.schedule:
            f = self.flights[fid]
            if f.departure > t:
                break
            e = min(cap, e + vt.charge_rate * (f.departure - ref) / 3600.0)
            if f.arrival > t:
                return e
            e = e - f.energy
            ref = f.arrival
        if t > ref:
            e = min(cap, e + vt.charge_rate * (t - ref) / 3600.0)
        return e

    def reserved_at(self, vehicle_id: int, t: float) -> float:
        """Energy committed to flights that have not landed by ``t``."""
        return math.fsum(
            self.flights[f].energy for f in self.vehicles[vehicle_id].schedule if self.flights[f].arrival > t
        )

    # -- booking ------------------------------------------------------------------

    def commit_booking(self, booking: Booking) -> Itinerary:
        """Atomically commit seats, slots, trajectories and energy reservations."""
        if booking.version != self.version:
            raise ConflictRetry(f"plan built on version {booking.version}, state is at {self.version}")
        if booking.request in self.requests:
            raise RejectBooking(f"request {booking.request} already resolved")

        # validate everything before the first mutation
        cals = {}
        for slot in booking.slots:
            cal = cals.setdefault(slot.vertiport, self.calendars[slot.vertiport].copy())
            cal.commit_slot(dataclasses.replace(slot, id=None))
        new_ids = {f.id for f in booking.flights}
        for fid in booking.legs:
            if fid in new_ids:
                f = next(x for x in booking.flights if x.id == fid)
                cap = self.vehicle_types[self.vehicles[f.vehicle].vtype].pax_capacity
                load = len(f.manifest)
            elif fid in self.flights:
                cap = self.vtype_of(self.flights[fid].vehicle).pax_capacity
                load = len(self.flights[fid].manifest)
            else:
                raise RejectBooking(f"unknown flight {fid}")
            if load + 1 > cap:
                raise RejectBooking(f"flight {fid} is full")
        for f in booking.flights:
            if f.kind is FlightKind.DEADHEAD and f.manifest:
                raise RejectBooking("deadhead flights carry no passengers")
        extra: dict[int, list[float]] = {}
        for f in booking.flights:
            extra.setdefault(f.vehicle, []).append(f.energy)
        for vid, energies in sorted(extra.items()):
            vt = self.vtype_of(vid)
            left = self.energy_at(vid, self.clock) - self.reserved_at(vid, self.clock) - math.fsum(energies)
            if left < vt.min_reserve - ENERGY_EPS:
                raise RejectBooking(f"vehicle {vid} lacks energy for the booking")
        tails: dict[int, tuple[int, int]] = {}
        for f in sorted(booking.flights, key=lambda f: -f.id):
            veh = self.vehicles[f.vehicle]
            if f.vehicle not in tails:
                last = self.flights[veh.schedule[-1]] if veh.schedule else None
                tails[f.vehicle] = (last.destination, last.arrival) if last else (veh.home, self.start)
            self._check_chaining(f, *tails[f.vehicle])
            tails[f.vehicle] = (f.destination, f.arrival)

        slot_map, traj_map, flight_map = {}, {}, {}
        for slot in booking.slots:
            sid = self.next_ids["slot"]
            slot_map[slot.id] = sid
            committed = dataclasses.replace(slot, id=sid, state=SlotState.COMMITTED)
            self._record("slot_committed", slot=committed.to_dict())
        for traj in booking.trajectories:
            traj_map[traj.id] = self.next_ids["trajectory"] + len(traj_map)
        for f in sorted(booking.flights, key=lambda f: -f.id):
            flight_map[f.id] = self.next_ids["flight"] + len(flight_map)
        for traj in booking.trajectories:
            committed = dataclasses.replace(
                traj, id=traj_map[traj.id], mission=flight_map.get(traj.mission, traj.mission)
            )
            self._record("trajectory_committed", trajectory=committed.to_dict())
        for f in sorted(booking.flights, key=lambda f: flight_map[f.id]):
            real = dataclasses.replace(
                f,
                id=flight_map[f.id],
                departure_slot=slot_map[f.departure_slot],
                arrival_slot=slot_map[f.arrival_slot],
                trajectory=traj_map[f.trajectory],
                manifest=[],
            )
            veh = self.vehicles[real.vehicle]
            reserved = math.fsum(
                [self.flights[x].energy for x in veh.schedule[veh.next_index :]] + [real.energy]
            )
            self._record("flight_scheduled", flight=real.to_dict(), reserved=reserved)
        legs = [flight_map.get(fid, fid) for fid in booking.legs]
        for fid in legs:
            self._record("seat_booked", flight=fid, passenger=booking.request)
        first, last = self.flights[legs[0]], self.flights[legs[-1]]
        itinerary = Itinerary(booking.request, legs, booking.fare, first.departure, last.arrival)
        self._record("itinerary_committed", itinerary=itinerary.to_dict())
        self._record("booking_committed", version=self.version + 1)
        return itinerary

    def _check_chaining(self, f: Flight, prev_loc: int, prev_arr: int) -> None:
        if f.origin != prev_loc or f.departure < prev_arr:
            raise RejectBooking(f"flight breaks schedule chaining of vehicle {f.vehicle}")
        if not f.departure < f.arrival:
            raise RejectBooking("flight must arrive after it departs")
        gc = great_circle_km(self.vertiports[f.origin].position, self.vertiports[f.destination].position)
        if f.distance_flown < gc - 1e-9:
            raise RejectBooking("flown distance shorter than great-circle distance")

    def resolve_request(self, request: dict, status: RequestStatus, reason: str | None = None) -> None:
        self._record("request_resolved", request={**request, "status": status.value, "reason": reason})

    # -- clock ----------------------------------------------------------------------

    def _next_vehicle_event(self, veh: Vehicle):
        vt = self.vehicle_types[veh.vtype]
        if veh.airborne is not None:
            return (self.flights[veh.airborne].arrival, veh.id, 0, "arrival")
        dep = None
        if veh.next_index < len(veh.schedule):
            dep = self.flights[veh.schedule[veh.next_index]].departure
        if veh.energy_available < vt.battery_capacity:
            full = veh.energy_ref_time + math.ceil(
                (vt.battery_capacity - veh.energy_available) / vt.charge_rate * 3600.0
            )
            if dep is None or full <= dep:
                return (full, veh.id, 1, "charge_complete")
        if dep is not None:
            return (dep, veh.id, 2, "departure")
        return None

    def advance_clock(self, to: int) -> list[SimEvent]:
        """Execute every scheduled departure, landing and charge completion up to ``to``."""
        if to < self.clock:
            raise ValueError(f"cannot move clock backwards ({self.clock} -> {to})")
        events = []
        while True:
            pending = [e for e in map(self._next_vehicle_event, self.vehicles.values()) if e is not None]
            if not pending:
                break
            t, vid, _, kind = min(pending)
            if t > to:
                break
            events.append(self._execute(t, vid, kind))
        if self.clock < to:
            self._record("clock", time=to)
        return events

    def _execute(self, t: int, vid: int, kind: str) -> SimEvent:
        veh = self.vehicles[vid]
        vt = self.vehicle_types[veh.vtype]
        if kind == "charge_complete":
            self._record("charge_complete", time=t, vehicle=vid, energy=vt.battery_capacity)
            return SimEvent(t, kind, vid)
        if kind == "departure":
            f = self.flights[veh.schedule[veh.next_index]]
            e = min(vt.battery_capacity, veh.energy_available + vt.charge_rate * (t - veh.energy_ref_time) / 3600.0)
            if e - f.energy < vt.min_reserve - ENERGY_EPS:
                raise SimulationInvariantViolation(
                    f"vehicle {vid} would land flight {f.id} with {e - f.energy:.3f} kWh "
                    f"(reserve {vt.min_reserve} kWh)"
                )
            self._record("departure", time=t, vehicle=vid, flight=f.id, energy=e)
            return SimEvent(t, kind, vid, f.id)
        f = self.flights[veh.airborne]
        e = veh.energy_available - f.energy
        if not vt.min_reserve - ENERGY_EPS <= e <= vt.battery_capacity + ENERGY_EPS:
            raise SimulationInvariantViolation(f"vehicle {vid} energy {e} outside safe band")
        reserved = math.fsum(self.flights[x].energy for x in veh.schedule[veh.next_index + 1 :])
        self._record("arrival", time=t, vehicle=vid, flight=f.id, energy=e, reserved=reserved)
        return SimEvent(t, kind, vid, f.id)


def init_scenario(config: ScenarioConfig) -> WorldState:
    from .config import validate

    validate(config)
    types = {t.name: t for t in config.vehicle_types}
    if any(v.vtype not in types for v in config.vehicles):
        raise ConfigError("vehicle references an unknown type")
    payload = {
        "scenario": config.name,
        "seed": config.seed,
        "start": config.start,
        "vertiports": [
            {**dataclasses.asdict(v), "layout": v.layout.value} for v in sorted(config.vertiports, key=lambda v: v.id)
        ],
        "vehicle_types": [dataclasses.asdict(t) for t in config.vehicle_types],
        "vehicles": [dataclasses.asdict(v) for v in sorted(config.vehicles, key=lambda v: v.id)],
        "price_params": dataclasses.asdict(config.pricing),
        "vertidrome": {
            "slot_duration": config.vertidrome.slot_duration,
            "buffer": config.vertidrome.interdependence_buffer,
        },
    }
    # round-trip through JSON so the live state and a replayed state start identical
    payload = json.loads(_canonical(payload))
    world = WorldState(payload)
    world.event_log.append({"seq": 0, "kind": "init", "t": config.start, "payload": payload})
    return world


def snapshot_metrics(world: WorldState) -> MetricsFrame:
    resolved = len(world.requests)
    uam = sum(1 for r in world.requests.values() if r["status"] == RequestStatus.UAM.value)
    t = world.clock
    airborne = sum(1 for f in world.flights.values() if f.departure <= t < f.arrival)
    deadheads = sum(1 for f in world.flights.values() if f.kind is FlightKind.DEADHEAD)
    return MetricsFrame(t, resolved, uam, airborne, len(world.flights), deadheads, uam / max(1, resolved))
