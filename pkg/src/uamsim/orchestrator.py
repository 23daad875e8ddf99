"""Simulation driver: batching, stage dispatch, commits, checkpoints.

Planning of a request is a generator that yields stage calls. All requests of
a batch are stepped together so that calls to the same stage can be sent to
the bus as one serial invocation or as a parallel fan-out. Commits are then
applied one request at a time in batch order; a plan made against an older
state version is re-planned before it is committed, which makes the committed
event log independent of the batch interval.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Generator, Iterable

from . import stages
from .airspace import RouteNetwork, Trajectory4D, build_network, headway_seconds
from .bus.interchange import Node, encode
from .bus.registry import Bus, ComponentDescriptor, DispatchPolicy, Registry, Transport
from .config import DispatchMode, ScenarioConfig
from .demand import TravelRequest, build_access_plan, emit_requests, generate_trips, load_trips
from .economics import (
    PriceConvergence,
    RunLedger,
    compute_fare,
    converge_prices,
    evaluate_run,
)
from .errors import (
    BusError,
    EnergyInfeasible,
    NoRouteAvailable,
    PlanningError,
    RejectBooking,
    RunAborted,
)
from .fleet import AllocationQuery, VehicleState
from .missions import MissionCandidate, enumerate_decompositions, select_itinerary, try_pool
from .vertidrome import Slot, SlotState
from .world import (
    Booking,
    Flight,
    FlightKind,
    MetricsFrame,
    RequestStatus,
    WorldState,
    encode_record,
    init_scenario,
    snapshot_metrics,
)

log = logging.getLogger(__name__)

EVENTS_FILE = "events.jsonl"
CHECKPOINT_FILE = "checkpoint.json"


# -- batching -------------------------------------------------------------------------


@dataclass(frozen=True)
class RequestBatch:
    window: tuple[int, int]
    requests: tuple[int, ...]
    items: tuple[TravelRequest, ...] = field(default=(), compare=False, repr=False)


def batch_requests(stream: Iterable[TravelRequest], interval: int) -> list[RequestBatch]:
    """Group requests into aligned windows ``[k*interval, (k+1)*interval)``.

    An interval of 0 puts every request in its own batch.
    """
    if interval < 0:
        raise ValueError("interval must be >= 0")
    ordered = sorted(stream, key=lambda r: (r.emission_time, r.id))
    if interval == 0:
        return [RequestBatch((r.emission_time, r.emission_time), (r.id,), (r,)) for r in ordered]
    batches: list[RequestBatch] = []
    current: list[TravelRequest] = []
    key = None
    for r in ordered:
        k = r.emission_time // interval
        if key is not None and k != key:
            batches.append(_batch(current, key, interval))
            current = []
        key = k
        current.append(r)
    if current:
        batches.append(_batch(current, key, interval))
    return batches


def _batch(reqs: list[TravelRequest], k: int, interval: int) -> RequestBatch:
    return RequestBatch((k * interval, (k + 1) * interval), tuple(r.id for r in reqs), tuple(reqs))


# -- planning ----------------------------------------------------------------------------


@dataclass(frozen=True)
class StageCall:
    stage: str
    item: Node


@dataclass
class PlanOutcome:
    request: TravelRequest
    version: int
    status: RequestStatus
    reason: str | None = None
    booking: Booking | None = None
    detail: dict = field(default_factory=dict)


class Overlay:
    """Tentative flights, slots and trajectories of one candidate itinerary."""

    def __init__(self, world: WorldState, now: int):
        self.world = world
        self.now = now
        self.flights: list[Flight] = []
        self.slots: list[Slot] = []
        self.trajectories: list[Trajectory4D] = []

    def _pid(self, items: list) -> int:
        return -(len(items) + 1)

    def vehicle_state(self, vid: int) -> VehicleState:
        w = self.world
        veh = w.vehicles[vid]
        flights = [w.flights[f] for f in veh.schedule] + [f for f in self.flights if f.vehicle == vid]
        if flights:
            last = flights[-1]
            location = last.destination
            free_from = last.arrival + w.vertiports[location].turnaround_time
        else:
            location, free_from = veh.home, w.start
        reserved = w.reserved_at(vid, self.now) + math.fsum(f.energy for f in self.flights if f.vehicle == vid)
        return VehicleState(vid, veh.vtype, location, free_from, w.energy_at(vid, self.now), reserved)

    def slots_at(self, vertiport: int, after: int, buffer: int) -> list[Slot]:
        cal = self.world.calendars[vertiport]
        mine = [s for s in self.slots if s.vertiport == vertiport]
        return [s for s in cal.slots() + mine if s.end + buffer >= after]

    def active_trajectories(self, after: float, window: float) -> list[Trajectory4D]:
        committed = [t for _, t in sorted(self.world.trajectories.items())]
        return [t for t in committed + self.trajectories if t.arrival + window >= after]

    def add_mission(
        self, vehicle: int, origin: int, destination: int, kind: FlightKind, result: Node, energy_of
    ) -> Flight:
        takeoff = stages.parse_slot(result.child("takeoffSlot"), origin)
        landing = stages.parse_slot(result.child("landingSlot"), destination)
        takeoff = dataclasses.replace(takeoff, id=self._pid(self.slots), state=SlotState.OFFERED)
        self.slots.append(takeoff)
        landing = dataclasses.replace(landing, id=self._pid(self.slots), state=SlotState.OFFERED)
        self.slots.append(landing)
        fid = self._pid(self.flights)
        traj = stages.parse_trajectory(result.child("trajectory"), self._pid(self.trajectories))
        traj = dataclasses.replace(traj, mission=fid)
        self.trajectories.append(traj)
        flight = Flight(
            fid, vehicle, origin, destination, takeoff.start, landing.start, takeoff.id, landing.id,
            traj.id, kind, traj.total_distance, energy_of(traj.total_distance),
        )
        self.flights.append(flight)
        return flight


class Planner:
    """Builds request plans against the world; stage work goes through the bus."""

    def __init__(self, cfg: ScenarioConfig, world: WorldState, bus: Bus, network: RouteNetwork):
        self.cfg = cfg
        self.world = world
        self.bus = bus
        self.network = network
        self.settings = {s: fn(cfg) for s, fn in stages.SETTINGS.items()}
        self.types = {t.name: t for t in cfg.vehicle_types}
        self.ranges = {t.name: t.max_leg_km for t in cfg.vehicle_types}
        self.turnaround = {v.id: v.turnaround_time for v in cfg.vertiports}
        self.vertiport_ids = sorted(v.id for v in cfg.vertiports)
        self.names = {v.id: v.name for v in cfg.vertiports}
        speeds = [t.cruise_speed for t in cfg.vehicle_types]
        # widest headway any vehicle type can need; filters what is sent to the stage
        self.window = headway_seconds(cfg.airspace.separation_km, min(speeds))

    # -- batch stepping ------------------------------------------------------------------

    def plan_batch(self, requests: list[TravelRequest]) -> list[PlanOutcome]:
        gens = [self.plan_request(r) for r in requests]
        results: list[PlanOutcome | None] = [None] * len(gens)
        pending: dict[int, StageCall] = {}
        for i, g in enumerate(gens):
            self._step(i, g, None, pending, results)
        while pending:
            current, pending = pending, {}
            for stage in stages.STAGES:
                idx = [i for i in sorted(current) if current[i].stage == stage]
                if not idx:
                    continue
                replies = self.bus.dispatch(stage, [current[i].item for i in idx], self.settings[stage])
                for i, reply in zip(idx, replies):
                    self._step(i, gens[i], reply, pending, results)
        return results  # type: ignore[return-value]

    @staticmethod
    def _step(i, gen, reply, pending, results) -> None:
        try:
            call = next(gen) if reply is None else gen.send(reply)
        except StopIteration as stop:
            results[i] = stop.value
            return
        pending[i] = call

    # -- one request -----------------------------------------------------------------------

    def plan_request(self, req: TravelRequest) -> Generator[StageCall, Node, PlanOutcome]:
        version = self.world.version
        try:
            decomps = enumerate_decompositions(
                req.origin_vertiport, req.destination_vertiport, self.vertiport_ids, self.ranges,
                self.network.route_km, self.cfg.missions.max_legs,
            )
        except PlanningError as exc:
            return PlanOutcome(req, version, RequestStatus.REJECTED, exc.reason)
        candidates: list[MissionCandidate] = []
        first_error: PlanningError | None = None
        for legs in decomps:
            try:
                cand = yield from self._candidate(req, legs)
            except PlanningError as exc:
                first_error = first_error or exc
                continue
            candidates.append(cand)
        if not candidates:
            reason = (first_error or NoRouteAvailable()).reason
            return PlanOutcome(req, version, RequestStatus.REJECTED, reason)
        best = select_itinerary(candidates)
        reply = yield StageCall(
            stages.MODE_CHOICE,
            stages.mode_choice_item(req.id, req.trip, req.plan, best.estimated_departure,
                                    best.estimated_arrival, best.estimated_fare),
        )
        detail = {
            "p_uam": reply.get("probabilities")[0],
            "fare": best.estimated_fare,
            "departure": best.estimated_departure,
            "arrival": best.estimated_arrival,
        }
        if reply.get("choice") != 0:
            return PlanOutcome(req, version, RequestStatus.CAR, None, None, detail)
        return PlanOutcome(req, version, RequestStatus.UAM, None, best.payload, detail)

    def _candidate(self, req: TravelRequest, legs) -> Generator[StageCall, Node, MissionCandidate]:
        w = self.world
        now = req.emission_time
        overlay = Overlay(w, now)
        t = req.plan.earliest_vertiport_arrival
        leg_flights: list[int] = []
        assignments = []
        distances = []
        first_departure = None
        for o, d in legs:
            pooled = None
            if self.cfg.missions.pooling:
                pooled = try_pool((o, d), t, self.cfg.missions.pooling_window, w.flights.values(),
                                  w.free_seats, now)
            if pooled is not None:
                f = w.flights[pooled]
                assignments.append(("pool", pooled))
            else:
                f = yield from self._new_mission(overlay, o, d, t, now)
                assignments.append(("new", f.id))
            leg_flights.append(f.id)
            distances.append(f.distance_flown)
            first_departure = f.departure if first_departure is None else first_departure
            t = f.arrival + self.cfg.missions.connection_time
            last_arrival = f.arrival
        fare = compute_fare(distances, w.price_params)
        booking = Booking(req.id, w.version, fare, leg_flights, overlay.flights, overlay.slots, overlay.trajectories)
        return MissionCandidate(list(legs), assignments, first_departure, last_arrival, fare, booking)

    def _new_mission(self, overlay: Overlay, o: int, d: int, earliest: int, now: int):
        w = self.world
        vehicles = [overlay.vehicle_state(v) for v in sorted(w.vehicles)]
        routes = {(o, d): self.network.route_km(o, d)}
        for v in vehicles:
            if v.location != o:
                routes[(v.location, o)] = self.network.route_km(v.location, o)
        query = AllocationQuery(o, d, earliest, self.cfg.missions.estimated_pax, now)
        reply = yield StageCall(stages.FLEET, stages.fleet_item(query, vehicles, routes, self.turnaround))
        err = stages.planning_error(reply)
        if err is not None:
            raise err
        vid = reply.get("vehicle")
        vt = w.vtype_of(vid)
        dep = reply.get("achievableDeparture")
        dh = reply.find("deadhead")
        if dh is not None:
            dh_from = dh.get("origin")
            reply = yield StageCall(
                stages.VERTIPORT_TRAJECTORY, self._vt_item(overlay, dh_from, o, dh.get("earliestDeparture"), vt)
            )
            err = stages.planning_error(reply)
            if err is not None:
                raise err
            dh_flight = overlay.add_mission(vid, dh_from, o, FlightKind.DEADHEAD, reply, vt.flight_energy)
            dep = max(earliest, dh_flight.arrival + self.turnaround[o])
        reply = yield StageCall(stages.VERTIPORT_TRAJECTORY, self._vt_item(overlay, o, d, dep, vt))
        err = stages.planning_error(reply)
        if err is not None:
            raise err
        flight = overlay.add_mission(vid, o, d, FlightKind.REVENUE, reply, vt.flight_energy)
        state = overlay.vehicle_state(vid)
        if state.energy_available - state.reserved < vt.min_reserve - 1e-9:
            raise EnergyInfeasible(f"vehicle {vid} cannot fly the planned trajectories")
        return flight

    def _vt_item(self, overlay: Overlay, o: int, d: int, earliest: int, vt) -> Node:
        buffer = self.cfg.vertidrome.interdependence_buffer
        cals = []
        for vp in (o, d):
            cal = self.world.calendars[vp]
            cals.append(stages.calendar_node(cal, overlay.slots_at(vp, earliest, buffer), self.names[vp]))
        trajs = overlay.active_trajectories(earliest, self.window)
        return stages.vt_item(o, d, earliest, vt.cruise_speed, cals, trajs)


# -- run -----------------------------------------------------------------------------------


@dataclass
class RunReport:
    run_id: str
    world: WorldState
    frames: list[MetricsFrame]
    ledger: RunLedger
    rejections: dict[str, int]
    requests: int
    runtime_s: float
    out_dir: Path | None = None
    price: PriceConvergence | None = None
    bus_invocations: dict[str, int] = field(default_factory=dict)

    @property
    def mode_share(self) -> float:
        return self.frames[-1].mode_share if self.frames else 0.0

    @property
    def uam_passengers(self) -> int:
        return self.frames[-1].cumulative_uam_passengers if self.frames else 0

    def summary(self) -> dict:
        return {
            "run_id": self.run_id,
            "requests": self.requests,
            "uam_passengers": self.uam_passengers,
            "mode_share": self.mode_share,
            "rejections": dict(sorted(self.rejections.items())),
            "ledger": dataclasses.asdict(self.ledger),
            "checksum": self.world.checksum(),
            "runtime_s": round(self.runtime_s, 3),
            "price_iterations": None if self.price is None else self.price.iterations,
            "price_converged": None if self.price is None else self.price.converged,
        }


def run_id_for(cfg: ScenarioConfig) -> str:
    return f"{cfg.name}-seed{cfg.seed}"


def build_requests(cfg: ScenarioConfig, trips=None) -> list[TravelRequest]:
    if trips is None:
        if cfg.demand.source == "synthetic":
            trips = generate_trips(cfg.demand.synthetic, list(cfg.vertiports), cfg.start, cfg.duration, cfg.seed)
        else:
            src = Path(cfg.demand.source)
            if not src.is_absolute() and cfg.base_dir is not None:
                src = cfg.base_dir / src
            trips = load_trips(src, horizon=(cfg.start, cfg.end))
    vps = list(cfg.vertiports)
    plans = {t.id: build_access_plan(t, vps, cfg.demand.ground_speed) for t in trips}
    return emit_requests(trips, plans, cfg.demand.lead_time, cfg.start)


def default_bus(cfg: ScenarioConfig, handlers: dict | None = None) -> Bus:
    """Registry and dispatch policies from the scenario's pipeline wiring."""
    handlers = {**stages.HANDLERS, **(handlers or {})}
    registry = Registry(stages.STAGES)
    policies = {}
    for stage in stages.HANDLERS:
        wiring = cfg.pipeline.get(stage)
        if wiring is None or not wiring.endpoints:
            registry.register(ComponentDescriptor(f"{stage}-local", stage, handler=handlers[stage], timeout=300))
            policies[stage] = DispatchPolicy(stage, DispatchMode.SERIAL if wiring is None else wiring.mode, 1)
            continue
        for ep in wiring.endpoints:
            registry.register(
                ComponentDescriptor(
                    ep.name, stage, Transport(ep.transport), ep.address, ep.port, True, ep.timeout,
                    handlers[stage] if ep.transport == "inprocess" else None,
                )
            )
        policies[stage] = DispatchPolicy(stage, wiring.mode, len(wiring.endpoints))
    return Bus(registry, policies)


class Run:
    """One simulation run; owns the world state (single writer)."""

    def __init__(self, cfg: ScenarioConfig, bus: Bus, out_dir: Path | None, trips=None):
        self.cfg = cfg
        self.bus = bus
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.requests = build_requests(cfg, trips)
        self.world = init_scenario(cfg)
        positions = {v.id: v.position for v in cfg.vertiports}
        self.network = build_network(
            cfg.airspace.mode, positions, cfg.airspace.lattice_spacing_km, cfg.airspace.lattice_margin_km
        )
        self.planner = Planner(cfg, self.world, bus, self.network)
        self.frames: list[MetricsFrame] = []
        self.cadence = cfg.orchestrator.metrics_cadence
        self.next_frame = cfg.start
        self.next_request = 0
        self.batch_index = 0
        self.flushed = 0
        self.rejections: Counter[str] = Counter()

    # -- clock and frames ------------------------------------------------------------

    def _advance(self, t: int) -> None:
        # a frame at time f reflects every request emitted at or before f
        while self.cadence > 0 and self.next_frame < t:
            self.world.advance_clock(self.next_frame)
            self.frames.append(snapshot_metrics(self.world))
            self.next_frame += self.cadence
        self.world.advance_clock(t)

    # -- commits ----------------------------------------------------------------------------

    def _request_record(self, req: TravelRequest, detail: dict) -> dict:
        return {
            "id": req.id,
            "emission_time": req.emission_time,
            "origin_vertiport": req.origin_vertiport,
            "destination_vertiport": req.destination_vertiport,
            "access_km": req.plan.access_km,
            "egress_km": req.plan.egress_km,
            **detail,
        }

    def _commit(self, plan: PlanOutcome) -> None:
        req = plan.request
        record = self._request_record(req, plan.detail)
        if plan.status is RequestStatus.UAM:
            try:
                self.world.commit_booking(plan.booking)
            except RejectBooking as exc:
                log.info("booking for request %d rejected: %s", req.id, exc)
                self.world.resolve_request(record, RequestStatus.REJECTED, "booking_rejected")
                self.rejections["booking_rejected"] += 1
                return
            self.world.resolve_request(record, RequestStatus.UAM)
        elif plan.status is RequestStatus.CAR:
            self.world.resolve_request(record, RequestStatus.CAR)
        else:
            self.world.resolve_request(record, RequestStatus.REJECTED, plan.reason)
            self.rejections[plan.reason] += 1

    def process_batch(self, batch: RequestBatch) -> None:
        plans = self.planner.plan_batch(list(batch.items))
        for req, plan in zip(batch.items, plans):
            self._advance(req.emission_time)
            if plan.version != self.world.version:
                plan = self.planner.plan_batch([req])[0]
            self._commit(plan)
            self.next_request += 1

    # -- persistence ------------------------------------------------------------------------------

    def _flush_events(self) -> None:
        if self.out_dir is None:
            return
        log_ = self.world.event_log
        with open(self.out_dir / EVENTS_FILE, "a", encoding="utf-8") as fh:
            for rec in log_[self.flushed :]:
                fh.write(encode_record(rec) + "\n")
        self.flushed = len(log_)

    def checkpoint(self, complete: bool = False) -> None:
        if self.out_dir is None:
            return
        self._flush_events()
        data = {
            "run_id": run_id_for(self.cfg),
            "batch": self.batch_index,
            "log_offset": len(self.world.event_log),
            "next_request": self.next_request,
            "rng_cursor": self.next_request,
            "next_frame": self.next_frame,
            "frames": [f.row() for f in self.frames],
            "rejections": dict(self.rejections),
            "checksum": self.world.checksum(),
            "complete": complete,
        }
        tmp = self.out_dir / (CHECKPOINT_FILE + ".tmp")
        tmp.write_text(json.dumps(data, sort_keys=True), encoding="utf-8")
        tmp.replace(self.out_dir / CHECKPOINT_FILE)

    def restore(self) -> None:
        """Rebuild state from the last checkpoint and the persisted event log."""
        data = json.loads((self.out_dir / CHECKPOINT_FILE).read_text(encoding="utf-8"))
        lines = (self.out_dir / EVENTS_FILE).read_text(encoding="utf-8").splitlines()[: data["log_offset"]]
        records = [json.loads(x) for x in lines]
        world = WorldState.replay(records)
        if world.checksum() != data["checksum"]:
            raise RunAborted("event log does not reproduce the checkpointed state", str(self.out_dir))
        (self.out_dir / EVENTS_FILE).write_text("".join(x + "\n" for x in lines), encoding="utf-8")
        self.world = world
        self.planner.world = world
        self.flushed = len(records)
        self.next_request = data["next_request"]
        self.next_frame = data["next_frame"]
        self.batch_index = data["batch"]
        self.frames = [MetricsFrame(*row) for row in data["frames"]]
        self.rejections = Counter(data["rejections"])

    # -- main loop ---------------------------------------------------------------------------------

    def execute(self, resume: bool = False) -> RunReport:
        started = time.perf_counter()
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            if resume and (self.out_dir / CHECKPOINT_FILE).exists():
                self.restore()
            else:
                (self.out_dir / EVENTS_FILE).write_text("", encoding="utf-8")
                self.checkpoint()
        remaining = self.requests[self.next_request :]
        try:
            for batch in batch_requests(remaining, self.cfg.orchestrator.batch_interval):
                self.process_batch(batch)
                self.batch_index += 1
                self.checkpoint()
        except BusError as exc:
            where = str(self.out_dir / CHECKPOINT_FILE) if self.out_dir is not None else None
            raise RunAborted(f"run aborted after batch {self.batch_index}: {exc}", where) from exc
        self._finish()
        report = RunReport(
            run_id_for(self.cfg),
            self.world,
            self.frames,
            evaluate_run(self.world.event_log, self.cfg.economics.cost_model),
            dict(self.rejections),
            len(self.requests),
            time.perf_counter() - started,
            self.out_dir,
            bus_invocations=dict(self.bus.invocations),
        )
        return report

    def _finish(self) -> None:
        last_arrival = max((f.arrival for f in self.world.flights.values()), default=self.cfg.start)
        final = max(self.cfg.end, last_arrival, self.world.clock)
        while self.cadence > 0 and self.next_frame <= final:
            self.world.advance_clock(self.next_frame)
            self.frames.append(snapshot_metrics(self.world))
            self.next_frame += self.cadence
        self.world.advance_clock(final)
        if not self.frames or self.frames[-1].timestamp != final:
            self.frames.append(snapshot_metrics(self.world))
        self.checkpoint(complete=True)


def run_once(cfg: ScenarioConfig, out_dir=None, resume: bool = False, bus: Bus | None = None, trips=None) -> RunReport:
    own_bus = bus is None
    bus = bus or default_bus(cfg)
    try:
        return Run(cfg, bus, out_dir, trips).execute(resume)
    finally:
        if own_bus:
            bus.close()


def run_day(cfg: ScenarioConfig, out_dir=None, resume: bool = False, bus: Bus | None = None, trips=None) -> RunReport:
    """Run the scenario; with the price loop enabled, iterate runs to a price fixed point first."""
    price = None
    if cfg.economics.price_loop:
        econ = cfg.economics

        def one(params):
            return run_once(cfg.replace(pricing=params), bus=bus, trips=trips).ledger

        price = converge_prices(one, cfg.pricing, econ.tol, econ.max_iters, econ.target_margin, econ.damping)
        cfg = cfg.replace(pricing=price.params)
    report = run_once(cfg, out_dir, resume, bus, trips)
    report.price = price
    if out_dir is not None:
        write_outputs(report, cfg)
    return report


# -- outputs --------------------------------------------------------------------------------------


def write_outputs(report: RunReport, cfg: ScenarioConfig) -> None:
    from . import reporting

    out = Path(report.out_dir)
    rid = report.run_id
    with open(out / f"{rid}_metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MetricsFrame.FIELDS)
        for f in report.frames:
            w.writerow(f.row())
    with open(out / f"{rid}_ledger.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RunLedger.FIELDS)
        w.writerow([getattr(report.ledger, k) for k in RunLedger.FIELDS])
    doc = Node("cpacs")
    doc.append(stages.ledger_node(report.ledger))
    doc.append(stages.price_node(report.world.price_params))
    (out / f"{rid}_ledger.xml").write_bytes(encode(doc))
    (out / f"{rid}_summary.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True), encoding="utf-8")
    reporting.write_reports(report.world.event_log, out, rid, cadence=cfg.orchestrator.metrics_cadence)
