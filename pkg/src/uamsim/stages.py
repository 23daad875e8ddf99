"""Pipeline stages as pure document handlers, plus their document builders.

A stage request looks like::

    <cpacs>
      <flights><requests><request uID="0">...</request>...</requests></flights>
      <settings>...</settings>
    </cpacs>

and the response carries one ``<result uID="...">`` per request under
``flights/results``. Handlers keep no state between invocations apart from a
cache of route networks keyed by the network description they were built from.
"""

from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass

from .airspace import (
    RouteNetwork,
    Trajectory4D,
    build_network,
    headway_seconds,
    match_arrival_slot,
    propose_trajectories,
    resolve_by_delay,
)
from .bus.interchange import Node, encode
from .config import AirspaceMode, Layout, ModeChoiceConfig, ScenarioConfig, VehicleType
from .demand import AccessPlan, Trip
from .economics import RunLedger, update_price_params
from .config import PriceParams
from .errors import PLANNING_ERRORS, PlanningError, SchemaError, SlotUnavailable, TrajectoryCongested
from .fleet import AllocationQuery, VehicleState, allocate_vehicle
from .modechoice import LogitParams, build_car_alternative, complete_uam_chain, draw_choice, logit_probabilities
from .vertidrome import Slot, SlotCalendar, SlotKind, SlotState, next_free_slot

FLEET = "fleet"
VERTIPORT_TRAJECTORY = "vertiport_trajectory"
MODE_CHOICE = "mode_choice"
ECONOMICS = "economics"
MISSION_PLANNING = "mission_planning"
STAGES = (MISSION_PLANNING, FLEET, VERTIPORT_TRAJECTORY, MODE_CHOICE, ECONOMICS)

# element vocabulary; feeds the schema fingerprint exchanged in handshakes
SCHEMA_ELEMENTS = (
    "cpacs", "flights", "requests", "request", "results", "result", "settings", "status", "reason",
    "vertiports", "vertiport", "vertiportID", "name", "positionNorth", "positionEast", "fatoCount",
    "layout", "departureTimes", "arrivalTimes", "slots", "slot", "fato", "kind", "start", "end",
    "trajectories", "trajectory", "nodes", "waypointsNorth", "waypointsEast", "times", "distance",
    "mission", "origin", "destination", "earliestDeparture", "now", "estimatedPax", "cruiseSpeed",
    "vehicles", "vehicle", "type", "location", "freeFrom", "energyAvailable", "reserved", "routes",
    "route", "from", "to", "turnaround", "vehicleTypes", "vehicleType", "paxCapacity",
    "batteryCapacity", "cruiseEnergyRate", "hoverEnergyPerCycle", "minReserve", "chargeRate",
    "achievableDeparture", "requiredEnergy", "deadhead", "energy", "takeoffSlot", "landingSlot",
    "airspace", "mode", "separation", "sampleStep", "kPaths", "delayStep", "maxDelay", "vertidrome",
    "slotDuration", "buffer", "horizon", "granularity", "latticeSpacing", "latticeMargin", "network",
    "requestID", "departure", "arrival", "earliestArrival", "accessTime", "egressTime", "accessKm",
    "egressKm", "fare", "tripOrigin", "tripDestination", "journeyStart", "originVertiport",
    "destinationVertiport", "modeChoice", "betaTime", "betaCost", "ascUam", "carSpeed", "carCostRate",
    "detourFactor", "groundCostRate", "seed", "probabilities", "choice", "uamTime", "uamCost",
    "carTime", "carCost", "ledger", "priceParams", "baseFare", "pricePerKm", "economics",
    "targetMargin", "damping", "revenue", "operatingCost", "fleetSize", "deadheadShare",
    "totalEnergy", "loadFactor", "deadheads", "passengers", "revenueKm",
)


# -- envelope ------------------------------------------------------------------------


def request_doc(items: list[tuple[int, Node]], settings: Node | None) -> Node:
    doc = Node("cpacs")
    reqs = doc.add("flights").add("requests")
    for uid, item in items:
        item.attrs["uID"] = str(uid)
        reqs.append(item)
    if settings is not None:
        doc.append(settings)
    return doc


def request_items(doc: Node) -> list[Node]:
    return doc.path("flights", "requests").find_all("request")


def response_doc(results: list[Node]) -> Node:
    doc = Node("cpacs")
    res = doc.add("flights").add("results")
    for r in results:
        res.append(r)
    return doc


def response_items(doc: Node) -> dict[str, Node]:
    return {r.uid: r for r in doc.path("flights", "results").find_all("result")}


def _result(uid: str | None) -> Node:
    return Node("result", attrs={"uID": uid} if uid is not None else None)


def _error_result(uid: str | None, exc: PlanningError) -> Node:
    node = _result(uid)
    node.add("status", "error")
    node.add("reason", exc.reason)
    return node


def planning_error(result: Node) -> PlanningError | None:
    if result.get("status") == "ok":
        return None
    reason = result.get("reason")
    return PLANNING_ERRORS.get(reason, PlanningError)(reason)


def _handle_each(doc: Node, fn) -> Node:
    results = []
    for item in request_items(doc):
        try:
            node = fn(item, doc.find("settings"))
            node.attrs["uID"] = item.uid
        except PlanningError as exc:
            node = _error_result(item.uid, exc)
        results.append(node)
    return response_doc(results)


# -- shared pieces ------------------------------------------------------------------


def vehicle_type_node(vt: VehicleType) -> Node:
    n = Node("vehicleType", attrs={"uID": vt.name})
    n.add("paxCapacity", vt.pax_capacity)
    n.add("cruiseSpeed", float(vt.cruise_speed), unit="km/h")
    n.add("batteryCapacity", float(vt.battery_capacity), unit="kWh")
    n.add("cruiseEnergyRate", float(vt.cruise_energy_rate), unit="kWh/km")
    n.add("hoverEnergyPerCycle", float(vt.hover_energy_per_cycle), unit="kWh")
    n.add("minReserve", float(vt.min_reserve), unit="kWh")
    n.add("chargeRate", float(vt.charge_rate), unit="kW")
    return n


def parse_vehicle_type(n: Node) -> VehicleType:
    return VehicleType(
        name=n.uid,
        pax_capacity=n.get("paxCapacity"),
        cruise_speed=n.get("cruiseSpeed"),
        battery_capacity=n.get("batteryCapacity"),
        cruise_energy_rate=n.get("cruiseEnergyRate"),
        hover_energy_per_cycle=n.get("hoverEnergyPerCycle"),
        min_reserve=n.get("minReserve"),
        charge_rate=n.get("chargeRate"),
    )


def slot_node(slot: Slot, name: str = "slot") -> Node:
    n = Node(name, attrs={"uID": slot.id} if name == "slot" else None)
    n.add("fato", slot.fato_index)
    n.add("kind", slot.kind.value)
    n.add("start", slot.start, unit="s")
    n.add("end", slot.end, unit="s")
    return n


def parse_slot(n: Node, vertiport: int) -> Slot:
    sid = n.uid
    return Slot(
        vertiport,
        n.get("fato"),
        SlotKind(n.get("kind")),
        n.get("start"),
        n.get("end"),
        SlotState.COMMITTED if sid is not None else SlotState.OFFERED,
        int(sid) if sid is not None else None,
    )


def trajectory_node(traj: Trajectory4D, with_uid: bool = True) -> Node:
    n = Node("trajectory", attrs={"uID": traj.id} if with_uid else None)
    n.add("nodes", list(traj.nodes))
    n.add("waypointsNorth", [w[0] for w in traj.waypoints], unit="deg")
    n.add("waypointsEast", [w[1] for w in traj.waypoints], unit="deg")
    n.add("times", [float(t) for t in traj.times], unit="s")
    n.add("distance", float(traj.total_distance), unit="km")
    return n


def parse_trajectory(n: Node, tid: int | None = None) -> Trajectory4D:
    if tid is None and n.uid is not None:
        tid = int(n.uid)
    return Trajectory4D(
        tid,
        tuple(n.get("nodes")),
        tuple(zip(n.get("waypointsNorth"), n.get("waypointsEast"))),
        tuple(float(t) for t in n.get("times")),
        n.get("distance"),
    )


# -- settings -------------------------------------------------------------------------


def fleet_settings(cfg: ScenarioConfig) -> Node:
    s = Node("settings")
    types = s.add("vehicleTypes")
    for vt in cfg.vehicle_types:
        types.append(vehicle_type_node(vt))
    return s


def vt_settings(cfg: ScenarioConfig) -> Node:
    s = Node("settings")
    a = s.add("airspace")
    a.add("mode", cfg.airspace.mode.value)
    a.add("separation", float(cfg.airspace.separation_km), unit="km")
    a.add("sampleStep", cfg.airspace.sample_step, unit="s")
    a.add("kPaths", cfg.airspace.k_paths)
    a.add("delayStep", cfg.airspace.delay_step, unit="s")
    a.add("maxDelay", cfg.airspace.max_delay, unit="s")
    a.add("latticeSpacing", float(cfg.airspace.lattice_spacing_km), unit="km")
    a.add("latticeMargin", float(cfg.airspace.lattice_margin_km), unit="km")
    v = s.add("vertidrome")
    v.add("slotDuration", cfg.vertidrome.slot_duration, unit="s")
    v.add("buffer", cfg.vertidrome.interdependence_buffer, unit="s")
    v.add("horizon", cfg.vertidrome.horizon, unit="s")
    v.add("granularity", cfg.vertidrome.granularity, unit="s")
    net = s.add("network")
    for vp in cfg.vertiports:
        n = net.add("vertiport", uid=vp.id)
        n.add("positionNorth", float(vp.lat), unit="deg")
        n.add("positionEast", float(vp.lon), unit="deg")
    return s


def mode_choice_settings(cfg: ScenarioConfig) -> Node:
    s = Node("settings")
    m = s.add("modeChoice")
    mc: ModeChoiceConfig = cfg.mode_choice
    m.add("betaTime", float(mc.beta_time), unit="1/s")
    m.add("betaCost", float(mc.beta_cost), unit="1/EUR")
    m.add("ascUam", float(mc.asc_uam))
    m.add("carSpeed", float(mc.car_speed), unit="km/h")
    m.add("carCostRate", float(mc.car_cost_rate), unit="EUR/km")
    m.add("detourFactor", float(mc.detour_factor))
    m.add("groundCostRate", float(mc.ground_cost_rate), unit="EUR/km")
    m.add("seed", cfg.seed)
    return s


def economics_settings(cfg: ScenarioConfig) -> Node:
    s = Node("settings")
    e = s.add("economics")
    e.add("targetMargin", float(cfg.economics.target_margin))
    e.add("damping", float(cfg.economics.damping))
    return s


# -- fleet stage ------------------------------------------------------------------------


def fleet_item(
    query: AllocationQuery,
    vehicles: list[VehicleState],
    routes: dict[tuple[int, int], float],
    turnaround: dict[int, int],
) -> Node:
    n = Node("request")
    n.add("origin", query.origin)
    n.add("destination", query.destination)
    n.add("earliestDeparture", query.earliest_departure, unit="s")
    n.add("now", query.now, unit="s")
    n.add("estimatedPax", query.estimated_pax)
    vs = n.add("vehicles")
    for v in vehicles:
        x = vs.add("vehicle", uid=v.id)
        x.add("type", v.vtype)
        x.add("location", v.location)
        x.add("freeFrom", v.free_from, unit="s")
        x.add("energyAvailable", float(v.energy_available), unit="kWh")
        x.add("reserved", float(v.reserved), unit="kWh")
    rs = n.add("routes")
    for i, ((a, b), km) in enumerate(sorted(routes.items())):
        r = rs.add("route", uid=i)
        r.add("from", a)
        r.add("to", b)
        r.add("distance", float(km), unit="km")
    tv = n.add("vertiports")
    for vp, t in sorted(turnaround.items()):
        tv.add("vertiport", uid=vp).add("turnaround", t, unit="s")
    return n


def _fleet_one(item: Node, settings: Node) -> Node:
    types = {t.name: t for t in map(parse_vehicle_type, settings.child("vehicleTypes").find_all("vehicleType"))}
    query = AllocationQuery(
        item.get("origin"), item.get("destination"), item.get("earliestDeparture"),
        item.get("estimatedPax"), item.get("now"),
    )
    vehicles = [
        VehicleState(int(v.uid), v.get("type"), v.get("location"), v.get("freeFrom"),
                     v.get("energyAvailable"), v.get("reserved"))
        for v in item.child("vehicles").find_all("vehicle")
    ]
    vehicles.sort(key=lambda v: v.id)
    routes = {(r.get("from"), r.get("to")): r.get("distance") for r in item.child("routes").find_all("route")}
    turnaround = {int(v.uid): v.get("turnaround") for v in item.child("vertiports").find_all("vertiport")}

    def route_km(a: int, b: int) -> float:
        try:
            return routes[(a, b)]
        except KeyError:
            raise SchemaError(f"route {a}->{b} missing from fleet request") from None

    alloc = allocate_vehicle(query, vehicles, types, route_km, turnaround)
    out = Node("result")
    out.add("status", "ok")
    out.add("vehicle", alloc.vehicle)
    out.add("achievableDeparture", alloc.achievable_departure, unit="s")
    out.add("requiredEnergy", float(alloc.required_energy), unit="kWh")
    if alloc.deadhead is not None:
        d = out.add("deadhead")
        d.add("origin", alloc.deadhead.origin)
        d.add("destination", alloc.deadhead.destination)
        d.add("earliestDeparture", alloc.deadhead.earliest_departure, unit="s")
        d.add("distance", float(alloc.deadhead.distance_km), unit="km")
        d.add("energy", float(alloc.deadhead.energy), unit="kWh")
    return out


def fleet_handler(doc: Node) -> Node:
    return _handle_each(doc, _fleet_one)


# -- vertiport and trajectory stage ---------------------------------------------------


def calendar_node(cal: SlotCalendar, slots: list[Slot], name: str = "") -> Node:
    n = Node("vertiport", attrs={"uID": cal.vertiport})
    n.add("vertiportID", cal.vertiport)
    if name:
        n.add("name", name)
    n.add("fatoCount", cal.fato_count)
    n.add("layout", cal.layout.value)
    n.add("departureTimes", [s.start for s in slots if s.kind is SlotKind.TAKE_OFF], unit="s")
    n.add("arrivalTimes", [s.start for s in slots if s.kind is SlotKind.LANDING], unit="s")
    sn = n.add("slots")
    for s in slots:
        sn.append(slot_node(s))
    return n


def vt_item(
    origin: int,
    destination: int,
    earliest: int,
    cruise_speed: float,
    calendars: list[Node],
    trajectories: list[Trajectory4D],
) -> Node:
    n = Node("request")
    n.add("origin", origin)
    n.add("destination", destination)
    n.add("earliestDeparture", earliest, unit="s")
    n.add("cruiseSpeed", float(cruise_speed), unit="km/h")
    vps = n.add("vertiports")
    for c in calendars:
        vps.append(c)
    ts = n.add("trajectories")
    for t in trajectories:
        ts.append(trajectory_node(t))
    return n


@dataclass(frozen=True)
class VtSettings:
    mode: AirspaceMode
    separation: float
    sample_step: int
    k_paths: int
    delay_step: int
    max_delay: int
    slot_duration: int
    buffer: int
    horizon: int
    granularity: int
    network: RouteNetwork


_NETWORKS: OrderedDict[str, RouteNetwork] = OrderedDict()
_NETWORKS_LOCK = threading.Lock()


def _network(settings: Node, mode: AirspaceMode) -> RouteNetwork:
    net_node = settings.child("network")
    a = settings.child("airspace")
    key_doc = Node("key", children=[net_node, a])
    key = hashlib.sha256(encode(key_doc)).hexdigest()
    with _NETWORKS_LOCK:
        net = _NETWORKS.get(key)
        if net is None:
            positions = {
                int(v.uid): (v.get("positionNorth"), v.get("positionEast")) for v in net_node.find_all("vertiport")
            }
            net = build_network(mode, positions, a.get("latticeSpacing"), a.get("latticeMargin"))
            _NETWORKS[key] = net
            while len(_NETWORKS) > 4:
                _NETWORKS.popitem(last=False)
        return net


def parse_vt_settings(settings: Node) -> VtSettings:
    a = settings.child("airspace")
    v = settings.child("vertidrome")
    mode = AirspaceMode(a.get("mode"))
    return VtSettings(
        mode, a.get("separation"), a.get("sampleStep"), a.get("kPaths"), a.get("delayStep"),
        a.get("maxDelay"), v.get("slotDuration"), v.get("buffer"), v.get("horizon"),
        v.get("granularity"), _network(settings, mode),
    )


def _calendar(n: Node, st: VtSettings) -> SlotCalendar:
    cal = SlotCalendar(int(n.uid), n.get("fatoCount"), Layout(n.get("layout")), st.slot_duration, st.buffer)
    for s in sorted((parse_slot(x, cal.vertiport) for x in n.child("slots").find_all("slot")),
                    key=lambda s: (s.fato_index, s.start)):
        cal.committed[s.fato_index].append(s)
    return cal


class _Speed:
    """Minimal stand-in for a vehicle type where only the cruise speed matters."""

    def __init__(self, speed: float):
        self.cruise_speed = speed


def plan_slots_and_trajectory(
    origin: int,
    destination: int,
    earliest: int,
    speed: float,
    cal_o: SlotCalendar,
    cal_d: SlotCalendar,
    active: list[Trajectory4D],
    st: VtSettings,
) -> tuple[Slot, Slot, Trajectory4D]:
    """Earliest take-off slot, deconflicted trajectory and matching landing slot."""
    headway = headway_seconds(st.separation, speed)
    vt = _Speed(speed)
    t = earliest
    saw_slot_failure = False
    while t <= earliest + st.horizon:
        takeoff = next_free_slot(origin, SlotKind.TAKE_OFF, t, cal_o, earliest + st.horizon - t)
        resolved = []
        for cand in propose_trajectories(origin, destination, takeoff.start, st.network, vt, st.k_paths):
            try:
                traj = resolve_by_delay(cand, active, st.max_delay, st.delay_step, st.separation, headway,
                                        st.mode, st.sample_step)
            except TrajectoryCongested:
                continue
            slot = takeoff
            if traj.departure != takeoff.start:
                slot = cal_o.offer_at(SlotKind.TAKE_OFF, int(traj.departure))
                if slot is None:
                    saw_slot_failure = True
                    continue
            resolved.append((traj, slot))
        if resolved:
            try:
                traj, landing = match_arrival_slot([r[0] for r in resolved], cal_d, st.granularity)
                slot = next(s for tr, s in resolved if tr.id == traj.id)
                return slot, landing, traj
            except SlotUnavailable:
                saw_slot_failure = True
        t = takeoff.start + st.slot_duration
    if saw_slot_failure:
        raise SlotUnavailable(f"no slot pair {origin}->{destination} within the horizon")
    raise TrajectoryCongested(f"airspace congested {origin}->{destination} within the horizon")


def _vt_one(item: Node, settings: Node) -> Node:
    st = parse_vt_settings(settings)
    cals = {int(v.uid): _calendar(v, st) for v in item.child("vertiports").find_all("vertiport")}
    active = sorted((parse_trajectory(t) for t in item.child("trajectories").find_all("trajectory")),
                    key=lambda t: t.id)
    o, d = item.get("origin"), item.get("destination")
    takeoff, landing, traj = plan_slots_and_trajectory(
        o, d, item.get("earliestDeparture"), item.get("cruiseSpeed"), cals[o], cals[d], active, st
    )
    out = Node("result")
    out.add("status", "ok")
    out.append(slot_node(takeoff, "takeoffSlot"))
    out.append(slot_node(landing, "landingSlot"))
    out.append(trajectory_node(traj, with_uid=False))
    return out


def vt_handler(doc: Node) -> Node:
    return _handle_each(doc, _vt_one)


# -- mode choice stage ---------------------------------------------------------------


def mode_choice_item(request_id: int, trip: Trip, plan: AccessPlan, departure: int, arrival: int, fare: float) -> Node:
    n = Node("request")
    n.add("requestID", request_id)
    n.add("departure", departure, unit="s")
    n.add("arrival", arrival, unit="s")
    n.add("earliestArrival", plan.earliest_vertiport_arrival, unit="s")
    n.add("accessTime", plan.access_time, unit="s")
    n.add("egressTime", plan.egress_time, unit="s")
    n.add("accessKm", float(plan.access_km), unit="km")
    n.add("egressKm", float(plan.egress_km), unit="km")
    n.add("fare", float(fare), unit="EUR")
    n.add("originVertiport", plan.origin_vertiport)
    n.add("destinationVertiport", plan.destination_vertiport)
    n.add("journeyStart", trip.journey_start, unit="s")
    n.add("tripOrigin", [float(x) for x in trip.origin], unit="deg")
    n.add("tripDestination", [float(x) for x in trip.destination], unit="deg")
    return n


def _mode_choice_one(item: Node, settings: Node) -> Node:
    m = settings.child("modeChoice")
    rid = item.get("requestID")
    trip = Trip(rid, tuple(item.get("tripOrigin")), tuple(item.get("tripDestination")), item.get("journeyStart"))
    plan = AccessPlan(
        rid, item.get("originVertiport"), item.get("destinationVertiport"), item.get("accessKm"),
        item.get("egressKm"), item.get("accessTime"), item.get("egressTime"), item.get("earliestArrival"),
    )
    dep, arr = item.get("departure"), item.get("arrival")
    uam = complete_uam_chain(dep, arr - dep, plan, item.get("fare"), m.get("groundCostRate"))
    car = build_car_alternative(trip, m.get("carSpeed"), m.get("carCostRate"), m.get("detourFactor"))
    probs = logit_probabilities([uam, car], LogitParams(m.get("betaTime"), m.get("betaCost"), m.get("ascUam")))
    choice = draw_choice(probs, m.get("seed"), rid)
    out = Node("result")
    out.add("status", "ok")
    out.add("probabilities", probs)
    out.add("choice", choice)
    out.add("mode", (uam, car)[choice].mode.value)
    out.add("uamTime", float(uam.total_time), unit="s")
    out.add("uamCost", float(uam.total_cost), unit="EUR")
    out.add("carTime", float(car.total_time), unit="s")
    out.add("carCost", float(car.total_cost), unit="EUR")
    return out


def mode_choice_handler(doc: Node) -> Node:
    return _handle_each(doc, _mode_choice_one)


# -- economics stage ---------------------------------------------------------------------


_LEDGER_TAGS = {
    "revenue": "revenue", "operating_cost": "operatingCost", "fleet_size": "fleetSize",
    "deadhead_share": "deadheadShare", "total_energy": "totalEnergy", "load_factor": "loadFactor",
    "flights": "flights", "deadheads": "deadheads", "passengers": "passengers", "revenue_km": "revenueKm",
}


def ledger_node(ledger: RunLedger) -> Node:
    n = Node("ledger")
    for f in RunLedger.FIELDS:
        v = getattr(ledger, f)
        n.add(_LEDGER_TAGS[f], v if isinstance(v, int) else float(v))
    return n


def parse_ledger(n: Node) -> RunLedger:
    return RunLedger(**{f: n.get(_LEDGER_TAGS[f]) for f in RunLedger.FIELDS})


def price_node(params: PriceParams) -> Node:
    n = Node("priceParams")
    n.add("baseFare", float(params.base_fare), unit="EUR")
    n.add("pricePerKm", float(params.price_per_km), unit="EUR/km")
    return n


def parse_price(n: Node) -> PriceParams:
    return PriceParams(n.get("baseFare"), n.get("pricePerKm"))


def economics_item(ledger: RunLedger, params: PriceParams) -> Node:
    n = Node("request")
    n.append(ledger_node(ledger))
    n.append(price_node(params))
    return n


def _economics_one(item: Node, settings: Node) -> Node:
    e = settings.child("economics")
    new = update_price_params(
        parse_ledger(item.child("ledger")), parse_price(item.child("priceParams")),
        e.get("targetMargin"), e.get("damping"),
    )
    out = Node("result")
    out.add("status", "ok")
    out.append(price_node(new))
    return out


def economics_handler(doc: Node) -> Node:
    return _handle_each(doc, _economics_one)


HANDLERS = {
    FLEET: fleet_handler,
    VERTIPORT_TRAJECTORY: vt_handler,
    MODE_CHOICE: mode_choice_handler,
    ECONOMICS: economics_handler,
}

SETTINGS = {
    FLEET: fleet_settings,
    VERTIPORT_TRAJECTORY: vt_settings,
    MODE_CHOICE: mode_choice_settings,
    ECONOMICS: economics_settings,
}
