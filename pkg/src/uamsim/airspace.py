"""Strategic deconfliction of UAM missions.

Slot-based management flies a fixed corridor lattice; trajectory-based
management flies direct great-circle tracks. Either way a mission gets a 4D
trajectory (waypoints with passage times), is checked against all active or
planned trajectories, and conflicts are removed by holding the departure.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .config import AirspaceMode, VehicleType
from .errors import NoTrajectoryAvailable, SlotUnavailable, TrajectoryCongested
from .geo import EARTH_RADIUS_KM, great_circle_km, km_per_degree, travel_seconds
from .vertidrome import Slot, SlotCalendar, SlotKind

# lattice node ids are offset so they never collide with vertiport ids
LATTICE_BASE = 1_000_000


@dataclass(frozen=True)
class Trajectory4D:
    id: int | None
    nodes: tuple[int, ...]
    waypoints: tuple[tuple[float, float], ...]
    times: tuple[float, ...]  # passage time at each waypoint
    total_distance: float
    mission: int | None = None

    @property
    def departure(self) -> float:
        return self.times[0]

    @property
    def arrival(self) -> float:
        return self.times[-1]

    def shifted(self, delay: float) -> Trajectory4D:
        if delay == 0:
            return self
        return dataclasses.replace(self, times=tuple(t + delay for t in self.times))

    def edges(self):
        for i in range(len(self.nodes) - 1):
            yield (self.nodes[i], self.nodes[i + 1]), self.times[i]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "mission": self.mission,
            "nodes": list(self.nodes),
            "waypoints": [list(w) for w in self.waypoints],
            "times": list(self.times),
            "total_distance": self.total_distance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Trajectory4D:
        return cls(
            id=d["id"],
            nodes=tuple(d["nodes"]),
            waypoints=tuple(tuple(w) for w in d["waypoints"]),
            times=tuple(d["times"]),
            total_distance=d["total_distance"],
            mission=d.get("mission"),
        )


@dataclass(frozen=True)
class Conflict:
    blocking: int | None
    time: float


@dataclass
class RouteNetwork:
    mode: AirspaceMode
    positions: dict[int, tuple[float, float]]
    graph: nx.DiGraph = field(default_factory=nx.DiGraph)
    _paths: dict = field(default_factory=dict, repr=False)

    @classmethod
    def free_route(cls, vertiports: dict[int, tuple[float, float]]) -> RouteNetwork:
        return cls(AirspaceMode.TRAJECTORY_BASED, dict(vertiports))

    @classmethod
    def from_edges(
        cls,
        vertiports: dict[int, tuple[float, float]],
        waypoints: dict[int, tuple[float, float]],
        edges: list[tuple[int, int]],
        bidirectional: bool = True,
    ) -> RouteNetwork:
        positions = {**vertiports, **waypoints}
        g = nx.DiGraph()
        g.add_nodes_from(sorted(positions))
        for a, b in edges:
            km = great_circle_km(positions[a], positions[b])
            g.add_edge(a, b, km=km)
            if bidirectional:
                g.add_edge(b, a, km=km)
        return cls(AirspaceMode.SLOT_BASED, positions, g)

    @classmethod
    def lattice(
        cls,
        vertiports: dict[int, tuple[float, float]],
        spacing_km: float = 2.0,
        margin_km: float = 2.0,
    ) -> RouteNetwork:
        """Rectilinear corridor grid over the vertiport bounding box.

        Each vertiport joins the grid through a single connector stub to its
        nearest lattice node (lowest node id on ties).
        """
        lats = [p[0] for p in vertiports.values()]
        lons = [p[1] for p in vertiports.values()]
        mid_lat = (min(lats) + max(lats)) / 2
        km_lat, km_lon = km_per_degree(mid_lat)
        lat0 = min(lats) - margin_km / km_lat
        lon0 = min(lons) - margin_km / km_lon
        ny = int(math.ceil((max(lats) - min(lats) + 2 * margin_km / km_lat) * km_lat / spacing_km)) + 1
        nx_ = int(math.ceil((max(lons) - min(lons) + 2 * margin_km / km_lon) * km_lon / spacing_km)) + 1
        dlat = spacing_km / km_lat
        dlon = spacing_km / km_lon

        waypoints = {}
        for iy in range(ny):
            for ix in range(nx_):
                waypoints[LATTICE_BASE + iy * nx_ + ix] = (lat0 + iy * dlat, lon0 + ix * dlon)
        edges = []
        for iy in range(ny):
            for ix in range(nx_):
                n = LATTICE_BASE + iy * nx_ + ix
                if ix + 1 < nx_:
                    edges.append((n, n + 1))
                if iy + 1 < ny:
                    edges.append((n, n + nx_))
        for vid in sorted(vertiports):
            pos = vertiports[vid]
            iy = min(ny - 1, max(0, round((pos[0] - lat0) / dlat)))
            ix = min(nx_ - 1, max(0, round((pos[1] - lon0) / dlon)))
            # check the rounding neighbourhood exhaustively for the true nearest node
            best = min(
                (
                    (great_circle_km(pos, waypoints[LATTICE_BASE + y * nx_ + x]), LATTICE_BASE + y * nx_ + x)
                    for y in range(max(0, iy - 1), min(ny, iy + 2))
                    for x in range(max(0, ix - 1), min(nx_, ix + 2))
                )
            )
            edges.append((vid, best[1]))
        return cls.from_edges(vertiports, waypoints, edges)

    def paths(self, origin: int, destination: int, k: int) -> list[list[int]]:
        key = (origin, destination, k)
        if key not in self._paths:
            if self.mode is AirspaceMode.TRAJECTORY_BASED:
                self._paths[key] = [[origin, destination]]
            else:
                try:
                    gen = nx.shortest_simple_paths(self.graph, origin, destination, weight="km")
                    self._paths[key] = list(itertools.islice(gen, k))
                except (nx.NetworkXNoPath, nx.NodeNotFound):
                    self._paths[key] = []
        return self._paths[key]

    def route_km(self, origin: int, destination: int) -> float:
        """Length of the shortest route the airspace allows between two vertiports."""
        paths = self.paths(origin, destination, 1)
        if not paths:
            raise NoTrajectoryAvailable(f"vertiports {origin} and {destination} are not connected")
        return self.path_km(paths[0])

    def path_km(self, path: list[int]) -> float:
        return sum(great_circle_km(self.positions[a], self.positions[b]) for a, b in zip(path, path[1:]))


def build_network(
    mode: AirspaceMode, vertiports: dict[int, tuple[float, float]], spacing_km: float, margin_km: float
) -> RouteNetwork:
    if mode is AirspaceMode.TRAJECTORY_BASED:
        return RouteNetwork.free_route(vertiports)
    return RouteNetwork.lattice(vertiports, spacing_km, margin_km)


def make_trajectory(
    path: list[int], network: RouteNetwork, departure: float, speed_kmh: float, tid: int | None = None
) -> Trajectory4D:
    pts = tuple(network.positions[n] for n in path)
    times = [float(departure)]
    total = 0.0
    for a, b in zip(pts, pts[1:]):
        seg = great_circle_km(a, b)
        total += seg
        times.append(times[-1] + travel_seconds(seg, speed_kmh))
    return Trajectory4D(tid, tuple(path), pts, tuple(times), total)


def propose_trajectories(
    origin: int,
    destination: int,
    departure: float,
    network: RouteNetwork,
    vtype: VehicleType,
    k: int = 3,
) -> list[Trajectory4D]:
    if origin == destination:
        raise ValueError("origin and destination must differ")
    paths = network.paths(origin, destination, k if network.mode is AirspaceMode.SLOT_BASED else 1)
    if not paths:
        raise NoTrajectoryAvailable(f"no corridor path {origin}->{destination}")
    trajs = [make_trajectory(p, network, departure, vtype.cruise_speed, tid=i) for i, p in enumerate(paths)]
    return sorted(trajs, key=lambda t: (t.arrival, t.id))


# -- conflict detection --------------------------------------------------------


def _positions_at(traj: Trajectory4D, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    times = np.asarray(traj.times)
    lat = np.interp(ts, times, [w[0] for w in traj.waypoints])
    lon = np.interp(ts, times, [w[1] for w in traj.waypoints])
    return lat, lon


def _haversine(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def sample_times(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step))
    ts = lo + step * np.arange(n + 1)
    if ts[-1] < hi:
        ts = np.append(ts, hi)
    return ts


def first_sampled_conflict(a: Trajectory4D, b: Trajectory4D, separation_km: float, step: float) -> float | None:
    lo = max(a.departure, b.departure)
    hi = min(a.arrival, b.arrival)
    if lo > hi:
        return None
    ts = sample_times(lo, hi, step)
    la, oa = _positions_at(a, ts)
    lb, ob = _positions_at(b, ts)
    close = np.nonzero(_haversine(la, oa, lb, ob) < separation_km)[0]
    return float(ts[close[0]]) if close.size else None


def first_edge_conflict(a: Trajectory4D, b: Trajectory4D, headway_s: float) -> float | None:
    entries = {}
    for edge, t in b.edges():
        entries.setdefault(edge, []).append(t)
    hits = [
        min(t, tb) for edge, t in a.edges() for tb in entries.get(edge, ()) if abs(t - tb) < headway_s
    ]
    return min(hits) if hits else None


def detect_conflicts(
    candidate: Trajectory4D,
    active,
    separation_km: float,
    time_window: float,
    mode: AirspaceMode,
    sample_step: float = 10.0,
) -> list[Conflict]:
    """Conflicts between ``candidate`` and each trajectory in ``active``.

    Slot-based: two trajectories conflict when they enter the same directed
    corridor edge less than ``time_window`` seconds apart. Trajectory-based:
    positions sampled every ``sample_step`` seconds over the common airborne
    interval come closer than ``separation_km``.
    """
    if separation_km <= 0:
        raise ValueError("separation must be positive")
    out = []
    for other in active:
        # cheap time-span rejection first
        if other.arrival + time_window < candidate.departure or candidate.arrival + time_window < other.departure:
            continue
        if mode is AirspaceMode.SLOT_BASED:
            t = first_edge_conflict(candidate, other, time_window)
        else:
            t = first_sampled_conflict(candidate, other, separation_km, sample_step)
        if t is not None:
            out.append(Conflict(other.id, t))
    return sorted(out, key=lambda c: (c.time, -1 if c.blocking is None else c.blocking))


def resolve_by_delay(
    candidate: Trajectory4D,
    active,
    max_delay: int,
    step: int,
    separation_km: float,
    time_window: float,
    mode: AirspaceMode,
    sample_step: float = 10.0,
) -> Trajectory4D:
    if step <= 0:
        raise ValueError("delay step must be positive")
    active = list(active)
    delay = 0
    while delay <= max_delay:
        shifted = candidate.shifted(delay)
        if not detect_conflicts(shifted, active, separation_km, time_window, mode, sample_step):
            return shifted
        delay += step
    raise TrajectoryCongested(f"no conflict-free departure within {max_delay} s")


def ceil_to(t: float, granularity: int) -> int:
    return int(math.ceil(t / granularity - 1e-12) * granularity)


def match_arrival_slot(
    candidates: list[Trajectory4D], destination_calendar: SlotCalendar, granularity: int = 30
) -> tuple[Trajectory4D, Slot]:
    """Pair a trajectory with the landing slot at its (rounded-up) arrival time."""
    if not candidates:
        raise ValueError("need at least one candidate")
    best = None
    for traj in candidates:
        start = ceil_to(traj.arrival, granularity)
        slot = destination_calendar.offer_at(SlotKind.LANDING, start)
        if slot is None:
            continue
        key = (slot.start, -1 if traj.id is None else traj.id)
        if best is None or key < best[0]:
            best = (key, traj, slot)
    if best is None:
        raise SlotUnavailable(f"no landing slot at vertiport {destination_calendar.vertiport} matches any trajectory")
    return best[1], best[2]


def headway_seconds(separation_km: float, speed_kmh: float) -> float:
    return travel_seconds(separation_km, speed_kmh)


def audit_trajectories(
    trajectories: list[Trajectory4D],
    mode: AirspaceMode,
    separation_km: float,
    time_window: float,
    sample_step: float = 10.0,
) -> list[tuple[int, int, float]]:
    """Exhaustive pairwise re-check; returns (id_a, id_b, time) per violation."""
    bad = []
    for i, a in enumerate(trajectories):
        for b in trajectories[i + 1 :]:
            for c in detect_conflicts(a, [b], separation_km, time_window, mode, sample_step):
                bad.append((a.id, b.id, c.time))
    return bad
