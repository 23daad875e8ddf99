"""Trip demand: dataset ingestion, synthetic generation, vertiport access
planning and timed request emission."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import SyntheticDemand, VertiportSpec
from .errors import IngestError
from .geo import great_circle_km, km_per_degree

log = logging.getLogger(__name__)

CSV_COLUMNS = ("trip_id", "origin_lat", "origin_lon", "dest_lat", "dest_lon", "start_time_s")


@dataclass(frozen=True)
class Trip:
    id: int
    origin: tuple[float, float]
    destination: tuple[float, float]
    journey_start: int


@dataclass(frozen=True)
class AccessPlan:
    trip: int
    origin_vertiport: int
    destination_vertiport: int
    access_km: float
    egress_km: float
    access_time: int
    egress_time: int
    earliest_vertiport_arrival: int


@dataclass(frozen=True)
class TravelRequest:
    id: int
    trip: Trip
    plan: AccessPlan
    emission_time: int

    @property
    def origin_vertiport(self) -> int:
        return self.plan.origin_vertiport

    @property
    def destination_vertiport(self) -> int:
        return self.plan.destination_vertiport


def _parse_row(row: dict, line: int) -> Trip:
    try:
        tid = int(row["trip_id"])
        o = (float(row["origin_lat"]), float(row["origin_lon"]))
        d = (float(row["dest_lat"]), float(row["dest_lon"]))
        start = int(float(row["start_time_s"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"malformed row: {exc}", line) from None
    for lat, lon in (o, d):
        if not (-90 <= lat <= 90 and -180 <= lon <= 180) or not all(map(math.isfinite, (lat, lon))):
            raise IngestError(f"trip {tid}: coordinate ({lat}, {lon}) out of range", line)
    if o == d:
        raise IngestError(f"trip {tid}: origin equals destination", line)
    return Trip(tid, o, d, start)


def load_trips(source, horizon: tuple[int, int] | None = None) -> list[Trip]:
    """Read a trip CSV (path or text stream), sorted by journey start then id."""
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise IngestError(f"cannot read {source}: {exc}") from None
        stream = io.StringIO(text)
    else:
        stream = source
    try:
        reader = csv.DictReader(stream)
        header = reader.fieldnames
    except csv.Error as exc:
        raise IngestError(f"unparseable trip file: {exc}") from None
    if header is None:
        warnings.warn("empty trip dataset", stacklevel=2)
        return []
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise IngestError(f"missing columns {missing}", 1)

    trips, errors, seen = [], [], set()
    try:
        for line, row in enumerate(reader, start=2):
            try:
                trip = _parse_row(row, line)
                if trip.id in seen:
                    raise IngestError(f"duplicate trip id {trip.id}", line)
                if horizon and not horizon[0] <= trip.journey_start < horizon[1]:
                    raise IngestError(f"trip {trip.id}: start {trip.journey_start} outside horizon", line)
            except IngestError as exc:
                errors.append(exc)
                continue
            seen.add(trip.id)
            trips.append(trip)
    except csv.Error as exc:
        raise IngestError(f"unparseable trip file: {exc}", reader.line_num) from None
    if errors:
        detail = "; ".join(str(e) for e in errors[:10])
        raise IngestError(f"{len(errors)} malformed row(s): {detail}", errors[0].line)
    if not trips:
        warnings.warn("empty trip dataset", stacklevel=2)
    return sorted(trips, key=lambda t: (t.journey_start, t.id))


def write_trips(trips: Iterable[Trip], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for t in trips:
            w.writerow([t.id, repr(t.origin[0]), repr(t.origin[1]), repr(t.destination[0]), repr(t.destination[1]), t.journey_start])


def nearest_vertiport(point: tuple[float, float], vertiports: list[VertiportSpec]) -> tuple[VertiportSpec, float]:
    best = min(vertiports, key=lambda v: (great_circle_km(point, v.position), v.id))
    return best, great_circle_km(point, best.position)


def build_access_plan(trip: Trip, vertiports: list[VertiportSpec], ground_speed: float) -> AccessPlan:
    if not vertiports:
        raise ValueError("need at least one vertiport")
    o, o_km = nearest_vertiport(trip.origin, vertiports)
    d, d_km = nearest_vertiport(trip.destination, vertiports)
    access = math.ceil(o_km / ground_speed * 3600)
    egress = math.ceil(d_km / ground_speed * 3600)
    return AccessPlan(trip.id, o.id, d.id, o_km, d_km, access, egress, trip.journey_start + access)


def emit_requests(
    trips: list[Trip], plans: dict[int, AccessPlan], lead_time: int = 1800, start: int = 0
) -> list[TravelRequest]:
    if lead_time < 0:
        raise ValueError("lead_time must be >= 0")
    reqs = [
        TravelRequest(t.id, t, plans[t.id], max(start, plans[t.id].earliest_vertiport_arrival - lead_time))
        for t in trips
    ]
    return sorted(reqs, key=lambda r: (r.emission_time, r.id))


# -- synthetic demand ----------------------------------------------------------


def default_clusters(vertiports: list[VertiportSpec]) -> tuple[tuple[float, float, float, float], ...]:
    # demand concentrates around vertiport catchments, denser toward the centre
    lat_c = sum(v.lat for v in vertiports) / len(vertiports)
    lon_c = sum(v.lon for v in vertiports) / len(vertiports)
    out = []
    for v in sorted(vertiports, key=lambda v: v.id):
        r = great_circle_km(v.position, (lat_c, lon_c))
        out.append((v.lat, v.lon, 3.0, 1.0 / (1.0 + r / 8.0)))
    return tuple(out)


def generate_trips(
    spec: SyntheticDemand,
    vertiports: list[VertiportSpec],
    start: int,
    duration: int,
    seed: int,
) -> list[Trip]:
    """Spatially clustered trips with a two-peak departure-time profile."""
    rng = np.random.default_rng([seed, 0xD3A4D])
    clusters = spec.clusters or default_clusters(vertiports)
    weights = np.array([c[3] for c in clusters], dtype=float)
    weights /= weights.sum()
    peak_w = np.array([p[2] for p in spec.peaks], dtype=float)
    peak_w /= peak_w.sum()

    def point(ci: int) -> tuple[float, float]:
        lat, lon, spread = clusters[ci][:3]
        km_lat, km_lon = km_per_degree(lat)
        dy, dx = rng.normal(0.0, spread, size=2)
        return (round(float(lat + dy / km_lat), 6), round(float(lon + dx / km_lon), 6))

    trips = []
    tid = 0
    while len(trips) < spec.count:
        ci, cj = rng.choice(len(clusters), size=2, replace=False, p=weights)
        o, d = point(int(ci)), point(int(cj))
        if great_circle_km(o, d) < spec.min_trip_km:
            continue
        pk = int(rng.choice(len(spec.peaks), p=peak_w))
        frac = rng.normal(spec.peaks[pk][0], spec.peaks[pk][1])
        frac = min(max(frac, 0.0), 1.0 - 1e-9)
        trips.append(Trip(tid, o, d, start + int(frac * duration)))
        tid += 1
    return sorted(trips, key=lambda t: (t.journey_start, t.id))
