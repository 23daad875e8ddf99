"""Analysis views recomputed from the event log alone, written as CSV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .world import Flight, MetricsFrame


@dataclass(frozen=True)
class RangeHistogram:
    bin_edges: list[float]
    counts: list[int]
    kind: str = "All"

    @property
    def total(self) -> int:
        return sum(self.counts)


def flights_from_log(event_log: list[dict]) -> list[Flight]:
    flights = {}
    for rec in event_log:
        if rec["kind"] == "flight_scheduled":
            f = Flight.from_dict(rec["payload"]["flight"])
            flights[f.id] = f
        elif rec["kind"] == "seat_booked":
            flights[rec["payload"]["flight"]].manifest.append(rec["payload"]["passenger"])
    return [flights[k] for k in sorted(flights)]


def frame_times(event_log: list[dict], cadence: int) -> list[int]:
    """Cadence points from the run start up to the final clock, plus the final clock."""
    start = event_log[0]["t"]
    final = max(r["t"] for r in event_log)
    times = list(range(start, final + 1, cadence)) if cadence > 0 else []
    if not times or times[-1] != final:
        times.append(final)
    return times


def mode_share_series(event_log: list[dict], cadence: int = 300, times: list[int] | None = None) -> list[MetricsFrame]:
    """Cumulative requests, UAM passengers and flight counts at each frame time."""
    times = frame_times(event_log, cadence) if times is None else times
    resolved = [(r["t"], r["payload"]["request"]["status"]) for r in event_log if r["kind"] == "request_resolved"]
    scheduled = [(r["t"], r["payload"]["flight"]) for r in event_log if r["kind"] == "flight_scheduled"]
    out = []
    for t in times:
        req = [s for rt, s in resolved if rt <= t]
        uam = sum(1 for s in req if s == "uam")
        fl = [f for ft, f in scheduled if ft <= t]
        airborne = sum(1 for f in fl if f["departure"] <= t < f["arrival"])
        deadheads = sum(1 for f in fl if f["kind"] == "Deadhead")
        out.append(MetricsFrame(t, len(req), uam, airborne, len(fl), deadheads, uam / max(1, len(req))))
    return out


def passengers_flights_series(event_log: list[dict], cadence: int = 300) -> list[tuple[int, int, int, int]]:
    """(time, cumulative UAM passengers, cumulative revenue flights, cumulative deadheads)."""
    return [
        (f.timestamp, f.cumulative_uam_passengers, f.cumulative_flights - f.cumulative_deadheads, f.cumulative_deadheads)
        for f in mode_share_series(event_log, cadence)
    ]


def occupancy_series(
    event_log: list[dict], step: int, start: int | None = None, end: int | None = None
) -> list[tuple[int, int]]:
    """Flights with departure <= t < arrival, sampled every ``step`` seconds on [start, end)."""
    if step <= 0:
        raise ValueError("step must be > 0")
    flights = flights_from_log(event_log)
    start = event_log[0]["t"] if start is None else start
    if end is None:
        end = max([r["t"] for r in event_log] + [f.arrival for f in flights])
    return [
        (t, sum(1 for f in flights if f.departure <= t < f.arrival)) for t in range(start, end, step)
    ]


def range_histogram(flights, bin_width: float, kind: str = "All") -> RangeHistogram:
    """Missions binned by flown distance into ``[k*w, (k+1)*w)`` bins."""
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    if kind not in ("All", "Revenue", "Deadhead"):
        raise ValueError(f"unknown kind filter {kind!r}")
    dists = [f.distance_flown for f in flights if kind == "All" or f.kind.value == kind]
    if not dists:
        return RangeHistogram([], [], kind)
    n = int(math.floor(max(dists) / bin_width)) + 1
    counts = [0] * n
    for d in dists:
        counts[min(n - 1, int(math.floor(d / bin_width)))] += 1
    return RangeHistogram([i * bin_width for i in range(n + 1)], counts, kind)


def _write(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def write_reports(
    event_log: list[dict], out_dir, run_id: str, cadence: int = 300, step: int = 60, bin_width: float = 5.0
) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["mode_share"] = _write(
        out / f"{run_id}_mode_share.csv",
        ("timestamp", "cumulative_requests", "cumulative_uam_passengers", "mode_share"),
        [(f.timestamp, f.cumulative_requests, f.cumulative_uam_passengers, f.mode_share)
         for f in mode_share_series(event_log, cadence)],
    )
    paths["passengers_flights"] = _write(
        out / f"{run_id}_passengers_flights.csv",
        ("timestamp", "cumulative_passengers", "cumulative_revenue_flights", "cumulative_deadheads"),
        passengers_flights_series(event_log, cadence),
    )
    paths["occupancy"] = _write(
        out / f"{run_id}_occupancy.csv", ("timestamp", "flights_airborne"), occupancy_series(event_log, step)
    )
    flights = flights_from_log(event_log)
    hists = {k: range_histogram(flights, bin_width, k) for k in ("All", "Revenue", "Deadhead")}
    edges = hists["All"].bin_edges
    rows = []
    for i in range(len(hists["All"].counts)):
        lo, hi = edges[i], edges[i + 1]
        per = []
        for k in ("Revenue", "Deadhead"):
            h = hists[k]
            per.append(h.counts[i] if i < len(h.counts) else 0)
        rows.append((lo, hi, per[0], per[1], hists["All"].counts[i]))
    paths["range_histogram"] = _write(
        out / f"{run_id}_range_histogram.csv", ("bin_start_km", "bin_end_km", "revenue", "deadhead", "all"), rows
    )
    return paths
