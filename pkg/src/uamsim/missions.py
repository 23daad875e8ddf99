"""Mission decomposition, pooling and itinerary selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import NoRouteAvailable

Leg = tuple[int, int]


@dataclass
class MissionCandidate:
    legs: list[Leg]
    # per leg: ("pool", flight id) or ("new", flight id of the tentative flight)
    assignments: list[tuple[str, int]]
    estimated_departure: int
    estimated_arrival: int
    estimated_fare: float
    payload: object = field(default=None, compare=False, repr=False)

    def sort_key(self):
        return (self.estimated_arrival, len(self.legs), self.estimated_fare, tuple(self.legs))


def enumerate_decompositions(
    origin: int,
    destination: int,
    vertiports: Iterable[int],
    fleet_ranges: dict[str, float],
    distance: Callable[[int, int], float],
    max_legs: int = 2,
    max_candidates: int = 3,
) -> list[list[Leg]]:
    """Candidate leg sequences, shortest total distance first.

    A vehicle type that can fly the direct leg contributes only the direct
    leg; types that cannot contribute every chain of at most ``max_legs``
    legs through intermediate vertiports whose legs all fit their range.
    """
    if origin == destination:
        raise NoRouteAvailable("origin and destination vertiport coincide")
    nodes = sorted(set(vertiports))
    found: dict[tuple[Leg, ...], float] = {}
    direct = distance(origin, destination)
    for rng in sorted(set(fleet_ranges.values())):
        if direct <= rng:
            found[((origin, destination),)] = direct
            continue
        # exhaustive depth-bounded search; vertiport counts are small
        stack = [(origin, [origin], 0.0)]
        while stack:
            here, path, total = stack.pop()
            if len(path) - 1 >= max_legs:
                continue
            for nxt in nodes:
                if nxt in path:
                    continue
                d = distance(here, nxt)
                if d > rng:
                    continue
                if nxt == destination:
                    if len(path) >= 2:
                        legs = tuple(zip(path, path[1:] + [nxt]))
                        found[legs] = total + d
                else:
                    stack.append((nxt, path + [nxt], total + d))
    if not found:
        raise NoRouteAvailable(f"no feasible decomposition {origin}->{destination}")
    ranked = sorted(found.items(), key=lambda kv: (kv[1], len(kv[0]), kv[0]))
    out = [list(legs) for legs, _ in ranked]
    direct_first = [c for c in out if len(c) == 1]
    rest = [c for c in out if len(c) > 1][: max(0, max_candidates - len(direct_first))]
    return sorted(direct_first + rest, key=lambda c: (found[tuple(c)], len(c), c))


def try_pool(
    leg: Leg,
    earliest: int,
    window: int,
    flights: Iterable,
    free_seats: Callable[[int], int],
    now: int | None = None,
) -> int | None:
    """Earliest-departing revenue flight on ``leg`` with a free seat that
    departs within ``[earliest, earliest + window]`` and strictly after ``now``.

    Using ``now`` rather than the flight status keeps pooling decisions
    independent of how far the simulation clock has been advanced.
    """
    if window < 0:
        raise ValueError("window must be >= 0")
    best = None
    for f in flights:
        if (f.origin, f.destination) != tuple(leg) or f.kind.value != "Revenue":
            continue
        if not earliest <= f.departure <= earliest + window:
            continue
        if now is not None and f.departure <= now:
            continue
        if free_seats(f.id) < 1:
            continue
        key = (f.departure, f.id)
        if best is None or key < best:
            best = key
    return None if best is None else best[1]


def select_itinerary(candidates: list[MissionCandidate]) -> MissionCandidate:
    if not candidates:
        raise NoRouteAvailable("no feasible itinerary")
    return min(candidates, key=MissionCandidate.sort_key)
