"""Vehicle selection for new missions and energy reservations."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

from .config import VehicleType
from .errors import EnergyInfeasible, NoVehicleAvailable
from .geo import travel_seconds


@dataclass(frozen=True)
class EnergyAccount:
    energy_available: float
    reserved: float
    min_reserve: float

    @property
    def headroom(self) -> float:
        return self.energy_available - self.reserved - self.min_reserve


def reserve_energy(account: EnergyAccount, mission_energy: float) -> EnergyAccount:
    """Book ``mission_energy`` against the account; the reserve floor is inclusive."""
    if account.energy_available - account.reserved - mission_energy < account.min_reserve - 1e-9:
        raise EnergyInfeasible(
            f"need {mission_energy:.2f} kWh, only {account.headroom:.2f} kWh above the reserve"
        )
    return replace(account, reserved=account.reserved + mission_energy)


@dataclass(frozen=True)
class VehicleState:
    """What the allocator may know about one vehicle at planning time."""

    id: int
    vtype: str
    location: int  # where the vehicle is (or will be) after its last scheduled flight
    free_from: int  # earliest departure after its last scheduled flight and turnaround
    energy_available: float  # projected at planning time
    reserved: float  # committed to flights not yet landed


@dataclass(frozen=True)
class AllocationQuery:
    origin: int
    destination: int
    earliest_departure: int
    estimated_pax: int = 1
    now: int = 0

    def __post_init__(self):
        if self.estimated_pax < 1:
            raise ValueError("estimated_pax must be >= 1")


@dataclass(frozen=True)
class DeadheadPlan:
    origin: int
    destination: int
    earliest_departure: int
    distance_km: float
    energy: float


@dataclass(frozen=True)
class Allocation:
    vehicle: int
    deadhead: DeadheadPlan | None
    achievable_departure: int
    required_energy: float


def allocate_vehicle(
    query: AllocationQuery,
    vehicles: list[VehicleState],
    types: dict[str, VehicleType],
    route_km: Callable[[int, int], float],
    turnaround: dict[int, int],
) -> Allocation:
    """Pick the ideal vehicle for a new mission.

    Ranking is lexicographic: earliest achievable departure, then missions
    that need no deadhead, then the closest seat count to the expected load,
    then the lowest vehicle id.
    """
    leg_km = route_km(query.origin, query.destination)
    best = None
    for v in vehicles:
        vt = types[v.vtype]
        account = EnergyAccount(v.energy_available, v.reserved, vt.min_reserve)
        required = vt.flight_energy(leg_km)
        deadhead = None
        if v.location == query.origin:
            departure = max(query.earliest_departure, v.free_from, query.now)
        else:
            dh_km = route_km(v.location, query.origin)
            dh_dep = max(v.free_from, query.now)
            dh_energy = vt.flight_energy(dh_km)
            deadhead = DeadheadPlan(v.location, query.origin, dh_dep, dh_km, dh_energy)
            dh_arrival = dh_dep + math.ceil(travel_seconds(dh_km, vt.cruise_speed))
            departure = max(query.earliest_departure, dh_arrival + turnaround.get(query.origin, 0))
            required += dh_energy
        try:
            reserve_energy(account, required)
        except EnergyInfeasible:
            continue
        key = (departure, deadhead is not None, abs(vt.pax_capacity - query.estimated_pax), v.id)
        if best is None or key < best[0]:
            best = (key, Allocation(v.id, deadhead, departure, required))
    if best is None:
        raise NoVehicleAvailable(f"no vehicle can serve {query.origin}->{query.destination}")
    return best[1]
