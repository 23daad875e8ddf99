"""Fares, run ledgers and the iterative ticket-price update."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

from .config import CostModel, PriceParams
from .errors import ConvergenceError

log = logging.getLogger(__name__)

EPS = 1e-9


def compute_fare(leg_distances: list[float], params: PriceParams) -> float:
    """One base fare per itinerary plus the per-km price on the distance flown."""
    if any(d < 0 for d in leg_distances):
        raise ValueError("distances must be non-negative")
    return params.base_fare + params.price_per_km * math.fsum(leg_distances)


@dataclass(frozen=True)
class RunLedger:
    revenue: float
    operating_cost: float
    fleet_size: int
    deadhead_share: float
    total_energy: float
    load_factor: float
    flights: int
    deadheads: int = 0
    passengers: int = 0
    revenue_km: float = 0.0

    FIELDS = (
        "revenue",
        "operating_cost",
        "fleet_size",
        "deadhead_share",
        "total_energy",
        "load_factor",
        "flights",
        "deadheads",
        "passengers",
        "revenue_km",
    )


def _ledger(fares, flights, capacities, fleet_size, cost_model: CostModel) -> RunLedger:
    """``flights``: (kind, energy, distance, manifest size, vehicle id)."""
    n = len(flights)
    deadheads = sum(1 for f in flights if f[0] == "Deadhead")
    revenue_flights = [f for f in flights if f[0] == "Revenue"]
    energy = math.fsum(f[1] for f in flights)
    loads = [f[3] / capacities[f[4]] for f in revenue_flights]
    cost = (
        cost_model.fixed_per_vehicle * fleet_size
        + cost_model.energy_price * energy
        + cost_model.per_flight_cost * n
    )
    return RunLedger(
        revenue=math.fsum(fares),
        operating_cost=cost,
        fleet_size=fleet_size,
        deadhead_share=deadheads / n if n else 0.0,
        total_energy=energy,
        load_factor=math.fsum(loads) / len(loads) if loads else 0.0,
        flights=n,
        deadheads=deadheads,
        passengers=len(fares),
        revenue_km=math.fsum(f[2] for f in revenue_flights),
    )


def evaluate_run(event_log: list[dict], cost_model: CostModel) -> RunLedger:
    """Ledger computed purely from the event log."""
    init = event_log[0]["payload"]
    types = {t["name"]: t for t in init["vehicle_types"]}
    capacities = {v["id"]: types[v["vtype"]]["pax_capacity"] for v in init["vehicles"]}
    flights: dict[int, list] = {}
    fares = []
    for rec in event_log:
        p = rec["payload"]
        if rec["kind"] == "flight_scheduled":
            f = p["flight"]
            flights[f["id"]] = [f["kind"], f["energy"], f["distance_flown"], 0, f["vehicle"]]
        elif rec["kind"] == "seat_booked":
            flights[p["flight"]][3] += 1
        elif rec["kind"] == "itinerary_committed":
            fares.append(p["itinerary"]["fare"])
    ordered = [tuple(flights[k]) for k in sorted(flights)]
    return _ledger(fares, ordered, capacities, len(init["vehicles"]), cost_model)


def ledger_from_world(world, cost_model: CostModel) -> RunLedger:
    """Ledger from live entity stores; must agree with ``evaluate_run``."""
    capacities = {vid: world.vtype_of(vid).pax_capacity for vid in world.vehicles}
    flights = [
        (f.kind.value, f.energy, f.distance_flown, len(f.manifest), f.vehicle)
        for _, f in sorted(world.flights.items())
    ]
    # fares are summed in commit order so the total matches the log bit for bit
    order = [r["payload"]["itinerary"]["request"] for r in world.event_log if r["kind"] == "itinerary_committed"]
    fares = [world.itineraries[r].fare for r in order]
    return _ledger(fares, flights, capacities, len(world.vehicles), cost_model)


def update_price_params(
    ledger: RunLedger, params: PriceParams, target_margin: float = 0.0, damping: float = 0.5
) -> PriceParams:
    """Damped multiplicative cost-recovery step on the per-km price."""
    if ledger.flights < 1:
        return params
    proposed = params.price_per_km * ledger.operating_cost * (1 + target_margin) / max(ledger.revenue, EPS)
    return replace(params, price_per_km=damping * proposed + (1 - damping) * params.price_per_km)


@dataclass
class PriceConvergence:
    params: PriceParams
    iterations: int
    converged: bool
    history: list[PriceParams] = field(default_factory=list)


def converge_prices(
    run: Callable[[PriceParams], RunLedger],
    params0: PriceParams,
    tol: float = 0.01,
    max_iters: int = 10,
    target_margin: float = 0.0,
    damping: float = 0.5,
) -> PriceConvergence:
    """Alternate full runs and price updates until the per-km price settles."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    params = params0
    history = [params0]
    for it in range(1, max_iters + 1):
        try:
            ledger = run(params)
        except Exception as exc:
            raise ConvergenceError(it, exc) from exc
        new = update_price_params(ledger, params, target_margin, damping)
        history.append(new)
        change = abs(new.price_per_km - params.price_per_km) / max(abs(new.price_per_km), EPS)
        params = new
        log.info("price iteration %d: %.4f EUR/km (change %.2e)", it, new.price_per_km, change)
        if change < tol:
            return PriceConvergence(params, it, True, history)
    log.warning("price loop did not converge within %d iterations", max_iters)
    return PriceConvergence(params, max_iters, False, history)
