"""Intermodal travel-chain completion and multinomial logit mode choice."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .demand import AccessPlan, Trip
from .errors import InvalidOffer
from .geo import great_circle_km


class Mode(str, enum.Enum):
    UAM_INTERMODAL = "UAM_Intermodal"
    CAR = "Car"


@dataclass(frozen=True)
class TravelOffer:
    mode: Mode
    total_time: float  # s, door to door
    total_cost: float  # EUR

    def __post_init__(self):
        if self.total_time < 0 or self.total_cost < 0:
            raise ValueError("offer time and cost must be non-negative")


@dataclass(frozen=True)
class LogitParams:
    beta_time: float = -0.0006
    beta_cost: float = -0.05
    asc_uam: float = 0.0

    def __post_init__(self):
        if self.beta_time > 0 or self.beta_cost > 0:
            raise ValueError("time and cost coefficients must be non-positive")


def complete_uam_chain(
    departure: int,
    flight_duration: float,
    plan: AccessPlan,
    fare: float,
    ground_cost_rate: float,
) -> TravelOffer:
    wait = departure - plan.earliest_vertiport_arrival
    if wait < 0:
        raise InvalidOffer(f"offered departure {departure} precedes earliest arrival {plan.earliest_vertiport_arrival}")
    total_time = plan.access_time + wait + flight_duration + plan.egress_time
    total_cost = fare + ground_cost_rate * (plan.access_km + plan.egress_km)
    return TravelOffer(Mode.UAM_INTERMODAL, total_time, total_cost)


def build_car_alternative(trip: Trip, car_speed: float, car_cost_rate: float, detour_factor: float) -> TravelOffer:
    if car_speed <= 0 or detour_factor < 1:
        raise ValueError("car_speed must be > 0 and detour_factor >= 1")
    road_km = great_circle_km(trip.origin, trip.destination) * detour_factor
    return TravelOffer(Mode.CAR, road_km / car_speed * 3600.0, road_km * car_cost_rate)


def utility(offer: TravelOffer, params: LogitParams) -> float:
    v = params.beta_time * offer.total_time + params.beta_cost * offer.total_cost
    if offer.mode is Mode.UAM_INTERMODAL:
        v += params.asc_uam
    return v


def softmax(v: Sequence[float]) -> list[float]:
    m = max(v)
    ex = [math.exp(x - m) for x in v]
    s = math.fsum(ex)
    return [x / s for x in ex]


def logit_probabilities(offers: Sequence[TravelOffer], params: LogitParams) -> list[float]:
    if len(offers) < 2:
        raise ValueError("need at least two alternatives")
    return softmax([utility(o, params) for o in offers])


def request_uniform(seed: int, request_id: int) -> float:
    """The single uniform variate of a request's private random substream."""
    return float(np.random.default_rng([seed, request_id]).random())


def draw_choice(probs: Sequence[float], seed: int, request_id: int) -> int:
    """Inverse-CDF draw on the substream keyed by (run seed, request id)."""
    u = request_uniform(seed, request_id)
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    # rounding left the cumulative sum a hair below 1
    return max(i for i, p in enumerate(probs) if p > 0)
