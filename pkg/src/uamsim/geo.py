"""Geodesy helpers. Distances in km, positions as (lat, lon) degrees."""

from __future__ import annotations

import math

EARTH_RADIUS_KM = 6371.0088


def great_circle_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def interpolate(a: tuple[float, float], b: tuple[float, float], f: float) -> tuple[float, float]:
    """Linear lat/lon interpolation; adequate at city scale."""
    return (a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f)


def km_per_degree(lat: float) -> tuple[float, float]:
    """(km per degree latitude, km per degree longitude) at ``lat``."""
    k = math.pi * EARTH_RADIUS_KM / 180.0
    return k, k * math.cos(math.radians(lat))


def travel_seconds(distance_km: float, speed_kmh: float) -> float:
    return distance_km / speed_kmh * 3600.0
