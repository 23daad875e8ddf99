import pytest

from uamsim.config import config_from_dict, default_scenario_path, load_config

SMALL = {
    "scenario": {"name": "small", "seed": 7, "start": 0, "duration": 7200},
    "vertiports": [
        {"id": 1, "name": "A", "lat": 53.55, "lon": 9.93},
        {"id": 2, "name": "B", "lat": 53.55, "lon": 10.05},
        {"id": 3, "name": "C", "lat": 53.62, "lon": 9.99, "fato_count": 2, "layout": "BiDirectional"},
        {"id": 4, "name": "D", "lat": 53.48, "lon": 10.00},
        {"id": 5, "name": "E", "lat": 53.60, "lon": 10.15},
    ],
    "vehicle_types": [
        {
            "name": "tiltrotor",
            "pax_capacity": 3,
            "cruise_speed": 200.0,
            "battery_capacity": 150.0,
            "cruise_energy_rate": 0.8,
            "hover_energy_per_cycle": 5.0,
            "min_reserve": 30.0,
            "charge_rate": 100.0,
        }
    ],
    "fleet": [{"type": "tiltrotor", "count": 4}],
    "demand": {"synthetic": {"count": 120, "min_trip_km": 4.0}},
    "mode_choice": {"asc_uam": 0.5},
    "orchestrator": {"metrics_cadence": 600},
}


def small_config(**overrides):
    cfg = config_from_dict(SMALL)
    return cfg.replace(**overrides) if overrides else cfg


@pytest.fixture
def small_cfg():
    return small_config()


@pytest.fixture(scope="session")
def hamburg_cfg():
    return load_config(default_scenario_path())
