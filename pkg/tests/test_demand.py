import io
import random
import warnings

import pytest

from uamsim.config import SyntheticDemand, VertiportSpec
from uamsim.demand import (
    Trip,
    build_access_plan,
    emit_requests,
    generate_trips,
    load_trips,
    nearest_vertiport,
    write_trips,
)
from uamsim.errors import IngestError

from oracles import haversine_km, nearest_brute

HEADER = "trip_id,origin_lat,origin_lon,dest_lat,dest_lon,start_time_s\n"


def csv(*rows):
    return io.StringIO(HEADER + "".join(r + "\n" for r in rows))


def test_load_sorts_by_start_then_id():
    trips = load_trips(csv("2,53.5,10.0,53.6,10.1,100", "1,53.5,10.0,53.6,10.1,100", "3,53.5,10.0,53.6,10.1,50"))
    assert [t.id for t in trips] == [3, 1, 2]


def test_empty_file_warns_and_returns_nothing():
    with pytest.warns(UserWarning):
        assert load_trips(io.StringIO("")) == []
    with pytest.warns(UserWarning):
        assert load_trips(csv()) == []


def test_latitude_out_of_bounds_names_the_row():
    with pytest.raises(IngestError) as err:
        load_trips(csv("1,53.5,10.0,53.6,10.1,0", "2,95.0,10.0,53.6,10.1,0"))
    assert err.value.line == 3
    assert "line 3" in str(err.value)


@pytest.mark.parametrize(
    "row",
    ["1,53.5,10.0,53.5,10.0,0", "x,53.5,10.0,53.6,10.1,0", "1,53.5,,53.6,10.1,0"],
)
def test_malformed_rows_rejected(row):
    with pytest.raises(IngestError):
        load_trips(csv(row))


def test_missing_column_rejected():
    with pytest.raises(IngestError):
        load_trips(io.StringIO("trip_id,origin_lat\n1,2\n"))


def test_duplicate_ids_and_horizon():
    with pytest.raises(IngestError):
        load_trips(csv("1,53.5,10.0,53.6,10.1,0", "1,53.5,10.0,53.6,10.1,5"))
    with pytest.raises(IngestError):
        load_trips(csv("1,53.5,10.0,53.6,10.1,9000"), horizon=(0, 7200))


def test_write_then_load_round_trips(tmp_path, small_cfg):
    trips = generate_trips(SyntheticDemand(count=50), list(small_cfg.vertiports), 0, 3600, 3)
    path = tmp_path / "trips.csv"
    write_trips(trips, path)
    assert load_trips(path) == trips


def test_synthetic_count_and_horizon(hamburg_cfg):
    trips = generate_trips(hamburg_cfg.demand.synthetic, list(hamburg_cfg.vertiports), hamburg_cfg.start, hamburg_cfg.duration, hamburg_cfg.seed)
    assert len(trips) == 1239
    assert len({t.id for t in trips}) == 1239
    assert all(hamburg_cfg.start <= t.journey_start < hamburg_cfg.end for t in trips)
    assert all(haversine_km(t.origin, t.destination) >= hamburg_cfg.demand.synthetic.min_trip_km for t in trips)
    again = generate_trips(hamburg_cfg.demand.synthetic, list(hamburg_cfg.vertiports), hamburg_cfg.start, hamburg_cfg.duration, hamburg_cfg.seed)
    assert again == trips


PORTS = [
    VertiportSpec(1, "a", 53.50, 10.00),
    VertiportSpec(2, "b", 53.60, 10.00),
    VertiportSpec(3, "c", 53.55, 9.90),
]


def test_origin_at_vertiport_has_zero_access():
    p = build_access_plan(Trip(1, (53.60, 10.00), (53.55, 9.90), 500), PORTS, 30.0)
    assert (p.origin_vertiport, p.access_time, p.access_km) == (2, 0, 0.0)
    assert p.destination_vertiport == 3
    assert p.earliest_vertiport_arrival == 500


def test_equidistant_tie_goes_to_lower_id():
    ports = [VertiportSpec(7, "x", 0.0, 1.0), VertiportSpec(4, "y", 0.0, -1.0)]
    vp, _ = nearest_vertiport((0.0, 0.0), ports)
    assert vp.id == 4


def test_access_time_is_distance_over_speed():
    trip = Trip(1, (53.52, 10.00), (53.58, 10.00), 0)
    p = build_access_plan(trip, PORTS, 30.0)
    km = haversine_km(trip.origin, (53.50, 10.00))
    assert p.access_km == pytest.approx(km)
    assert p.access_time == pytest.approx(km / 30 * 3600, abs=1)
    assert p.earliest_vertiport_arrival == p.access_time


def test_nearest_matches_brute_force(hamburg_cfg):
    rng = random.Random(99)
    ports = list(hamburg_cfg.vertiports)
    assert len(ports) == 20
    for _ in range(1000):
        pt = (rng.uniform(53.35, 53.75), rng.uniform(9.7, 10.3))
        assert nearest_vertiport(pt, ports)[0].id == nearest_brute(pt, ports)


def _requests(arrivals, lead, start=0):
    trips = [Trip(i, (0, 0), (0, 1), a) for i, a in enumerate(arrivals)]
    plans = {t.id: build_access_plan(t, PORTS[:1], 30.0) for t in trips}
    plans = {k: type(p)(p.trip, 1, 2, 0.0, 0.0, 0, 0, arrivals[k]) for k, p in plans.items()}
    return emit_requests(trips, plans, lead, start)


def test_emission_lead_time():
    (r,) = _requests([36000], 1800)
    assert r.emission_time == 34200


def test_zero_lead_emits_at_arrival():
    (r,) = _requests([36000], 0)
    assert r.emission_time == 36000


def test_emission_clamped_to_start():
    (r,) = _requests([600], 1800, start=0)
    assert r.emission_time == 0


def test_emission_stream_is_ordered_permutation():
    rng = random.Random(5)
    arrivals = [rng.randrange(0, 20000) for _ in range(300)]
    reqs = _requests(arrivals, 1800)
    assert sorted(r.id for r in reqs) == list(range(300))
    keys = [(r.emission_time, r.id) for r in reqs]
    assert keys == sorted(keys)


def test_negative_lead_rejected():
    with pytest.raises(ValueError):
        _requests([0], -1)


def test_no_warning_on_normal_load():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_trips(csv("1,53.5,10.0,53.6,10.1,0"))
