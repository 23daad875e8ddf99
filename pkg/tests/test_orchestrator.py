import copy
import json
import random
import time

import pytest

from conftest import SMALL, small_config
from uamsim import stages
from uamsim.bus.registry import Bus, ComponentDescriptor, DispatchPolicy, Registry
from uamsim.config import DispatchMode, config_from_dict
from uamsim.demand import TravelRequest, Trip
from uamsim.errors import RunAborted
from uamsim.orchestrator import CHECKPOINT_FILE, EVENTS_FILE, batch_requests, default_bus, run_day
from uamsim.world import FlightKind, FlightStatus, RequestStatus, snapshot_metrics


def req(rid, t):
    return TravelRequest(rid, Trip(rid, (0.0, 0.0), (0.0, 0.1), t + 1800), None, t)


def test_interval_zero_gives_one_batch_per_request():
    batches = batch_requests([req(0, 10), req(1, 10), req(2, 70)], 0)
    assert [b.requests for b in batches] == [(0,), (1,), (2,)]


def test_aligned_windows():
    batches = batch_requests([req(2, 80), req(0, 10), req(1, 70)], 60)
    assert [b.requests for b in batches] == [(0,), (1, 2)]
    assert [b.window for b in batches] == [(0, 60), (60, 120)]


def test_single_window_holds_everything():
    batches = batch_requests([req(i, 5 * i) for i in range(10)], 3600)
    assert len(batches) == 1 and batches[0].requests == tuple(range(10))


def test_negative_interval_rejected():
    with pytest.raises(ValueError):
        batch_requests([], -1)


def test_empty_demand_runs_clean():
    rep = run_day(small_config(), trips=[])
    assert rep.requests == 0 and rep.world.flights == {}
    assert rep.mode_share == 0.0 and rep.uam_passengers == 0
    assert rep.ledger.flights == 0 and rep.ledger.revenue == 0.0
    assert rep.frames[-1].timestamp == rep.world.clock


def test_single_request_happy_path(small_cfg):
    # A to B is about 8 km; a large constant makes the air taxi the obvious pick
    cfg = small_cfg.replace(**{"mode_choice.asc_uam": 50.0})
    trip = Trip(0, (53.55, 9.93), (53.55, 10.05), 3600)
    rep = run_day(cfg, trips=[trip])
    w = rep.world
    assert rep.uam_passengers == 1 and w.requests[0]["status"] == RequestStatus.UAM.value
    it = w.itineraries[0]
    revenue = [w.flights[f] for f in it.flights]
    assert all(f.kind is FlightKind.REVENUE and f.manifest == [0] for f in revenue)
    assert (revenue[0].origin, revenue[-1].destination) == (1, 2)
    assert all(f.arrival <= w.clock for f in w.flights.values())
    assert snapshot_metrics(w).cumulative_flights == len(w.flights)


@pytest.fixture(scope="module")
def small_run():
    return run_day(small_config())


def test_every_request_reaches_one_terminal_state(small_run):
    w = small_run.world
    assert len(w.requests) == small_run.requests
    statuses = [r["status"] for r in w.requests.values()]
    assert set(statuses) <= {s.value for s in RequestStatus}
    resolved = [rec["payload"]["request"]["id"] for rec in w.event_log if rec["kind"] == "request_resolved"]
    assert sorted(resolved) == sorted(set(resolved))
    # UAM passengers, itineraries and manifests agree
    uam = {rid for rid, r in w.requests.items() if r["status"] == RequestStatus.UAM.value}
    assert uam == set(w.itineraries)
    seated = [p for f in w.flights.values() for p in f.manifest]
    assert sorted(set(seated)) == sorted(uam)
    rejected = sum(1 for r in w.requests.values() if r["status"] == RequestStatus.REJECTED.value)
    assert rejected == sum(small_run.rejections.values())


def test_all_flights_finish_and_frames_are_monotone(small_run):
    w = small_run.world
    assert all(f.status is FlightStatus.LANDED for f in w.flights.values())
    ts = [f.timestamp for f in small_run.frames]
    assert ts == sorted(ts) and len(set(ts)) == len(ts)
    cum = [f.cumulative_requests for f in small_run.frames]
    assert cum == sorted(cum) and cum[-1] == small_run.requests


def test_frame_cadence(small_run):
    ts = [f.timestamp for f in small_run.frames]
    assert ts[:3] == [0, 600, 1200]


# -- pooling ------------------------------------------------------------------------------


def pooling_config(seed, pooling):
    raw = copy.deepcopy(SMALL)
    raw["scenario"]["seed"] = seed
    raw["fleet"] = [{"type": "tiltrotor", "count": 80}]
    raw["demand"]["synthetic"]["count"] = 200
    raw["mode_choice"]["asc_uam"] = 50.0
    raw["missions"] = {"pooling": pooling}
    return config_from_dict(raw)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pooling_serves_same_passengers_with_fewer_flights(seed):
    # ample fleet and a decisive constant make choice and capacity independent of pooling
    on = run_day(pooling_config(seed, True))
    off = run_day(pooling_config(seed, False))
    assert on.uam_passengers == off.uam_passengers > 0
    assert on.ledger.flights < off.ledger.flights
    assert on.ledger.load_factor > off.ledger.load_factor


# -- grouping and latency ---------------------------------------------------------------------


@pytest.mark.parametrize("interval", [60, 300])
def test_grouping_interval_does_not_change_the_log(small_run, interval):
    rep = run_day(small_config(**{"orchestrator.batch_interval": interval}))
    assert rep.world.log_bytes() == small_run.world.log_bytes()


def jittery_bus(seed, instances=8):
    rng = random.Random(seed)
    registry = Registry(stages.STAGES)
    policies = {}

    def jitter(handler, delay):
        def wrapped(doc):
            time.sleep(delay)
            return handler(doc)

        return wrapped

    for stage, handler in stages.HANDLERS.items():
        for i in range(instances):
            registry.register(ComponentDescriptor(f"{stage}-{i}", stage, handler=jitter(handler, rng.uniform(0, 0.002))))
        policies[stage] = DispatchPolicy(stage, DispatchMode.PARALLEL_FAN_OUT, instances)
    return Bus(registry, policies)


def test_fan_out_with_random_latency_matches_baseline(small_run):
    cfg = small_config(**{"orchestrator.batch_interval": 300})
    bus = jittery_bus(3)
    try:
        rep = run_day(cfg, bus=bus)
    finally:
        bus.close()
    assert rep.world.log_bytes() == small_run.world.log_bytes()
    assert rep.bus_invocations["mode_choice"] > small_run.bus_invocations["mode_choice"]


# -- checkpoint and resume ------------------------------------------------------------------------


def failing_bus(cfg, after):
    calls = {"n": 0}

    def flaky(doc):
        calls["n"] += 1
        if calls["n"] > after:
            raise RuntimeError("component crashed")
        return stages.mode_choice_handler(doc)

    return default_bus(cfg, {"mode_choice": flaky})


def test_abort_then_resume_reproduces_the_log(tmp_path, small_run):
    cfg = small_config()
    bus = failing_bus(cfg, 40)
    with pytest.raises(RunAborted) as err:
        run_day(cfg, out_dir=tmp_path, bus=bus)
    bus.close()
    assert err.value.checkpoint == str(tmp_path / CHECKPOINT_FILE)
    ck = json.loads((tmp_path / CHECKPOINT_FILE).read_text())
    assert not ck["complete"] and 0 < ck["next_request"] < small_run.requests

    rep = run_day(cfg, out_dir=tmp_path, resume=True)
    assert rep.world.log_bytes() == small_run.world.log_bytes()
    assert (tmp_path / EVENTS_FILE).read_bytes() == rep.world.log_bytes()
    assert json.loads((tmp_path / CHECKPOINT_FILE).read_text())["complete"]
    assert [f.row() for f in rep.frames] == [f.row() for f in small_run.frames]


def test_resume_rejects_tampered_log(tmp_path):
    cfg = small_config()
    bus = failing_bus(cfg, 40)
    with pytest.raises(RunAborted):
        run_day(cfg, out_dir=tmp_path, bus=bus)
    bus.close()
    ck = json.loads((tmp_path / CHECKPOINT_FILE).read_text())
    ck["checksum"] = "0" * 64
    (tmp_path / CHECKPOINT_FILE).write_text(json.dumps(ck))
    with pytest.raises(RunAborted, match="checkpointed state"):
        run_day(cfg, out_dir=tmp_path, resume=True)


def test_outputs_written(tmp_path):
    rep = run_day(small_config(), out_dir=tmp_path)
    rid = rep.run_id
    for suffix in ("metrics.csv", "ledger.csv", "ledger.xml", "summary.json"):
        assert (tmp_path / f"{rid}_{suffix}").exists()
    summary = json.loads((tmp_path / f"{rid}_summary.json").read_text())
    assert summary["checksum"] == rep.world.checksum()
    assert (tmp_path / EVENTS_FILE).read_bytes() == rep.world.log_bytes()
