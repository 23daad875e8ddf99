"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import contextlib

import pytest
from hypothesis import HealthCheck, given, settings

import oracles
import test_airspace
import test_demand
import test_economics
import test_interchange
import test_modechoice
import test_vertidrome
from uamsim import stages
from uamsim.bus.interchange import Node, decode, encode
from uamsim.bus.registry import Bus, ComponentDescriptor, DispatchPolicy, Registry, Transport
from uamsim.bus.transport import ComponentServer
from uamsim.config import AirspaceMode, DispatchMode
from uamsim.economics import compute_fare
from uamsim.errors import RunAborted
from uamsim.geo import great_circle_km
from uamsim.orchestrator import default_bus, run_day
from uamsim.world import FlightKind

pytestmark = pytest.mark.slow


@contextlib.contextmanager
def criterion(name):
    """Print one verdict line for the enclosed checks and re-raise any failure."""
    try:
        yield
    except BaseException as exc:
        print(f"\nFAIL {name}: {type(exc).__name__}: {exc}")
        raise
    print(f"\nPASS {name}")


@pytest.fixture(scope="module")
def baseline(hamburg_cfg):
    return run_day(hamburg_cfg)


# 1 -------------------------------------------------------------------------------------


def test_reference_scenario(hamburg_cfg, baseline):
    with criterion("reference scenario: share in (0,15%), monotone in price, revenue flights <= passengers, < 60 s"):
        cfg = hamburg_cfg
        assert len(cfg.vertiports) == 20 and len(cfg.vehicles) == 30
        assert {t.pax_capacity for t in cfg.vehicle_types} == {3}
        assert cfg.pricing.price_per_km == 2.0 and cfg.airspace.mode is AirspaceMode.SLOT_BASED
        assert cfg.duration == 4 * 3600 and 1100 <= baseline.requests <= 1300

        assert 0.0 < baseline.mode_share < 0.15, baseline.mode_share
        assert baseline.runtime_s < 60.0, baseline.runtime_s

        shares = {}
        for price in (1.0, 2.0, 4.0):
            rep = baseline if price == 2.0 else run_day(cfg.replace(**{"pricing.price_per_km": price}))
            shares[price] = rep.mode_share
            revenue_flights = sum(1 for f in rep.world.flights.values() if f.kind is FlightKind.REVENUE)
            assert revenue_flights <= rep.uam_passengers, (price, revenue_flights, rep.uam_passengers)
        assert shares[4.0] <= shares[2.0] <= shares[1.0], shares
        print(f"\n  mode share {baseline.mode_share:.4f} ({baseline.uam_passengers}/{baseline.requests}), "
              f"sweep {shares}, runtime {baseline.runtime_s:.2f} s")


# 2 -------------------------------------------------------------------------------------


def slot_violations(world):
    bad = 0
    by_port = {}
    for s in world.slots.values():
        by_port.setdefault(s.vertiport, []).append(s)
    for vp, slots in by_port.items():
        spec = world.vertiports[vp]
        buffer = world.calendars[vp].buffer
        for i, a in enumerate(slots):
            for b in slots[i + 1 :]:
                if a.fato_index == b.fato_index and oracles.intervals_overlap(a.start, a.end, b.start, b.end):
                    bad += 1
                elif (
                    spec.layout.value == "BiDirectional"
                    and a.kind != b.kind
                    and oracles.intervals_overlap(a.start - buffer, a.end + buffer, b.start, b.end)
                ):
                    bad += 1
    return bad


def trajectory_violations(world, cfg):
    trajs = sorted(world.trajectories.values(), key=lambda t: t.id)
    headway = cfg.airspace.separation_km / min(t.cruise_speed for t in cfg.vehicle_types) * 3600
    bad = 0
    for i, a in enumerate(trajs):
        for b in trajs[i + 1 :]:
            if cfg.airspace.mode is AirspaceMode.SLOT_BASED:
                bad += oracles.edge_conflict(a, b, headway) or oracles.edge_conflict(b, a, headway)
            else:
                bad += oracles.sampled_conflict(a, b, cfg.airspace.separation_km, cfg.airspace.sample_step)
    return bad


def test_conflict_freedom_audit(hamburg_cfg):
    with criterion("conflict-freedom audit: 5 seeds x both airspace modes, zero slot and trajectory violations"):
        checked = 0
        for mode in (AirspaceMode.SLOT_BASED, AirspaceMode.TRAJECTORY_BASED):
            for seed in range(5):
                cfg = hamburg_cfg.replace(seed=seed, **{"airspace.mode": mode})
                w = run_day(cfg).world
                assert w.flights, (mode, seed)
                assert slot_violations(w) == 0, (mode, seed)
                assert trajectory_violations(w, cfg) == 0, (mode, seed)
                checked += 1
        assert checked == 10


# 3 -------------------------------------------------------------------------------------


def test_grouping_transparency(hamburg_cfg, baseline):
    with criterion("grouping transparency: logs for intervals 0/60/300 s are bit-identical"):
        ref = baseline.world.log_bytes()
        for interval in (60, 300):
            rep = run_day(hamburg_cfg.replace(**{"orchestrator.batch_interval": interval}))
            assert rep.world.log_bytes() == ref, interval


# 4 -------------------------------------------------------------------------------------


def remote_bus(servers):
    registry = Registry(stages.STAGES)
    policies = {}
    for stage, handler in stages.HANDLERS.items():
        hosted = servers.get(stage)
        if hosted:
            for srv in hosted:
                registry.register(ComponentDescriptor(srv.name, stage, Transport.REMOTE, *srv.address, timeout=60))
            policies[stage] = DispatchPolicy(stage, DispatchMode.PARALLEL_FAN_OUT, len(hosted))
        else:
            registry.register(ComponentDescriptor(f"{stage}-local", stage, handler=handler))
            policies[stage] = DispatchPolicy(stage, DispatchMode.SERIAL, 1)
    return Bus(registry, policies)


def test_transport_equivalence(hamburg_cfg, baseline):
    with criterion("transport equivalence: remote mode choice and vertiport/trajectory (8-way fan-out) give identical logs"):
        servers = {
            stage: [ComponentServer(stages.HANDLERS[stage], f"{stage}-{i}", stage).start() for i in range(8)]
            for stage in ("mode_choice", "vertiport_trajectory")
        }
        bus = remote_bus(servers)
        try:
            cfg = hamburg_cfg.replace(**{"orchestrator.batch_interval": 300})
            rep = run_day(cfg, bus=bus)
        finally:
            bus.close()
            for hosted in servers.values():
                for srv in hosted:
                    srv.stop()
        assert rep.world.log_bytes() == baseline.world.log_bytes()
        assert rep.bus_invocations["mode_choice"] > 0 and rep.bus_invocations["vertiport_trajectory"] > 0


# 5 -------------------------------------------------------------------------------------


def test_determinism_and_resume(hamburg_cfg, baseline, tmp_path):
    with criterion("determinism and resumability: 3 identical runs; abort plus resume reproduces the log"):
        ref = baseline.world.log_bytes()
        for _ in range(2):
            assert run_day(hamburg_cfg).world.log_bytes() == ref

        calls = {"n": 0}

        def crashing(doc):
            calls["n"] += 1
            if calls["n"] > 300:
                raise RuntimeError("killed")
            return stages.mode_choice_handler(doc)

        bus = default_bus(hamburg_cfg, {"mode_choice": crashing})
        with pytest.raises(RunAborted):
            run_day(hamburg_cfg, out_dir=tmp_path, bus=bus)
        bus.close()
        resumed = run_day(hamburg_cfg, out_dir=tmp_path, resume=True)
        assert resumed.world.log_bytes() == ref
        assert (tmp_path / "events.jsonl").read_bytes() == ref


# 6 -------------------------------------------------------------------------------------


def test_oracle_suites(hamburg_cfg):
    with criterion("oracle suites: softmax 1e-12 x1000, slots x500, delay resolution x500, nearest vertiport x1000"):
        test_modechoice.test_softmax_matches_high_precision_oracle()
        for layout in ("OneDirectional", "BiDirectional"):
            test_vertidrome.test_next_free_slot_matches_linear_scan(layout)
        for mode in (AirspaceMode.SLOT_BASED, AirspaceMode.TRAJECTORY_BASED):
            test_airspace.test_resolve_by_delay_matches_linear_scan(mode)
        test_demand.test_nearest_matches_brute_force(hamburg_cfg)


# 7 -------------------------------------------------------------------------------------


def test_economics_fixed_point(baseline):
    with criterion("economics fixed point: cost recovery within 1% in <= 5 iterations; frozen params bypass the loop"):
        test_economics.test_constant_demand_from_far_start()
        w = baseline.world
        assert baseline.price is None
        for it in w.itineraries.values():
            assert it.fare == compute_fare([w.flights[f].distance_flown for f in it.flights], w.price_params)


# 8 -------------------------------------------------------------------------------------


def test_slot_distance_dominance(baseline):
    with criterion("slot-based distance dominance: every mission flies at least the great-circle distance"):
        w = baseline.world
        longer = 0
        for f in w.flights.values():
            gc = great_circle_km(w.vertiports[f.origin].position, w.vertiports[f.destination].position)
            assert f.distance_flown >= gc - 1e-9, f.id
            longer += f.distance_flown > gc + 1e-6
        assert longer > 0
        print(f"\n  {longer}/{len(w.flights)} missions strictly longer than direct")


# 9 -------------------------------------------------------------------------------------


def with_exemplar(doc):
    vp = Node("vertiport", attrs={"uID": "4"})
    vp.add("vertiportID", 4)
    vp.add("positionNorth", 9.7313671, unit="deg")
    vp.add("positionEast", 53.2717517, unit="deg")
    return Node("cpacs", None, {}, [doc, Node("flights", None, {}, [Node("vertiports", None, {}, [vp])])])


def test_interchange_round_trip():
    count = {"n": 0}

    @settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(test_interchange.nodes())
    def round_trip(doc):
        doc = with_exemplar(doc)
        data = encode(doc)
        back = decode(data)
        assert back == doc and encode(back) == data
        v4 = back.path("flights", "vertiports").find_all("vertiport")[0]
        assert v4.uid == "4" and v4.get("positionNorth") == 9.7313671
        count["n"] += 1

    with criterion("interchange round-trip: encode/decode identity on 1000 generated documents with exemplar values"):
        round_trip()
        assert count["n"] >= 1000
