import random
import socket
import threading
import time

import pytest

from uamsim import stages
from uamsim.bus import interchange as ix
from uamsim.bus.interchange import Node, decode, encode
from uamsim.bus.registry import Bus, ComponentDescriptor, DispatchPolicy, Registry, RegistryHandle, Transport, connect, invoke
from uamsim.bus.transport import (
    PROTOCOL_VERSION,
    ComponentServer,
    InProcessEndpoint,
    RemoteEndpoint,
    handshake_doc,
    recv_frame,
    schema_fingerprint,
    send_frame,
)
from uamsim.config import DispatchMode
from uamsim.demand import build_access_plan, generate_trips
from uamsim.errors import (
    ComponentError,
    EndpointTimeout,
    EndpointUnavailable,
    HandshakeError,
    RegistrationError,
    StageError,
)


def echo(doc):
    return doc


def sample_doc():
    d = ix.envelope()
    v = d.add("flights").add("vertiports").add("vertiport", uid=4)
    v.add("vertiportID", 4)
    v.add("positionNorth", 9.7313671, unit="deg")
    v.add("departureTimes", [2006.130101, 2006.130101])
    return d


def test_in_process_echo():
    doc = sample_doc()
    assert InProcessEndpoint("echo", echo).invoke(doc) == doc


def test_remote_echo_and_framing():
    doc = sample_doc()
    with ComponentServer(echo, "echo", "mode_choice") as srv:
        ep = RemoteEndpoint("echo", *srv.address)
        assert encode(ep.invoke(doc)) == encode(doc)
        assert ep.peer["component"] == "echo" and ep.peer["protocolVersion"] == PROTOCOL_VERSION
        ep.close()


def test_length_prefix_is_big_endian():
    a, b = socket.socketpair()
    try:
        send_frame(a, b"hello")
        assert b.recv(4) == b"\x00\x00\x00\x05"
        send_frame(a, b"xyz")
        assert b.recv(5) == b"hello"
        assert recv_frame(b) == b"xyz"
    finally:
        a.close()
        b.close()


def sleeper(seconds):
    def handler(doc):
        time.sleep(seconds)
        return doc

    return handler


@pytest.mark.parametrize("remote", [False, True])
def test_timeout_fires_near_configured_duration(remote):
    limit = 0.5
    srv = None
    if remote:
        srv = ComponentServer(sleeper(2.0), "slow", "mode_choice").start()
        ep = RemoteEndpoint("slow", *srv.address, timeout=limit)
        ep.connect()
    else:
        ep = InProcessEndpoint("slow", sleeper(2.0), timeout=limit)
    try:
        t0 = time.perf_counter()
        with pytest.raises(EndpointTimeout):
            ep.invoke(sample_doc())
        elapsed = time.perf_counter() - t0
        assert limit * 0.9 <= elapsed <= limit * 1.1
    finally:
        ep.close()
        if srv:
            srv.stop()


def test_handler_exception_becomes_component_error():
    def bad(doc):
        raise RuntimeError("kaput")

    with pytest.raises(ComponentError, match="kaput"):
        InProcessEndpoint("bad", bad).invoke(sample_doc())
    with ComponentServer(bad, "bad", "fleet") as srv:
        ep = RemoteEndpoint("bad", *srv.address)
        with pytest.raises(ComponentError, match="kaput"):
            ep.invoke(sample_doc())
        # the connection survives a component error
        with pytest.raises(ComponentError):
            ep.invoke(sample_doc())
        ep.close()


def test_unreachable_endpoint():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(EndpointUnavailable):
        RemoteEndpoint("gone", "127.0.0.1", port, timeout=1).connect()


def test_connection_loss_is_unavailable():
    with ComponentServer(echo, "echo", "fleet") as srv:
        ep = RemoteEndpoint("echo", *srv.address)
        ep.connect()
    with pytest.raises(EndpointUnavailable):
        ep.invoke(sample_doc())


def test_handshake_mismatch_rejected():
    with ComponentServer(echo, "echo", "fleet") as srv:
        sock = socket.create_connection(srv.address, timeout=2)
        bad = handshake_doc("client")
        next(c for c in bad.children if c.name == "schemaFingerprint").value = "0" * 16
        send_frame(sock, encode(bad))
        reply = decode(recv_frame(sock))
        sock.close()
    assert reply.name == "handshakeReject"


def test_client_reports_rejected_handshake():
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)

    def refuse():
        conn, _ = listener.accept()
        recv_frame(conn)
        reject = Node("handshakeReject")
        reject.add("message", "schema fingerprint mismatch")
        send_frame(conn, encode(reject))
        conn.close()

    t = threading.Thread(target=refuse, daemon=True)
    t.start()
    try:
        with pytest.raises(HandshakeError, match="fingerprint"):
            RemoteEndpoint("peer", *listener.getsockname()[:2], timeout=2).connect()
    finally:
        t.join(timeout=2)
        listener.close()


def test_fingerprint_is_stable_hex():
    fp = schema_fingerprint()
    assert fp == schema_fingerprint() and len(fp) == 16
    int(fp, 16)


# -- registry ------------------------------------------------------------------------


def desc(name, stage="vertiport_trajectory", handler=echo):
    return ComponentDescriptor(name, stage, handler=handler)


def test_register_eight_instances_gives_pool_of_eight():
    reg = Registry(stages.STAGES)
    for i in range(8):
        reg.register(desc(f"vt{i}"))
    bus = Bus(reg, {"vertiport_trajectory": DispatchPolicy("vertiport_trajectory", DispatchMode.PARALLEL_FAN_OUT, 8)})
    assert bus.pool("vertiport_trajectory").size == 8
    bus.close()


def test_unknown_stage_rejected():
    with pytest.raises(RegistrationError):
        Registry(stages.STAGES).register(desc("x", stage="weather"))


def test_duplicate_rejected_then_reregister_after_deregister():
    reg = Registry(stages.STAGES)
    h = reg.register(desc("a"))
    with pytest.raises(RegistrationError):
        reg.register(desc("a"))
    reg.deregister(h)
    assert reg.endpoints("vertiport_trajectory") == ()
    assert reg.register(desc("a")) == RegistryHandle("vertiport_trajectory", "a")
    with pytest.raises(RegistrationError):
        reg.deregister(RegistryHandle("vertiport_trajectory", "zzz"))


def test_in_process_descriptor_needs_handler():
    with pytest.raises(RegistrationError):
        ComponentDescriptor("x", "fleet")


def test_invoke_by_descriptor():
    with ComponentServer(echo, "echo", "fleet") as srv:
        d = ComponentDescriptor("echo", "fleet", Transport.REMOTE, *srv.address)
        assert invoke(d, sample_doc()) == sample_doc()


def tagging_handler(tag, log):
    def handler(doc):
        log.append((tag, threading.get_ident()))
        out = Node("cpacs")
        res = out.add("flights").add("results")
        for item in stages.request_items(doc):
            r = res.add("result", uid=item.uid)
            r.add("status", "ok")
            r.add("echo", item.get("value"))
        return out

    return handler


def _items(n):
    out = []
    for i in range(n):
        it = Node("request")
        it.add("value", i * 10)
        out.append(it)
    return out


def _bus(n_endpoints, mode, handler_for, latency=None):
    reg = Registry(stages.STAGES)
    for i in range(n_endpoints):
        h = handler_for(i)
        if latency:
            h = latency(h)
        reg.register(desc(f"ep{i}", handler=h))
    return Bus(reg, {"vertiport_trajectory": DispatchPolicy("vertiport_trajectory", mode, n_endpoints)})


def test_serial_dispatch_sends_one_document():
    log = []
    bus = _bus(1, DispatchMode.SERIAL, lambda i: tagging_handler(i, log))
    out = bus.dispatch("vertiport_trajectory", _items(8), None)
    assert [r.get("echo") for r in out] == [i * 10 for i in range(8)]
    assert len(log) == 1 and bus.invocations["vertiport_trajectory"] == 1
    bus.close()


def test_fan_out_eight_instances_runs_concurrently_in_order():
    log = []
    barrier = threading.Barrier(8, timeout=5)

    def gate(h):
        def wrapped(doc):
            barrier.wait()  # only passes if all 8 invocations are in flight together
            return h(doc)

        return wrapped

    bus = _bus(8, DispatchMode.PARALLEL_FAN_OUT, lambda i: tagging_handler(i, log), latency=gate)
    out = bus.dispatch("vertiport_trajectory", _items(8), None)
    assert [r.get("echo") for r in out] == [i * 10 for i in range(8)]
    assert len(log) == 8 and len({t for _, t in log}) == 8
    bus.close()


def test_fan_out_single_instance_is_sequential_and_identical():
    log = []
    bus = _bus(1, DispatchMode.PARALLEL_FAN_OUT, lambda i: tagging_handler(i, log))
    out = bus.dispatch("vertiport_trajectory", _items(8), None)
    assert [r.get("echo") for r in out] == [i * 10 for i in range(8)]
    assert len(log) == 8 and len({t for _, t in log}) == 1
    bus.close()


def test_stage_error_names_the_item():
    def fail_on_30(doc):
        if any(it.get("value") == 30 for it in stages.request_items(doc)):
            raise RuntimeError("bad item")
        return tagging_handler(0, [])(doc)

    bus = _bus(4, DispatchMode.PARALLEL_FAN_OUT, lambda i: fail_on_30)
    with pytest.raises(StageError) as err:
        bus.dispatch("vertiport_trajectory", _items(6), None)
    assert err.value.item == 3 and err.value.stage == "vertiport_trajectory"
    bus.close()


# -- real stage handlers --------------------------------------------------------------


def mode_choice_requests(cfg, n=40):
    trips = generate_trips(cfg.demand.synthetic, list(cfg.vertiports), cfg.start, cfg.duration, cfg.seed)[:n]
    items = []
    for t in trips:
        plan = build_access_plan(t, list(cfg.vertiports), cfg.demand.ground_speed)
        dep = plan.earliest_vertiport_arrival + 120
        items.append(stages.mode_choice_item(t.id, t, plan, dep, dep + 600, 30.0))
    return items


def test_mode_choice_in_process_vs_socket_byte_identical(small_cfg):
    settings = stages.mode_choice_settings(small_cfg)
    doc = stages.request_doc(list(enumerate(mode_choice_requests(small_cfg))), settings)
    local = InProcessEndpoint("mc", stages.mode_choice_handler).invoke(doc)
    with ComponentServer(stages.mode_choice_handler, "mc", "mode_choice") as srv:
        remote = RemoteEndpoint("mc", *srv.address).invoke(doc)
    assert encode(local) == encode(remote)
    assert len(stages.response_items(local)) == 40


def test_mode_choice_endpoint_is_stateless(small_cfg):
    settings = stages.mode_choice_settings(small_cfg)
    items = mode_choice_requests(small_cfg, 30)
    docs = [stages.request_doc([(i, it)], settings) for i, it in enumerate(items)]
    ep = InProcessEndpoint("mc", stages.mode_choice_handler)
    forward = [encode(ep.invoke(d)) for d in docs]
    order = list(range(len(docs)))
    random.Random(1).shuffle(order)
    shuffled = {i: encode(ep.invoke(docs[i])) for i in order}
    assert [shuffled[i] for i in range(len(docs))] == forward


def test_connect_remote_descriptor_handshakes():
    with ComponentServer(echo, "echo", "fleet") as srv:
        ep = connect(ComponentDescriptor("echo", "fleet", Transport.REMOTE, *srv.address))
        assert ep.peer["stage"] == "fleet"
        ep.close()
