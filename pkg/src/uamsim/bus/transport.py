"""In-process and TCP socket endpoints that exchange interchange documents.

Wire protocol: every message is a 4-byte big-endian length followed by the
canonical document encoding. A connection opens with a handshake document
carrying the protocol version, the schema fingerprint and the component name.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import logging
import socket
import socketserver
import struct
import threading
from typing import Callable

from ..errors import (
    BusError,
    ComponentError,
    DecodeError,
    EndpointTimeout,
    EndpointUnavailable,
    HandshakeError,
)
from .interchange import Node, decode, encode

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
SCHEMA_VERSION = "uamsim-interchange/1"
MAX_FRAME = 64 * 1024 * 1024

Handler = Callable[[Node], Node]


def schema_fingerprint() -> str:
    from ..stages import SCHEMA_ELEMENTS

    text = SCHEMA_VERSION + ";" + ",".join(sorted(SCHEMA_ELEMENTS))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- framing -------------------------------------------------------------------


def send_frame(sock: socket.socket, payload: bytes) -> None:
    if len(payload) > MAX_FRAME:
        raise BusError(f"frame of {len(payload)} bytes exceeds limit")
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise EndpointUnavailable("connection closed by peer")
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock: socket.socket) -> bytes:
    (size,) = struct.unpack(">I", _recv_exact(sock, 4))
    if size > MAX_FRAME:
        raise BusError(f"announced frame of {size} bytes exceeds limit")
    return _recv_exact(sock, size)


def error_doc(exc: BaseException) -> Node:
    doc = Node("error")
    doc.add("type", type(exc).__name__)
    doc.add("message", str(exc) or type(exc).__name__)
    return doc


def _raise_if_error(doc: Node, endpoint: str) -> Node:
    if doc.name == "error":
        raise ComponentError(f"{endpoint}: {doc.get('type', 'Error')}: {doc.get('message', '')}")
    return doc


def handshake_doc(component: str) -> Node:
    doc = Node("handshake")
    doc.add("protocolVersion", PROTOCOL_VERSION)
    doc.add("schemaFingerprint", schema_fingerprint())
    doc.add("component", component)
    return doc


# -- endpoints ---------------------------------------------------------------------


class Endpoint:
    name: str
    timeout: float

    def invoke(self, request: Node) -> Node:  # pragma: no cover - interface
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessEndpoint(Endpoint):
    """Calls the handler directly; the timeout is enforced on a worker thread."""

    def __init__(self, name: str, handler: Handler, timeout: float | None = 30.0):
        self.name = name
        self.handler = handler
        self.timeout = timeout
        self._pool = None

    def invoke(self, request: Node) -> Node:
        if self.timeout is None:
            return _raise_if_error(self._call(request), self.name)
        if self._pool is None:
            self._pool = concurrent.futures.ThreadPoolExecutor(1, thread_name_prefix=f"ep-{self.name}")
        fut = self._pool.submit(self._call, request)
        try:
            doc = fut.result(timeout=self.timeout)
        except concurrent.futures.TimeoutError:
            # the stuck worker is abandoned; later calls get a fresh one
            self._pool.shutdown(wait=False)
            self._pool = None
            raise EndpointTimeout(f"{self.name} did not answer within {self.timeout} s") from None
        return _raise_if_error(doc, self.name)

    def _call(self, request: Node) -> Node:
        try:
            return self.handler(request)
        except Exception as exc:  # report like a remote component would
            log.debug("in-process handler %s failed", self.name, exc_info=True)
            return error_doc(exc)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=False)
            self._pool = None


class RemoteEndpoint(Endpoint):
    """Client side of one TCP connection to a component host."""

    def __init__(self, name: str, address: str, port: int, timeout: float = 30.0, component: str | None = None):
        self.name = name
        self.address = address
        self.port = port
        self.timeout = timeout
        self.component = component or name
        self._sock: socket.socket | None = None
        self.peer: dict = {}
        self._lock = threading.Lock()

    def connect(self) -> None:
        if self._sock is not None:
            return
        try:
            sock = socket.create_connection((self.address, self.port), timeout=self.timeout)
        except socket.timeout:
            raise EndpointTimeout(f"connecting to {self.address}:{self.port} timed out") from None
        except OSError as exc:
            raise EndpointUnavailable(f"cannot reach {self.address}:{self.port}: {exc}") from None
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            send_frame(sock, encode(handshake_doc(self.component)))
            reply = decode(recv_frame(sock))
        except socket.timeout:
            sock.close()
            raise EndpointTimeout("handshake timed out") from None
        except OSError as exc:
            sock.close()
            raise EndpointUnavailable(f"handshake failed: {exc}") from None
        if reply.name != "handshakeAck":
            sock.close()
            raise HandshakeError(f"{self.name}: {reply.get('message', 'handshake refused')}")
        self.peer = {c.name: c.value for c in reply.children}
        self._sock = sock

    def invoke(self, request: Node) -> Node:
        with self._lock:
            self.connect()
            try:
                send_frame(self._sock, encode(request))
                data = recv_frame(self._sock)
            except socket.timeout:
                # the reply may still arrive later and would desynchronize the stream
                self._drop()
                raise EndpointTimeout(f"{self.name} did not answer within {self.timeout} s") from None
            except EndpointUnavailable:
                self._drop()
                raise
            except OSError as exc:
                self._drop()
                raise EndpointUnavailable(f"{self.name}: {exc}") from None
        return _raise_if_error(decode(data), self.name)

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def close(self) -> None:
        with self._lock:
            self._drop()


# -- server ------------------------------------------------------------------------


class _ConnectionHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        srv: ComponentServer = self.server.owner  # type: ignore[attr-defined]
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with srv._conn_lock:
            srv._conns.add(sock)
        try:
            hello = decode(recv_frame(sock))
            ok = (
                hello.name == "handshake"
                and hello.get("protocolVersion", None) == PROTOCOL_VERSION
                and hello.get("schemaFingerprint", None) == schema_fingerprint()
            )
            if not ok:
                err = Node("handshakeReject")
                err.add("message", "protocol version or schema fingerprint mismatch")
                send_frame(sock, encode(err))
                return
            ack = Node("handshakeAck")
            ack.add("protocolVersion", PROTOCOL_VERSION)
            ack.add("schemaFingerprint", schema_fingerprint())
            ack.add("component", srv.name)
            ack.add("stage", srv.stage)
            send_frame(sock, encode(ack))
            while True:
                try:
                    data = recv_frame(sock)
                except EndpointUnavailable:
                    return
                try:
                    reply = srv.handler(decode(data))
                except Exception as exc:
                    log.debug("component %s failed", srv.name, exc_info=True)
                    reply = error_doc(exc)
                try:
                    payload = encode(reply)
                except Exception as exc:
                    payload = encode(error_doc(exc))
                send_frame(sock, payload)
        except (OSError, DecodeError, BusError):
            return
        finally:
            with srv._conn_lock:
                srv._conns.discard(sock)


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class ComponentServer:
    """Hosts a document handler on a TCP port; one thread per connection."""

    def __init__(self, handler: Handler, name: str, stage: str, host: str = "127.0.0.1", port: int = 0):
        self.handler = handler
        self.name = name
        self.stage = stage
        self._server = _Server((host, port), _ConnectionHandler)
        self._server.owner = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None
        self._conns: set[socket.socket] = set()
        self._conn_lock = threading.Lock()

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> ComponentServer:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True, name=f"host-{self.name}")
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        # live connections would otherwise keep serving after the listener is gone
        with self._conn_lock:
            for conn in list(self._conns):
                try:
                    conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> ComponentServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
