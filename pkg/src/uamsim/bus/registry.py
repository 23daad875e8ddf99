"""Endpoint registration and stage dispatch (serial or parallel fan-out)."""

from __future__ import annotations

import concurrent.futures
import enum
import queue
import threading
from dataclasses import dataclass, field
from typing import Callable

from ..config import DispatchMode
from ..errors import BusError, RegistrationError, StageError
from .interchange import Node
from .transport import Endpoint, InProcessEndpoint, RemoteEndpoint


class Transport(str, enum.Enum):
    IN_PROCESS = "inprocess"
    REMOTE = "remote"


@dataclass(frozen=True)
class ComponentDescriptor:
    name: str
    stage: str
    transport: Transport = Transport.IN_PROCESS
    address: str = "127.0.0.1"
    port: int = 0
    batch_capable: bool = True
    timeout: float = 30.0
    handler: Callable[[Node], Node] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "transport", Transport(self.transport))
        if self.transport is Transport.IN_PROCESS and self.handler is None:
            raise RegistrationError(f"in-process endpoint {self.name!r} needs a handler")
        if self.timeout <= 0:
            raise RegistrationError("timeout must be positive")


@dataclass(frozen=True)
class RegistryHandle:
    stage: str
    name: str


@dataclass(frozen=True)
class DispatchPolicy:
    stage: str
    mode: DispatchMode = DispatchMode.SERIAL
    instances: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", DispatchMode(self.mode))
        if self.instances < 1:
            raise ValueError("instances must be >= 1")


def connect(desc: ComponentDescriptor) -> Endpoint:
    """Open an endpoint; remote endpoints complete their handshake here."""
    if desc.transport is Transport.IN_PROCESS:
        return InProcessEndpoint(desc.name, desc.handler, desc.timeout)
    ep = RemoteEndpoint(desc.name, desc.address, desc.port, desc.timeout)
    ep.connect()
    return ep


def invoke(endpoint: Endpoint | ComponentDescriptor, request: Node) -> Node:
    if isinstance(endpoint, ComponentDescriptor):
        ep = connect(endpoint)
        try:
            return ep.invoke(request)
        finally:
            ep.close()
    return endpoint.invoke(request)


class Registry:
    """Endpoints by stage. Reads are lock-free snapshots; writes take a lock."""

    def __init__(self, stages):
        self.stages = frozenset(stages)
        self._lock = threading.Lock()
        self._by_stage: dict[str, tuple[ComponentDescriptor, ...]] = {}

    def register(self, desc: ComponentDescriptor) -> RegistryHandle:
        if desc.stage not in self.stages:
            raise RegistrationError(f"unknown stage {desc.stage!r}")
        with self._lock:
            current = self._by_stage.get(desc.stage, ())
            if any(d.name == desc.name for d in current):
                raise RegistrationError(f"{desc.name!r} already registered for stage {desc.stage!r}")
            self._by_stage[desc.stage] = current + (desc,)
        return RegistryHandle(desc.stage, desc.name)

    def deregister(self, handle: RegistryHandle) -> None:
        with self._lock:
            current = self._by_stage.get(handle.stage, ())
            kept = tuple(d for d in current if d.name != handle.name)
            if len(kept) == len(current):
                raise RegistrationError(f"{handle.name!r} is not registered for stage {handle.stage!r}")
            self._by_stage[handle.stage] = kept

    def endpoints(self, stage: str) -> tuple[ComponentDescriptor, ...]:
        return self._by_stage.get(stage, ())


class StagePool:
    """Open connections for one stage; each connection serves one call at a time."""

    def __init__(self, stage: str, descriptors: tuple[ComponentDescriptor, ...], instances: int):
        if not descriptors:
            raise RegistrationError(f"no endpoint registered for stage {stage!r}")
        self.stage = stage
        self.endpoints = [connect(d) for d in descriptors[: max(1, instances)]]
        self._free: queue.SimpleQueue[Endpoint] = queue.SimpleQueue()
        for ep in self.endpoints:
            self._free.put(ep)
        self._executor = None
        if len(self.endpoints) > 1:
            self._executor = concurrent.futures.ThreadPoolExecutor(len(self.endpoints), thread_name_prefix=stage)

    @property
    def size(self) -> int:
        return len(self.endpoints)

    def _call(self, doc: Node) -> Node:
        ep = self._free.get()
        try:
            return ep.invoke(doc)
        finally:
            self._free.put(ep)

    def map(self, docs: list[Node]) -> list[Node | Exception]:
        """Invoke every document; results (or exceptions) in input order."""
        if self._executor is None or len(docs) == 1:
            out = []
            for d in docs:
                try:
                    out.append(self._call(d))
                except BusError as exc:
                    out.append(exc)
            return out
        futures = [self._executor.submit(self._call, d) for d in docs]
        out = []
        for f in futures:
            try:
                out.append(f.result())
            except BusError as exc:
                out.append(exc)
        return out

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
        for ep in self.endpoints:
            ep.close()


class Bus:
    """Dispatches batch items to the endpoints registered for a stage."""

    def __init__(self, registry: Registry, policies: dict[str, DispatchPolicy] | None = None):
        self.registry = registry
        self.policies = dict(policies or {})
        self._pools: dict[str, StagePool] = {}
        self.invocations: dict[str, int] = {}

    def policy(self, stage: str) -> DispatchPolicy:
        return self.policies.get(stage) or DispatchPolicy(stage)

    def pool(self, stage: str) -> StagePool:
        if stage not in self._pools:
            pol = self.policy(stage)
            n = pol.instances if pol.mode is DispatchMode.PARALLEL_FAN_OUT else 1
            self._pools[stage] = StagePool(stage, self.registry.endpoints(stage), n)
        return self._pools[stage]

    def dispatch(self, stage: str, items: list[Node], settings: Node | None) -> list[Node]:
        """Results for ``items`` in batch order.

        Serial sends one document carrying every item; fan-out sends one
        document per item across the stage's endpoint pool.
        """
        from ..stages import request_doc, response_items

        if not items:
            return []
        pool = self.pool(stage)
        if self.policy(stage).mode is DispatchMode.SERIAL:
            docs = [request_doc(list(enumerate(items)), settings)]
        else:
            docs = [request_doc([(i, item)], settings) for i, item in enumerate(items)]
        self.invocations[stage] = self.invocations.get(stage, 0) + len(docs)
        replies = pool.map(docs)
        merged: dict[str, Node] = {}
        for k, reply in enumerate(replies):
            if isinstance(reply, Exception):
                raise StageError(stage, None if len(docs) == 1 and len(items) > 1 else k, reply)
            merged.update(response_items(reply))
        out = []
        for i in range(len(items)):
            r = merged.get(str(i))
            if r is None:
                raise StageError(stage, i, BusError("response lacks a result for this item"))
            out.append(r)
        return out

    def close(self) -> None:
        for p in self._pools.values():
            p.close()
        self._pools.clear()
