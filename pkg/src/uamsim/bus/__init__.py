"""Component bus: interchange documents, transports and endpoint registry."""

from .interchange import Node, decode, encode, envelope
from .registry import Bus, ComponentDescriptor, DispatchPolicy, Registry, RegistryHandle, Transport, invoke
from .transport import ComponentServer, InProcessEndpoint, RemoteEndpoint

__all__ = [
    "Bus",
    "ComponentDescriptor",
    "ComponentServer",
    "DispatchPolicy",
    "InProcessEndpoint",
    "Node",
    "Registry",
    "RegistryHandle",
    "RemoteEndpoint",
    "Transport",
    "decode",
    "encode",
    "envelope",
    "invoke",
]
