"""Hierarchical interchange documents and their canonical XML encoding.

Leaf values are ``None``, ``int``, ``float``, ``str`` or a list of numbers.
Numbers are rendered with Python's shortest round-trip ``repr``; strings that
would otherwise read back as a number, a list or nothing (empty or
whitespace-only) are tagged with a
``valueType="str"`` attribute so decoding is lossless.
"""

from __future__ import annotations

import math
import re
from typing import Iterator, Union
from xml.parsers import expat

from ..errors import DecodeError, SchemaError

Value = Union[None, int, float, str, list]

ROOT = "cpacs"
TYPE_ATTR = "valueType"

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.-]*\Z")
_INT = re.compile(r"-?\d+\Z")
_DIGITS = re.compile(r"[0-9]+\Z")
_FLOAT = re.compile(r"-?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?\Z")
_LIST = re.compile(r"\[.*\]\Z", re.S)
# XML 1.0 forbids most control characters outright
_BAD_CHARS = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f\ufffe\uffff\ud800-\udfff]")


class Node:
    __slots__ = ("name", "attrs", "value", "children")

    def __init__(self, name: str, value: Value = None, attrs: dict | None = None, children=None):
        self.name = name
        self.value = value
        self.attrs = {k: str(v) for k, v in (attrs or {}).items()}
        self.children: list[Node] = list(children or [])

    # -- building ---------------------------------------------------------------

    def add(self, name: str, value: Value = None, unit: str | None = None, uid=None) -> Node:
        attrs = {}
        if unit is not None:
            attrs["unit"] = unit
        if uid is not None:
            attrs["uID"] = str(uid)
        child = Node(name, _normalize(value), attrs)
        self.children.append(child)
        return child

    def append(self, child: Node) -> Node:
        self.children.append(child)
        return child

    # -- reading ----------------------------------------------------------------

    @property
    def uid(self) -> str | None:
        return self.attrs.get("uID")

    @property
    def unit(self) -> str | None:
        return self.attrs.get("unit")

    def child(self, name: str) -> Node:
        for c in self.children:
            if c.name == name:
                return c
        raise SchemaError(f"<{self.name}> has no <{name}> child")

    def find(self, name: str) -> Node | None:
        return next((c for c in self.children if c.name == name), None)

    def find_all(self, name: str) -> list[Node]:
        return [c for c in self.children if c.name == name]

    def get(self, name: str, default=...):
        c = self.find(name)
        if c is None:
            if default is ...:
                raise SchemaError(f"<{self.name}> has no <{name}> child")
            return default
        return c.value

    def path(self, *names: str) -> Node:
        node = self
        for n in names:
            node = node.child(n)
        return node

    def walk(self) -> Iterator[Node]:
        yield self
        for c in self.children:
            yield from c.walk()

    # -- comparison -------------------------------------------------------------

    def canonical(self) -> Node:
        kids = [c.canonical() for c in sorted(self.children, key=_child_key)]
        return Node(self.name, self.value, dict(sorted(self.attrs.items())), kids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Node):
            return NotImplemented
        return _struct(self.canonical()) == _struct(other.canonical())

    def __repr__(self) -> str:
        return f"Node({self.name!r}, value={self.value!r}, attrs={self.attrs!r}, children={len(self.children)})"


def _struct(n: Node):
    v = n.value
    # distinguish 1 from 1.0 and -0.0 from 0.0, as the encoding does
    key = (type(v).__name__, repr(v))
    return (n.name, tuple(n.attrs.items()), key, tuple(_struct(c) for c in n.children))


def _normalize(value: Value) -> Value:
    """Coerce numpy scalars and tuples into the plain leaf types."""
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, bool):
        raise SchemaError("booleans are not interchange values; use 0/1")
    if isinstance(value, (list, tuple)):
        return [_normalize_number(x) for x in value]
    return _normalize_number(value)


def _normalize_number(x):
    if isinstance(x, bool):
        raise SchemaError("booleans are not interchange values; use 0/1")
    if isinstance(x, int) or (hasattr(x, "dtype") and x.dtype.kind in "iu"):
        return int(x)
    if isinstance(x, float) or (hasattr(x, "dtype") and x.dtype.kind == "f"):
        return float(x)
    raise SchemaError(f"unsupported value type {type(x).__name__}")


def _child_key(n: Node):
    uid = n.attrs.get("uID")
    if uid is None:
        return (n.name, 0, 0, "")
    if _DIGITS.match(uid):
        return (n.name, 1, int(uid), uid)
    return (n.name, 2, 0, uid)


def _number_text(x) -> str:
    if isinstance(x, float):
        if not math.isfinite(x):
            raise SchemaError("numbers must be finite")
        return repr(x)
    return str(x)


def _escape(text: str, attr: bool = False) -> str:
    if _BAD_CHARS.search(text):
        raise SchemaError("text contains characters XML cannot carry")
    text = text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace("\r", "&#13;")
    if attr:
        text = text.replace('"', "&quot;").replace("\n", "&#10;").replace("\t", "&#9;")
    return text


def _leaf_text(value: Value) -> tuple[str | None, bool]:
    """Text for a leaf value and whether it needs the string type tag."""
    if value is None:
        return None, False
    if isinstance(value, str):
        tag = not value.strip() or bool(_INT.match(value) or _FLOAT.match(value) or _LIST.match(value))
        return _escape(value), tag
    if isinstance(value, list):
        return "[" + ", ".join(_number_text(_normalize_number(x)) for x in value) + "]", False
    return _number_text(_normalize_number(value)), False


def _check(node: Node) -> None:
    if not _NAME.match(node.name):
        raise SchemaError(f"invalid element name {node.name!r}")
    for k in node.attrs:
        if not _NAME.match(k):
            raise SchemaError(f"invalid attribute name {k!r}")
    if TYPE_ATTR in node.attrs:
        raise SchemaError(f"attribute {TYPE_ATTR!r} is reserved")
    if node.children and node.value is not None:
        raise SchemaError(f"<{node.name}> cannot carry both a value and children")
    if node.attrs.get("unit") is not None and not isinstance(node.value, (int, float, list)):
        raise SchemaError(f"<{node.name}> has a unit but no numeric value")
    seen = set()
    for c in node.children:
        uid = c.attrs.get("uID")
        if uid is None:
            continue
        if (c.name, uid) in seen:
            raise SchemaError(f"duplicate uID {uid!r} among <{c.name}> siblings")
        seen.add((c.name, uid))


def encode(doc: Node) -> bytes:
    """Canonical UTF-8 serialization; equal documents give identical bytes."""
    out = ['<?xml version="1.0" encoding="UTF-8"?>\n']

    def emit(node: Node, depth: int) -> None:
        _check(node)
        pad = "  " * depth
        text, tagged = _leaf_text(node.value)
        attrs = dict(node.attrs)
        if tagged:
            attrs[TYPE_ATTR] = "str"
        head = node.name + "".join(f' {k}="{_escape(str(v), attr=True)}"' for k, v in sorted(attrs.items()))
        if node.children:
            out.append(f"{pad}<{head}>\n")
            for c in sorted(node.children, key=_child_key):
                emit(c, depth + 1)
            out.append(f"{pad}</{node.name}>\n")
        elif text is None or text == "":
            out.append(f"{pad}<{head}/>\n")
        else:
            out.append(f"{pad}<{head}>{text}</{node.name}>\n")

    emit(doc, 0)
    return "".join(out).encode("utf-8")


def _parse_number(tok: str):
    if _INT.match(tok):
        return int(tok)
    if _FLOAT.match(tok):
        return float(tok)
    return None


def _leaf_value(text: str | None, attrs: dict, offset: int) -> Value:
    if attrs.pop(TYPE_ATTR, None) == "str":
        return text or ""
    if text is None or not text.strip():
        # untagged whitespace is layout, not a value
        return None
    num = _parse_number(text)
    if num is not None:
        return num
    if _LIST.match(text):
        inner = text[1:-1].strip()
        if not inner:
            return []
        items = []
        for tok in inner.split(","):
            v = _parse_number(tok.strip())
            if v is None:
                raise DecodeError(f"non-numeric list element {tok.strip()!r}", offset)
            items.append(v)
        return items
    return text


def decode(data: bytes) -> Node:
    """Parse canonical (or hand-written) interchange XML into a node tree."""
    if not isinstance(data, (bytes, bytearray)):
        raise TypeError("decode expects bytes")
    parser = expat.ParserCreate("UTF-8")
    stack: list[list] = []  # [node, text parts, start offset]
    root: list[Node] = []

    def start(name, attrs):
        stack.append([Node(name, None, attrs), [], parser.CurrentByteIndex])

    def chars(data):
        if stack:
            stack[-1][1].append(data)

    def end(name):
        node, parts, offset = stack.pop()
        text = "".join(parts) if parts else None
        if node.children:
            if text is not None and text.strip():
                raise DecodeError(f"<{name}> mixes text and child elements", offset)
            node.attrs.pop(TYPE_ATTR, None)
        else:
            node.value = _leaf_value(text, node.attrs, offset)
        if node.attrs.get("unit") is not None and not isinstance(node.value, (int, float, list)):
            raise SchemaError(f"<{name}> has a unit but no finite numeric value")
        seen = set()
        for c in node.children:
            uid = c.attrs.get("uID")
            if uid is not None:
                if (c.name, uid) in seen:
                    raise SchemaError(f"duplicate uID {uid!r} among <{c.name}> siblings")
                seen.add((c.name, uid))
        if stack:
            stack[-1][0].children.append(node)
        else:
            root.append(node)

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    parser.buffer_text = True
    try:
        parser.Parse(bytes(data), True)
    except expat.ExpatError as exc:
        raise DecodeError(expat.errors.messages[exc.code], parser.ErrorByteIndex) from None
    if not root:
        raise DecodeError("document has no root element", 0)
    return root[0]


def envelope() -> Node:
    """The minimal empty document."""
    return Node(ROOT)
