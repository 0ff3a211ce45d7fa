"""Hierarchical persistent names rooted at a principal's key hash.

A name looks like ``/Alice/my music/pepper/abc.mp3/v1700000000000/s0`` in
its abbreviated display form.  The first component is a principal label that
must be resolved to a key hash; the trailing ``vNNN``/``sNNN`` components are
the version timestamp and segment number.  Identity is always the key hash:
the display label never takes part in equality or encoding.

Component escaping: ``%`` renders as ``%25`` and ``/`` as ``%2F``.  A plain
component that happens to look like a version or segment marker (``v12``,
``s0``) has its first character escaped so the rendering parses back to the
same name.  A fully key-qualified root can be written as ``/~<64 hex>``.
"""

from __future__ import annotations

import hashlib
import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from typing import Generic, Protocol, TypeVar, Union

from .errors import ComponentTooLong, DecodeError, MalformedName, UnknownPrincipal
from .wire import Reader, Writer

DIGEST_SIZE = 32
KEY_HASHES = {
    "sha256": hashlib.sha256,
    "sha3_256": hashlib.sha3_256,
    "blake2b256": lambda data=b"": hashlib.blake2b(data, digest_size=32),
}
DEFAULT_KEY_HASH = "sha256"

MAX_COMPONENT = 0xFFFF
MAX_COMPONENTS = 0xFFFF
INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1
UINT32_MAX = 2**32 - 1

FLAG_VERSION = 0x01
FLAG_SEGMENT = 0x02

_VERSION_RE = re.compile(r"v(0|-?[1-9][0-9]*)")
_SEGMENT_RE = re.compile(r"s(0|[1-9][0-9]*)")
_HEX_ROOT_RE = re.compile(r"~([0-9a-f]{64})")


def key_hash(public_key: bytes, algorithm: str = DEFAULT_KEY_HASH) -> bytes:
    """Digest identifying the holder of ``public_key``."""
    try:
        return KEY_HASHES[algorithm](public_key).digest()
    except KeyError:
        raise ValueError(f"unsupported key hash {algorithm!r}") from None


@dataclass(frozen=True)
class Principal:
    public_key_hash: bytes
    display_label: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if len(self.public_key_hash) != DIGEST_SIZE:
            raise ValueError(
                f"public_key_hash must be {DIGEST_SIZE} bytes, got {len(self.public_key_hash)}"
            )

    @classmethod
    def from_public_key(cls, public_key: bytes, label: str = "",
                        algorithm: str = DEFAULT_KEY_HASH) -> Principal:
        return cls(key_hash(public_key, algorithm), label)

    @property
    def hex(self) -> str:
        return self.public_key_hash.hex()

    def render(self) -> str:
        if self.display_label:
            return _escape(self.display_label)
        return "~" + self.hex

    def __repr__(self) -> str:
        return f"Principal({self.display_label or self.hex[:12]!s})"


def _check_components(components: tuple[str, ...]) -> None:
    if len(components) > MAX_COMPONENTS:
        raise MalformedName("too many components")
    for comp in components:
        if not isinstance(comp, str):
            raise MalformedName(f"component must be str, got {type(comp).__name__}")
        if comp == "":
            raise MalformedName("empty component")


@dataclass(frozen=True)
class Prefix:
    principal: Principal
    components: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        _check_components(self.components)

    def as_name(self) -> Name:
        return Name(self.principal, self.components)

    def child(self, *components: str) -> Prefix:
        return Prefix(self.principal, self.components + tuple(components))

    def render(self) -> str:
        return "/" + "/".join([self.principal.render(), *map(_escape_component, self.components)]) + "/"

    def __len__(self) -> int:
        return len(self.components)

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class Name:
    principal: Principal
    components: tuple[str, ...] = ()
    version: int | None = None
    segment: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        _check_components(self.components)
        if self.segment is not None:
            if self.version is None:
                raise MalformedName("segment without version")
            if not 0 <= self.segment <= UINT32_MAX:
                raise MalformedName("segment out of range")
        if self.version is not None and not INT64_MIN <= self.version <= INT64_MAX:
            raise MalformedName("version out of range")

    @property
    def prefix(self) -> Prefix:
        return Prefix(self.principal, self.components)

    @property
    def parent(self) -> Prefix:
        return Prefix(self.principal, self.components[:-1])

    @property
    def leaf(self) -> str:
        return self.components[-1] if self.components else ""

    def child(self, *components: str) -> Name:
        return Name(self.principal, self.components + tuple(components))

    def with_version(self, version: int | None) -> Name:
        return Name(self.principal, self.components, version)

    def with_segment(self, segment: int | None) -> Name:
        return Name(self.principal, self.components, self.version, segment)

    def unversioned(self) -> Name:
        return Name(self.principal, self.components)

    def render(self) -> str:
        parts = [self.principal.render(), *map(_escape_component, self.components)]
        if self.version is not None:
            parts.append(f"v{self.version}")
        if self.segment is not None:
            parts.append(f"s{self.segment}")
        return "/" + "/".join(parts)

    def __str__(self) -> str:
        return self.render()


AnyName = Union[Name, Prefix]


# -- text form --------------------------------------------------------------

def _escape(text: str) -> str:
    return text.replace("%", "%25").replace("/", "%2F")


def _escape_component(comp: str) -> str:
    out = _escape(comp)
    if _VERSION_RE.fullmatch(comp) or _SEGMENT_RE.fullmatch(comp):
        out = "%{:02X}".format(ord(out[0])) + out[1:]
    return out


def _unescape(text: str) -> str:
    raw = bytearray()
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "%":
            hexpair = text[i + 1:i + 3]
            if len(hexpair) != 2 or not all(c in "0123456789abcdefABCDEF" for c in hexpair):
                raise MalformedName(f"bad escape at offset {i} in {text!r}")
            raw.append(int(hexpair, 16))
            i += 3
        else:
            raw.extend(ch.encode("utf-8"))
            i += 1
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedName(f"escape sequence is not UTF-8 in {text!r}") from None


def _resolve_root(label_text: str, resolver: Mapping[str, Principal] | None) -> Principal:
    m = _HEX_ROOT_RE.fullmatch(label_text)
    if m:
        digest = bytes.fromhex(m.group(1))
        if resolver:
            for p in resolver.values():
                if p.public_key_hash == digest:
                    return p
        return Principal(digest)
    label = _unescape(label_text)
    if resolver is None or label not in resolver:
        raise UnknownPrincipal(label)
    return resolver[label]


def _split(text: str) -> list[str]:
    if not text.startswith("/"):
        raise MalformedName(f"name must start with '/': {text!r}")
    body = text[1:]
    if body.endswith("/"):
        body = body[:-1]
    if body == "":
        raise MalformedName("missing principal")
    raw = body.split("/")
    if any(part == "" for part in raw):
        raise MalformedName(f"empty component in {text!r}")
    return raw


def parse_name(text: str, resolver: Mapping[str, Principal] | None = None) -> Name:
    """Parse the abbreviated display form into a key-qualified :class:`Name`."""
    raw = _split(text)
    principal = _resolve_root(raw[0], resolver)
    rest = raw[1:]
    version = segment = None
    if rest and _SEGMENT_RE.fullmatch(rest[-1]):
        if len(rest) < 2 or not _VERSION_RE.fullmatch(rest[-2]):
            raise MalformedName("segment without version")
        segment = int(rest[-1][1:])
        version = int(rest[-2][1:])
        rest = rest[:-2]
    elif rest and _VERSION_RE.fullmatch(rest[-1]):
        version = int(rest[-1][1:])
        rest = rest[:-1]
    return Name(principal, tuple(_unescape(c) for c in rest), version, segment)


def parse_prefix(text: str, resolver: Mapping[str, Principal] | None = None) -> Prefix:
    name = parse_name(text, resolver)
    if name.version is not None:
        raise MalformedName("a prefix carries no version or segment")
    return name.prefix


def render(name: AnyName) -> str:
    return name.render()


# -- canonical binary form ------------------------------------------------------

def canonical_encode(name: AnyName) -> bytes:
    """Deterministic self-delimiting encoding; the display label is excluded.

    Layout: digest(32) | count:u16 | (len:u16, utf8)* | flags:u8
    | [version:i64] | [segment:u32]
    """
    w = Writer()
    write_name(w, name)
    return w.getvalue()


def write_name(w: Writer, name: AnyName) -> None:
    w.raw(name.principal.public_key_hash)
    w.u16(len(name.components))
    for comp in name.components:
        data = comp.encode("utf-8")
        if len(data) > MAX_COMPONENT:
            raise ComponentTooLong(f"component of {len(data)} bytes exceeds {MAX_COMPONENT}")
        w.bytes16(data)
    version = getattr(name, "version", None)
    segment = getattr(name, "segment", None)
    flags = (FLAG_VERSION if version is not None else 0) | (FLAG_SEGMENT if segment is not None else 0)
    w.u8(flags)
    if version is not None:
        w.i64(version)
    if segment is not None:
        w.u32(segment)


def read_name(r: Reader, labels: Mapping[bytes, str] | None = None) -> Name:
    digest = r.raw(DIGEST_SIZE)
    count = r.u16()
    comps = []
    for _ in range(count):
        try:
            comps.append(r.bytes16().decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DecodeError("component is not UTF-8") from exc
    flags = r.u8()
    if flags & ~(FLAG_VERSION | FLAG_SEGMENT):
        raise DecodeError(f"unknown name flags {flags:#x}")
    version = r.i64() if flags & FLAG_VERSION else None
    segment = r.u32() if flags & FLAG_SEGMENT else None
    label = (labels or {}).get(digest, "")
    try:
        return Name(Principal(digest, label), tuple(comps), version, segment)
    except MalformedName as exc:
        raise DecodeError(str(exc)) from exc


def canonical_decode(data: bytes, labels: Mapping[bytes, str] | None = None) -> Name:
    r = Reader(data)
    name = read_name(r, labels)
    r.expect_end()
    return name


# -- prefix relations -------------------------------------------------------------

def is_prefix_of(prefix: AnyName, name: AnyName) -> bool:
    """Component-exact leading match under the same principal."""
    if prefix.principal != name.principal:
        return False
    n = len(prefix.components)
    return len(name.components) >= n and name.components[:n] == prefix.components


V = TypeVar("V")


class PrefixTable(Protocol[V]):
    def insert(self, prefix: Prefix, value: V) -> None: ...
    def remove(self, prefix: Prefix) -> V | None: ...
    def get(self, prefix: Prefix) -> V | None: ...
    def longest_match(self, name: AnyName) -> tuple[Prefix, V] | None: ...
    def items(self) -> Iterator[tuple[Prefix, V]]: ...
    def __len__(self) -> int: ...


class LinearPrefixTable(Generic[V]):
    """Reference table: a dict scanned end to end on every lookup."""

    def __init__(self, entries: Iterable[tuple[Prefix, V]] = ()) -> None:
        self._entries: dict[Prefix, V] = {}
        for prefix, value in entries:
            self.insert(prefix, value)

    def insert(self, prefix: Prefix, value: V) -> None:
        self._entries[prefix] = value

    def remove(self, prefix: Prefix) -> V | None:
        return self._entries.pop(prefix, None)

    def get(self, prefix: Prefix) -> V | None:
        return self._entries.get(prefix)

    def longest_match(self, name: AnyName) -> tuple[Prefix, V] | None:
        best = None
        for prefix, value in self._entries.items():
            if is_prefix_of(prefix, name) and (best is None or len(prefix) > len(best[0])):
                best = (prefix, value)
        return best

    def items(self) -> Iterator[tuple[Prefix, V]]:
        return iter(list(self._entries.items()))

    def __len__(self) -> int:
        return len(self._entries)


class _TrieNode:
    __slots__ = ("children", "has_value", "value", "prefix")

    def __init__(self) -> None:
        self.children: dict[str, _TrieNode] = {}
        self.has_value = False
        self.value = None
        self.prefix: Prefix | None = None


class PrefixTrie(Generic[V]):
    """Component trie keyed per principal; lookups walk at most len(name) nodes."""

    def __init__(self, entries: Iterable[tuple[Prefix, V]] = ()) -> None:
        self._roots: dict[bytes, _TrieNode] = {}
        self._size = 0
        for prefix, value in entries:
            self.insert(prefix, value)

    def _walk(self, prefix: AnyName, create: bool) -> _TrieNode | None:
        node = self._roots.get(prefix.principal.public_key_hash)
        if node is None:
            if not create:
                return None
            node = self._roots[prefix.principal.public_key_hash] = _TrieNode()
        for comp in prefix.components:
            nxt = node.children.get(comp)
            if nxt is None:
                if not create:
                    return None
                nxt = node.children[comp] = _TrieNode()
            node = nxt
        return node

    def insert(self, prefix: Prefix, value: V) -> None:
        node = self._walk(prefix, create=True)
        if not node.has_value:
            self._size += 1
        node.has_value, node.value, node.prefix = True, value, prefix

    def remove(self, prefix: Prefix) -> V | None:
        node = self._walk(prefix, create=False)
        if node is None or not node.has_value:
            return None
        value = node.value
        node.has_value, node.value, node.prefix = False, None, None
        self._size -= 1
        return value

    def get(self, prefix: Prefix) -> V | None:
        node = self._walk(prefix, create=False)
        return node.value if node is not None and node.has_value else None

    def longest_match(self, name: AnyName) -> tuple[Prefix, V] | None:
        node = self._roots.get(name.principal.public_key_hash)
        if node is None:
            return None
        best = (node.prefix, node.value) if node.has_value else None
        for comp in name.components:
            node = node.children.get(comp)
            if node is None:
                break
            if node.has_value:
                best = (node.prefix, node.value)
        return best

    def items(self) -> Iterator[tuple[Prefix, V]]:
        stack = list(self._roots.values())
        out = []
        while stack:
            node = stack.pop()
            if node.has_value:
                out.append((node.prefix, node.value))
            stack.extend(node.children.values())
        return iter(out)

    def __len__(self) -> int:
        return self._size


def longest_prefix_match(table, name: AnyName):
    """Value of the longest matching prefix, or ``None``.

    ``table`` is a :class:`PrefixTable` or any iterable of ``(Prefix, value)``.
    """
    if hasattr(table, "longest_match"):
        hit = table.longest_match(name)
    else:
        hit = LinearPrefixTable(table).longest_match(name)
    return None if hit is None else hit[1]


class MonotonicClock:
    """Per-node version source: never repeats, never goes backwards."""

    def __init__(self) -> None:
        self._last: int | None = None

    def next(self, now_ms: int, floor: int | None = None) -> int:
        candidates = [now_ms]
        if self._last is not None:
            candidates.append(self._last + 1)
        if floor is not None:
            candidates.append(floor + 1)
        self._last = max(candidates)
        return self._last

    def observe(self, version: int) -> None:
        if self._last is None or version > self._last:
            self._last = version
