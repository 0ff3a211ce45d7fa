"""Version vectors: per-device update counters with the usual componentwise order."""

from __future__ import annotations

import enum
from collections.abc import Iterable, Iterator, Mapping

from ..errors import DecodeError
from ..wire import Reader, Writer


class Order(enum.Enum):
    EQUAL = "Equal"
    DOMINATES = "Dominates"
    DOMINATED_BY = "DominatedBy"
    CONCURRENT = "Concurrent"


class VersionVector(Mapping[str, int]):
    """Immutable mapping device id -> count; absent devices read as 0."""

    __slots__ = ("_counters", "_hash")

    def __init__(self, counters: Mapping[str, int] | Iterable[tuple[str, int]] = ()) -> None:
        items = dict(counters)
        for device, count in items.items():
            if not isinstance(count, int) or count < 0:
                raise ValueError(f"counter for {device!r} must be a non-negative int")
        self._counters = {d: c for d, c in sorted(items.items()) if c > 0}
        self._hash = None

    def __getitem__(self, device: str) -> int:
        return self._counters.get(device, 0)

    def __contains__(self, device: object) -> bool:
        return device in self._counters

    def __iter__(self) -> Iterator[str]:
        return iter(self._counters)

    def __len__(self) -> int:
        return len(self._counters)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, VersionVector):
            return self._counters == other._counters
        if isinstance(other, Mapping):
            return self._counters == {k: v for k, v in other.items() if v}
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(tuple(self._counters.items()))
        return self._hash

    def __repr__(self) -> str:
        inner = ", ".join(f"{d}:{c}" for d, c in self._counters.items())
        return "{" + inner + "}"

    def increment(self, device: str) -> VersionVector:
        out = dict(self._counters)
        out[device] = out.get(device, 0) + 1
        return VersionVector(out)

    def merge(self, other: Mapping[str, int]) -> VersionVector:
        out = dict(self._counters)
        for device, count in other.items():
            if count > out.get(device, 0):
                out[device] = count
        return VersionVector(out)

    def total(self) -> int:
        return sum(self._counters.values())

    def write(self, w: Writer) -> None:
        w.u16(len(self._counters))
        for device, count in self._counters.items():
            w.text16(device).u64(count)

    @classmethod
    def read(cls, r: Reader) -> VersionVector:
        n = r.u16()
        items = []
        for _ in range(n):
            items.append((r.text16(), r.u64()))
        devices = [d for d, _ in items]
        if devices != sorted(set(devices)) or any(c == 0 for _, c in items):
            raise DecodeError("version vector is not in canonical form")
        return cls(items)

    def encode(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> VersionVector:
        r = Reader(data)
        vv = cls.read(r)
        r.expect_end()
        return vv


def vv_compare(a: Mapping[str, int], b: Mapping[str, int]) -> Order:
    a_ahead = b_ahead = False
    for device in set(a) | set(b):
        x, y = a.get(device, 0), b.get(device, 0)
        if x > y:
            a_ahead = True
        elif y > x:
            b_ahead = True
        if a_ahead and b_ahead:
            return Order.CONCURRENT
    if a_ahead:
        return Order.DOMINATES
    if b_ahead:
        return Order.DOMINATED_BY
    return Order.EQUAL


def dominated(a: Mapping[str, int], b: Mapping[str, int]) -> bool:
    """True iff ``a`` is strictly older than ``b``."""
    return vv_compare(a, b) is Order.DOMINATED_BY
