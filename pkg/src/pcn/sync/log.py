"""The per-device log of accepted prefix announcements, served to rejoining peers."""

from __future__ import annotations

from collections import deque
from collections.abc import Iterable, Iterator

from ..errors import DecodeError
from ..naming import Name, Principal
from ..router.packets import Announcement
from ..wire import Reader, Writer

TAG_PREFIX_LOG = 0x43
LOG_CAPACITY = 10_000


def log_name(principal: Principal, device: str) -> Name:
    return Name(principal, ("dev", device, "received_prefix"))


class ReceivedPrefixLog:
    """Arrival-ordered ring buffer; ``first_seq`` counts entries pushed out."""

    def __init__(self, capacity: int = LOG_CAPACITY) -> None:
        self.capacity = capacity
        self._entries: deque[Announcement] = deque(maxlen=capacity)
        self.first_seq = 0

    def append(self, ann: Announcement) -> None:
        if len(self._entries) == self.capacity:
            self.first_seq += 1
        self._entries.append(ann)

    @property
    def next_seq(self) -> int:
        return self.first_seq + len(self._entries)

    def since(self, seq: int) -> list[Announcement]:
        skip = max(0, seq - self.first_seq)
        return list(self._entries)[skip:]

    def __iter__(self) -> Iterator[Announcement]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def encode(self) -> bytes:
        w = Writer().u8(TAG_PREFIX_LOG).u64(self.first_seq).u32(len(self._entries))
        for ann in self._entries:
            w.bytes32(ann.encode())
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes, capacity: int = LOG_CAPACITY) -> ReceivedPrefixLog:
        r = Reader(data)
        if r.u8() != TAG_PREFIX_LOG:
            raise DecodeError("not a received-prefix log")
        log = cls(capacity)
        first = r.u64()
        for _ in range(r.u32()):
            log._entries.append(Announcement.decode(r.bytes32()))
        r.expect_end()
        log.first_seq = first
        return log


def dedupe(announcements: Iterable[Announcement], seen: set[tuple[bytes, int]]) -> list[Announcement]:
    """Announcements whose ``(signer, nonce)`` is not in ``seen``, first occurrence only."""
    out = []
    local = set(seen)
    for ann in announcements:
        if ann.replay_key in local:
            continue
        local.add(ann.replay_key)
        out.append(ann)
    return out
