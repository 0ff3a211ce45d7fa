"""Binary deltas between two versions of a file.

Both inputs are cut into content-defined chunks (a gear rolling hash picks
the boundaries, so an insertion only disturbs the chunks around it) and the
chunk sequences are aligned with :class:`difflib.SequenceMatcher`.  Each
non-equal opcode becomes one ``(offset, delete_length, insert_bytes)``
record, with offsets in base coordinates.
"""

from __future__ import annotations

import difflib
import hashlib
from dataclasses import dataclass
from typing import TypeVar

from ..access.envelope import SecureEnvelope
from ..errors import BaseMismatch, DecodeError
from ..wire import Reader, Writer

TAG_DELTA = 0x41

_MIN_CHUNK = 16
_MAX_CHUNK = 512
_MASK = (1 << 6) - 1  # ~64-byte average chunks
_GEAR = [int.from_bytes(hashlib.sha256(bytes([i])).digest()[:4], "big") for i in range(256)]


@dataclass(frozen=True)
class DeltaRecord:
    offset: int
    delete_length: int
    insert: bytes


@dataclass(frozen=True)
class DeltaDoc:
    base_version: int
    records: tuple[DeltaRecord, ...] = ()
    # signature of the rebuilt data packet, so a receiver holding only the
    # base can reconstruct a packet that still verifies end-to-end
    target_signature: bytes = b""

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))

    @property
    def empty(self) -> bool:
        return not self.records

    def encode(self) -> bytes:
        w = Writer().u8(TAG_DELTA).i64(self.base_version).u32(len(self.records))
        for rec in self.records:
            w.u32(rec.offset).u32(rec.delete_length).bytes32(rec.insert)
        w.bytes16(self.target_signature)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> DeltaDoc:
        r = Reader(data)
        if r.u8() != TAG_DELTA:
            raise DecodeError("not a delta document")
        base = r.i64()
        records = []
        last_end = 0
        for _ in range(r.u32()):
            rec = DeltaRecord(r.u32(), r.u32(), r.bytes32())
            if rec.offset < last_end:
                raise DecodeError("delta records overlap or are out of order")
            last_end = rec.offset + rec.delete_length
            records.append(rec)
        sig = r.bytes16()
        r.expect_end()
        return cls(base, tuple(records), sig)


def chunk_boundaries(data: bytes) -> list[int]:
    """End offsets of content-defined chunks covering ``data``."""
    ends = []
    h = 0
    start = 0
    for i, byte in enumerate(data):
        h = ((h << 1) + _GEAR[byte]) & 0xFFFFFFFF
        size = i + 1 - start
        if (size >= _MIN_CHUNK and (h & _MASK) == 0) or size >= _MAX_CHUNK:
            ends.append(i + 1)
            start = i + 1
            h = 0
    if start < len(data):
        ends.append(len(data))
    return ends


def _chunks(data: bytes) -> tuple[list[bytes], list[int]]:
    starts = [0]
    pieces = []
    for end in chunk_boundaries(data):
        pieces.append(data[starts[-1]:end])
        starts.append(end)
    return pieces, starts


def diff_bytes(base: bytes, new: bytes) -> tuple[DeltaRecord, ...]:
    if base == new:
        return ()
    a, a_starts = _chunks(base)
    b, b_starts = _chunks(new)
    matcher = difflib.SequenceMatcher(None, a, b, autojunk=False)
    records = []
    for op, i1, i2, j1, j2 in matcher.get_opcodes():
        if op == "equal":
            continue
        offset = a_starts[i1]
        records.append(DeltaRecord(offset, a_starts[i2] - offset, new[b_starts[j1]:b_starts[j2]]))
    return tuple(records)


def patch_bytes(base: bytes, records: tuple[DeltaRecord, ...]) -> bytes:
    out = []
    pos = 0
    for rec in records:
        if rec.offset < pos or rec.offset + rec.delete_length > len(base):
            raise DecodeError("delta record outside the base")
        out.append(base[pos:rec.offset])
        out.append(rec.insert)
        pos = rec.offset + rec.delete_length
    out.append(base[pos:])
    return b"".join(out)


T = TypeVar("T", bytes, SecureEnvelope)


def _as_bytes(value: bytes | SecureEnvelope) -> bytes:
    return value.encode() if isinstance(value, SecureEnvelope) else bytes(value)


def make_delta(base: bytes | SecureEnvelope, new: bytes | SecureEnvelope, *, base_version: int = 0,
               target_signature: bytes = b"") -> DeltaDoc:
    return DeltaDoc(base_version, diff_bytes(_as_bytes(base), _as_bytes(new)), target_signature)


def apply_delta(base: T, delta: DeltaDoc, *, local_version: int | None = None) -> T:
    """Rebuild the new version; ``local_version`` must equal the delta's base."""
    if local_version is not None and local_version != delta.base_version:
        raise BaseMismatch(f"local version {local_version}, delta expects {delta.base_version}")
    rebuilt = patch_bytes(_as_bytes(base), delta.records)
    if isinstance(base, SecureEnvelope):
        return SecureEnvelope.decode(rebuilt)
    return rebuilt
