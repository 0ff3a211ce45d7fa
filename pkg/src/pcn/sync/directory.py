"""Directories as replicated documents with entry-level version vectors.

Each directory key holds a set of *siblings*: the causally maximal entries
seen for that key.  Merging two documents takes the union of siblings per
key and drops every sibling dominated by another, which makes the merge
commutative, associative and idempotent.  A tombstone is a sibling whose
``tombstone`` flag is set, so a delete that has seen an insert dominates it
while a delete that has not stays concurrent and loses to the insert.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from ..errors import DecodeError
from ..identity import DAY_MS
from ..naming import Name, canonical_encode, read_name, write_name
from ..wire import Reader, Writer
from .vv import VersionVector, dominated

TAG_DIRECTORY = 0x42
TOMBSTONE_HORIZON_MS = 90 * DAY_MS


@dataclass(frozen=True)
class DirEntry:
    target: Name
    vv: VersionVector
    device: str
    updated_at: int = 0
    tombstone: bool = False
    is_directory: bool = False

    def sort_key(self) -> tuple:
        return (self.device, self.vv.encode(), canonical_encode(self.target), self.tombstone)


class ConflictKind(enum.Enum):
    NAME = "name"
    REMOVE_UPDATE = "remove/update"


@dataclass(frozen=True)
class DirConflict:
    name: str
    kind: ConflictKind
    entries: tuple[DirEntry, ...]


def _maximal(siblings: Iterable[DirEntry]) -> tuple[DirEntry, ...]:
    unique = {(e.vv, e.device, e.target, e.tombstone, e.is_directory): e for e in siblings}
    pool = list(unique.values())
    keep = [e for e in pool if not any(dominated(e.vv, other.vv) for other in pool)]
    return tuple(sorted(keep, key=DirEntry.sort_key))


@dataclass(frozen=True)
class DirectoryDoc:
    entries: Mapping[str, tuple[DirEntry, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        normal = {k: _maximal(v) for k, v in sorted(self.entries.items()) if v}
        object.__setattr__(self, "entries", normal)

    def _key_vv(self, key: str) -> VersionVector:
        vv = VersionVector()
        for e in self.entries.get(key, ()):
            vv = vv.merge(e.vv)
        return vv

    def put(self, key: str, target: Name, device: str, *, now: int = 0, is_directory: bool = False) -> DirectoryDoc:
        """Insert or overwrite ``key``; supersedes every sibling this replica knows."""
        entry = DirEntry(target, self._key_vv(key).increment(device), device, now, False, is_directory)
        return DirectoryDoc({**self.entries, key: (entry,)})

    def remove(self, key: str, device: str, *, now: int = 0) -> DirectoryDoc:
        if key not in self.entries:
            raise KeyError(key)
        current = self.entries[key]
        tomb = DirEntry(current[0].target, self._key_vv(key).increment(device), device, now, True,
                        current[0].is_directory)
        return DirectoryDoc({**self.entries, key: (tomb,)})

    def live(self, key: str) -> tuple[DirEntry, ...]:
        return tuple(e for e in self.entries.get(key, ()) if not e.tombstone)

    def listing(self) -> dict[str, DirEntry]:
        """Visible names; conflicting targets appear as ``name#<device>``."""
        out: dict[str, DirEntry] = {}
        for key, siblings in self.entries.items():
            live = [e for e in siblings if not e.tombstone]
            targets = {e.target for e in live}
            if len(targets) <= 1:
                if live:
                    out[key] = live[0]
                continue
            for e in live:
                label = f"{key}#{e.device}"
                n = 2
                while label in out:
                    label = f"{key}#{e.device}.{n}"
                    n += 1
                out[label] = e
        return out

    def conflicts(self) -> list[DirConflict]:
        found = []
        for key, siblings in self.entries.items():
            live = [e for e in siblings if not e.tombstone]
            if len({e.target for e in live}) > 1:
                found.append(DirConflict(key, ConflictKind.NAME, tuple(live)))
            elif live and len(live) < len(siblings):
                found.append(DirConflict(key, ConflictKind.REMOVE_UPDATE, siblings))
        return found

    def version_vector(self) -> VersionVector:
        vv = VersionVector()
        for key in self.entries:
            vv = vv.merge(self._key_vv(key))
        return vv

    def gc_tombstones(self, now: int, horizon_ms: int = TOMBSTONE_HORIZON_MS) -> DirectoryDoc:
        """Forget tombstones older than the horizon that have no live sibling.

        A replica that was away longer than the horizon can resurrect a
        collected entry; that is the price of bounded metadata.
        """
        kept = {}
        for key, siblings in self.entries.items():
            if all(e.tombstone and e.updated_at < now - horizon_ms for e in siblings):
                continue
            kept[key] = siblings
        return DirectoryDoc(kept)

    # -- wire ------------------------------------------------------------------
    def encode(self) -> bytes:
        w = Writer().u8(TAG_DIRECTORY).u32(len(self.entries))
        for key, siblings in self.entries.items():
            w.text16(key).u16(len(siblings))
            for e in siblings:
                write_name(w, e.target)
                e.vv.write(w)
                w.text16(e.device).i64(e.updated_at).u8((1 if e.tombstone else 0) | (2 if e.is_directory else 0))
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> DirectoryDoc:
        r = Reader(data)
        if r.u8() != TAG_DIRECTORY:
            raise DecodeError("not a directory document")
        entries = {}
        for _ in range(r.u32()):
            key = r.text16()
            siblings = []
            for _ in range(r.u16()):
                target = read_name(r)
                vv = VersionVector.read(r)
                device = r.text16()
                updated = r.i64()
                flags = r.u8()
                if flags & ~3:
                    raise DecodeError("unknown directory entry flags")
                siblings.append(DirEntry(target, vv, device, updated, bool(flags & 1), bool(flags & 2)))
            entries[key] = tuple(siblings)
        r.expect_end()
        return cls(entries)


def merge_directory(local: DirectoryDoc, remote: DirectoryDoc) -> tuple[DirectoryDoc, list[DirConflict]]:
    keys = set(local.entries) | set(remote.entries)
    merged = DirectoryDoc({k: local.entries.get(k, ()) + remote.entries.get(k, ()) for k in keys})
    return merged, merged.conflicts()
