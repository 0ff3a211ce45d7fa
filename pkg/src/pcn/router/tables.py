"""FIB, PIT and the two-tier content store."""

from __future__ import annotations

from collections import OrderedDict
from collections.abc import Iterator, MutableMapping
from dataclasses import dataclass, field

from ..naming import AnyName, Name, Prefix, PrefixTrie, canonical_encode
from ..sync.vv import VersionVector, dominated
from .packets import DataPacket


@dataclass
class FaceRoute:
    cost: int
    expires_at: int
    signer_key_hash: bytes
    origin_signature: bytes


@dataclass
class FibEntry:
    """All faces a prefix was heard on, each with its own announcement metadata."""

    prefix: Prefix
    routes: dict[str, FaceRoute] = field(default_factory=dict)

    @property
    def faces(self) -> frozenset[str]:
        return frozenset(self.routes)

    @property
    def expires_at(self) -> int:
        return max((r.expires_at for r in self.routes.values()), default=0)

    @property
    def origin_signature(self) -> bytes:
        return self.best_route()[1].origin_signature if self.routes else b""

    def best_route(self, exclude: str | None = None) -> tuple[str, FaceRoute] | None:
        candidates = [(r.cost, face, r) for face, r in self.routes.items() if face != exclude]
        if not candidates:
            return None
        cost, face, route = min(candidates, key=lambda c: (c[0], c[1]))
        return face, route

    def ranked_faces(self, exclude: str | None = None) -> list[str]:
        return [f for _, f in sorted((r.cost, f) for f, r in self.routes.items() if f != exclude)]

    def size_bytes(self) -> int:
        return len(canonical_encode(self.prefix))


class Fib:
    def __init__(self) -> None:
        self._table: PrefixTrie[FibEntry] = PrefixTrie()

    def upsert(self, prefix: Prefix, face: str, route: FaceRoute) -> FibEntry:
        entry = self._table.get(prefix)
        if entry is None:
            entry = FibEntry(prefix)
            self._table.insert(prefix, entry)
        entry.routes[face] = route
        return entry

    def withdraw(self, prefix: Prefix, face: str) -> bool:
        entry = self._table.get(prefix)
        if entry is None or face not in entry.routes:
            return False
        del entry.routes[face]
        if not entry.routes:
            self._table.remove(prefix)
        return True

    def get(self, prefix: Prefix) -> FibEntry | None:
        return self._table.get(prefix)

    def lookup(self, name: AnyName, now: int) -> FibEntry | None:
        """Longest live match; expired routes are pruned on the way."""
        while True:
            hit = self._table.longest_match(name)
            if hit is None:
                return None
            prefix, entry = hit
            for face in [f for f, r in entry.routes.items() if r.expires_at <= now]:
                del entry.routes[face]
            if entry.routes:
                return entry
            self._table.remove(prefix)

    def purge(self, predicate) -> int:
        removed = 0
        for prefix, entry in list(self._table.items()):
            for face in [f for f, r in entry.routes.items() if predicate(prefix, r)]:
                del entry.routes[face]
                removed += 1
            if not entry.routes:
                self._table.remove(prefix)
        return removed

    def expire(self, now: int) -> int:
        return self.purge(lambda _p, r: r.expires_at <= now)

    def entries(self) -> Iterator[FibEntry]:
        for _, entry in self._table.items():
            yield entry

    def __len__(self) -> int:
        return len(self._table)

    def size_bytes(self) -> int:
        return sum(e.size_bytes() for e in self.entries())


def satisfies(interest_name: Name, data_name: Name) -> bool:
    """Exact match, or a version-less interest matched by any version."""
    if interest_name.principal != data_name.principal or interest_name.components != data_name.components:
        return False
    if interest_name.version is None:
        return data_name.segment in (None, 0)
    if interest_name.version != data_name.version:
        return False
    return interest_name.segment == data_name.segment or (interest_name.segment is None and data_name.segment in (None, 0))


@dataclass
class PitEntry:
    name: Name
    incoming_faces: set[str]
    created_at: int
    ttl: int
    nonces: set[int] = field(default_factory=set)

    def expired(self, now: int) -> bool:
        return now >= self.created_at + self.ttl


class Pit:
    def __init__(self) -> None:
        self._entries: dict[Name, PitEntry] = {}
        self._by_file: dict[Name, set[Name]] = {}

    def get(self, name: Name) -> PitEntry | None:
        return self._entries.get(name)

    def add(self, entry: PitEntry) -> None:
        self._entries[entry.name] = entry
        self._by_file.setdefault(entry.name.unversioned(), set()).add(entry.name)

    def remove(self, name: Name) -> PitEntry | None:
        entry = self._entries.pop(name, None)
        if entry is not None:
            bucket = self._by_file.get(name.unversioned())
            if bucket is not None:
                bucket.discard(name)
                if not bucket:
                    del self._by_file[name.unversioned()]
        return entry

    def matching(self, data_name: Name) -> list[PitEntry]:
        names = self._by_file.get(data_name.unversioned(), ())
        return [self._entries[n] for n in sorted(names, key=canonical_encode) if satisfies(n, data_name)]

    def expire(self, now: int) -> int:
        stale = [n for n, e in self._entries.items() if e.expired(now)]
        for n in stale:
            self.remove(n)
        return len(stale)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[PitEntry]:
        return iter(list(self._entries.values()))


def _is_older(packet: DataPacket, version: int, vv: VersionVector | None) -> bool:
    if vv is not None and packet.version_vector is not None:
        return dominated(packet.version_vector, vv)
    return packet.name.version is not None and packet.name.version < version


class ContentStore:
    """Bounded LRU memory cache in front of an unbounded repository.

    ``repository`` may be any mutable mapping from :class:`Name` to
    :class:`DataPacket` (the CLI passes a directory-backed one).  Lookups try
    the cache first and only touch the repository on a miss.
    """

    def __init__(self, capacity: int = 64, repository: MutableMapping[Name, DataPacket] | None = None) -> None:
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self.memory_cache: OrderedDict[Name, DataPacket] = OrderedDict()
        self.repository: MutableMapping[Name, DataPacket] = {} if repository is None else repository
        self._cache_index: dict[Name, set[Name]] = {}
        self._repo_index: dict[Name, set[Name]] = {}
        for name in list(self.repository.keys()):
            self._repo_index.setdefault(name.unversioned(), set()).add(name)

    # -- insertion -------------------------------------------------------------
    def cache(self, packet: DataPacket) -> None:
        name = packet.name
        if self.capacity == 0:
            return
        if name in self.memory_cache:
            self.memory_cache.move_to_end(name)
        self.memory_cache[name] = packet
        self._cache_index.setdefault(name.unversioned(), set()).add(name)
        while len(self.memory_cache) > self.capacity:
            old, _ = self.memory_cache.popitem(last=False)
            self._unindex(self._cache_index, old)

    def store(self, packet: DataPacket) -> None:
        self.repository[packet.name] = packet
        self._repo_index.setdefault(packet.name.unversioned(), set()).add(packet.name)

    @staticmethod
    def _unindex(index: dict[Name, set[Name]], name: Name) -> None:
        bucket = index.get(name.unversioned())
        if bucket is not None:
            bucket.discard(name)
            if not bucket:
                del index[name.unversioned()]

    # -- lookup ---------------------------------------------------------------
    def lookup(self, name: Name) -> tuple[DataPacket, str] | None:
        """Return ``(packet, tier)`` with tier ``"cache"`` or ``"repository"``."""
        if name.version is None:
            return self._latest(name)
        if name in self.memory_cache:
            self.memory_cache.move_to_end(name)
            return self.memory_cache[name], "cache"
        if name in self._repo_index.get(name.unversioned(), ()):
            return self.repository[name], "repository"
        if name.segment is None and name.with_segment(0) in self._all_names(name):
            return self.lookup(name.with_segment(0))
        return None

    def _all_names(self, name: Name) -> set[Name]:
        key = name.unversioned()
        return self._cache_index.get(key, set()) | self._repo_index.get(key, set())

    def _latest(self, name: Name) -> tuple[DataPacket, str] | None:
        candidates = [n for n in self._all_names(name) if satisfies(name, n)]
        if not candidates:
            return None
        best = max(candidates, key=lambda n: (n.version, canonical_encode(n)))
        return self.lookup(best)

    def versions(self, name: Name) -> list[DataPacket]:
        out = []
        for n in sorted(self._all_names(name), key=lambda n: (n.version or 0, canonical_encode(n))):
            found = self.memory_cache.get(n) or self.repository.get(n)
            if found is not None:
                out.append(found)
        return out

    def __contains__(self, name: Name) -> bool:
        return name in self.memory_cache or name in self._repo_index.get(name.unversioned(), ())

    # -- removal --------------------------------------------------------------
    def remove(self, name: Name) -> bool:
        hit = False
        if self.memory_cache.pop(name, None) is not None:
            self._unindex(self._cache_index, name)
            hit = True
        if name in self._repo_index.get(name.unversioned(), ()):
            del self.repository[name]
            self._unindex(self._repo_index, name)
            hit = True
        return hit

    def invalidate_older(self, file_name: Name, version: int, vv: VersionVector | None) -> int:
        """Drop every stored version of ``file_name`` older than the announced one."""
        count = 0
        for n in list(self._all_names(file_name)):
            packet = self.memory_cache.get(n) or self.repository.get(n)
            if packet is not None and _is_older(packet, version, vv):
                self.remove(n)
                count += 1
        return count

    def purge(self, predicate) -> int:
        count = 0
        names = list(self.memory_cache) + [n for b in self._repo_index.values() for n in b]
        for n in dict.fromkeys(names):
            packet = self.memory_cache.get(n) or self.repository.get(n)
            if packet is not None and predicate(packet):
                self.remove(n)
                count += 1
        return count

    def names(self) -> list[Name]:
        out = set(self.memory_cache)
        for bucket in self._repo_index.values():
            out |= bucket
        return sorted(out, key=canonical_encode)
