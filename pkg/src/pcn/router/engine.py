"""Per-node forwarding: interest/data processing and verified announcements.

A :class:`Router` never sends anything itself.  Each ``process_*`` call
returns what should happen next (an action, the faces to deliver to, or an
announcement effect) and the owning device does the I/O.
"""

from __future__ import annotations

import enum
import random
import secrets
from collections import Counter, OrderedDict
from collections.abc import Callable, MutableMapping
from dataclasses import dataclass, field, replace
from typing import Union

from ..errors import NotAuthorized
from ..identity import DAY_MS, DelegationCert, KeyPair, PublicKey
from ..naming import Name, Prefix
from ..sync.vv import VersionVector, dominated
from .packets import (
    Announcement,
    AnnouncementKind,
    DataPacket,
    Interest,
    ModificationPayload,
    Payload,
    RegularPayload,
    RevocationPayload,
    signer_authorized,
)
from .tables import ContentStore, FaceRoute, Fib, Pit, PitEntry

LOCAL_FACE = "app"


# -- interest actions ----------------------------------------------------------------

@dataclass(frozen=True)
class ServeData:
    packet: DataPacket
    tier: str


@dataclass(frozen=True)
class Forward:
    faces: tuple[str, ...]
    interest: Interest


@dataclass(frozen=True)
class Drop:
    reason: str


Action = Union[ServeData, Forward, Drop]


# -- announcement effects -------------------------------------------------------------

class RejectReason(str, enum.Enum):
    BAD_SIGNATURE = "BadSignature"
    EXPIRED = "Expired"
    REPLAYED = "Replayed"
    BAD_DELEGATION = "BadDelegation"
    REVOKED = "Revoked"


@dataclass(frozen=True)
class FibUpdated:
    prefix: Prefix
    withdrawn: bool = False


@dataclass(frozen=True)
class CacheInvalidated:
    count: int
    name: Name


@dataclass(frozen=True)
class KeyRevoked:
    key_hash: bytes
    purged_routes: int
    purged_packets: int


@dataclass(frozen=True)
class Rejected:
    reason: RejectReason


Effect = Union[FibUpdated, CacheInvalidated, KeyRevoked, Rejected]


@dataclass
class RouterConfig:
    cache_capacity: int = 64
    pit_ttl_ms: int = 4_000
    announcement_lifetime_ms: int = DAY_MS
    replay_window: int = 4096
    interest_nonce_window: int = 65_536
    cache_unsolicited: bool = False
    multicast: bool = False


class _LruSet:
    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self._items: OrderedDict[object, None] = OrderedDict()

    def __contains__(self, item: object) -> bool:
        return item in self._items

    def add(self, item: object) -> None:
        self._items[item] = None
        self._items.move_to_end(item)
        while len(self._items) > self.capacity:
            self._items.popitem(last=False)

    def __len__(self) -> int:
        return len(self._items)


Observer = Callable[[dict], None]


@dataclass
class _Watermark:
    entries: list[tuple[int, VersionVector]] = field(default_factory=list)

    def add(self, version: int, vv: VersionVector) -> None:
        if any(vv == old or dominated(vv, old) for _, old in self.entries):
            return
        self.entries = [(v, old) for v, old in self.entries if not dominated(old, vv)]
        self.entries.append((version, vv))

    def stale(self, packet: DataPacket) -> bool:
        for version, vv in self.entries:
            if packet.version_vector is not None:
                if dominated(packet.version_vector, vv):
                    return True
            elif packet.name.version is not None and packet.name.version < version:
                return True
        return False


class Router:
    def __init__(self, node_id: str, config: RouterConfig | None = None, *,
                 repository: MutableMapping[Name, DataPacket] | None = None,
                 observer: Observer | None = None) -> None:
        self.node_id = node_id
        self.config = config or RouterConfig()
        self.fib = Fib()
        self.pit = Pit()
        self.store = ContentStore(self.config.cache_capacity, repository)
        self.metrics: Counter[str] = Counter()
        self.revoked: set[bytes] = set()
        self._interest_nonces = _LruSet(self.config.interest_nonce_window)
        self._announcement_nonces = _LruSet(self.config.replay_window)
        self._watermarks: dict[Name, _Watermark] = {}
        self.observer = observer

    def _emit(self, **event) -> None:
        if self.observer is not None:
            event["node"] = self.node_id
            self.observer(event)

    # -- interests ------------------------------------------------------------
    def process_interest(self, interest: Interest, from_face: str, now: int, *,
                         via: str | None = None) -> Action:
        """Serve from the content store, else aggregate or forward.

        ``via`` skips the FIB and sends the interest to that face, which is
        how a device directs a fetch at the neighbor that announced an update.
        """
        self.metrics["interests_in"] += 1
        if interest.nonce in self._interest_nonces:
            self.metrics["interests_dropped_duplicate"] += 1
            return Drop("duplicate nonce")
        self._interest_nonces.add(interest.nonce)

        hit = self.store.lookup(interest.name)
        if hit is not None:
            packet, tier = hit
            self.metrics["data_served_cache" if tier == "cache" else "data_served_repo"] += 1
            self._emit(kind="serve", name=packet.name, vv=packet.version_vector, tier=tier, time=now)
            return ServeData(packet, tier)

        existing = self.pit.get(interest.name)
        if existing is not None and not existing.expired(now):
            existing.incoming_faces.add(from_face)
            existing.nonces.add(interest.nonce)
            self.metrics["interests_aggregated"] += 1
            return Drop("aggregated")
        if existing is not None:
            self.pit.remove(interest.name)

        if via is not None:
            faces: tuple[str, ...] = (via,)
        else:
            entry = self.fib.lookup(interest.name, now)
            ranked = entry.ranked_faces(exclude=from_face) if entry is not None else []
            if not ranked:
                self.metrics["interests_dropped_no_route"] += 1
                return Drop("no route")
            faces = tuple(ranked) if self.config.multicast else (ranked[0],)
        self.pit.add(PitEntry(interest.name, {from_face}, now, self.config.pit_ttl_ms, {interest.nonce}))
        self.metrics["interests_out"] += len(faces)
        return Forward(faces, interest)

    # -- data -------------------------------------------------------------------
    def process_data(self, packet: DataPacket, from_face: str, now: int) -> frozenset[str]:
        """Verify the secure binding, then return the reverse-path faces."""
        self.metrics["data_in"] += 1
        if not packet.verify(now, self.revoked):
            self.metrics["data_rejected_signature"] += 1
            return frozenset()
        mark = self._watermarks.get(packet.name.unversioned())
        if mark is not None and mark.stale(packet):
            self.metrics["data_dropped_stale"] += 1
            return frozenset()
        matches = [e for e in self.pit.matching(packet.name) if not e.expired(now)]
        if not matches:
            self.metrics["data_unsolicited"] += 1
            if self.config.cache_unsolicited:
                self.store.cache(packet)
            return frozenset()
        self.store.cache(packet)
        faces: set[str] = set()
        for entry in matches:
            faces |= entry.incoming_faces
            self.pit.remove(entry.name)
        faces.discard(from_face)
        self.metrics["data_out"] += len(faces - {LOCAL_FACE})
        return frozenset(faces)

    def publish(self, packet: DataPacket) -> None:
        """Place locally produced or replicated content in the repository."""
        self.store.store(packet)

    # -- announcements ---------------------------------------------------------------
    def announce(self, kind: AnnouncementKind, prefix: Prefix, payload: Payload, signer: KeyPair,
                 now: int, *, delegation: DelegationCert | None = None,
                 rng: random.Random | None = None) -> Announcement:
        return announce(kind, prefix, payload, signer, now, delegation=delegation,
                        lifetime_ms=self.config.announcement_lifetime_ms, rng=rng)

    def check_announcement(self, ann: Announcement, now: int) -> RejectReason | None:
        if ann.expires_at <= now:
            return RejectReason.EXPIRED
        if not ann.signature_valid():
            return RejectReason.BAD_SIGNATURE
        if ann.kind is not AnnouncementKind.REVOCATION and (
                ann.signer_key.key_hash in self.revoked or ann.prefix.principal.public_key_hash in self.revoked):
            return RejectReason.REVOKED
        if not ann.authorized(now):
            return RejectReason.BAD_DELEGATION
        if ann.replay_key in self._announcement_nonces:
            return RejectReason.REPLAYED
        return None

    def note_originated(self, ann: Announcement) -> None:
        """Remember our own announcement so flooded echoes count as replays."""
        self._announcement_nonces.add(ann.replay_key)
        if ann.kind is AnnouncementKind.MODIFICATION:
            file_name = ann.payload.name.unversioned()
            self._watermarks.setdefault(file_name, _Watermark()).add(ann.payload.version, ann.payload.version_vector)

    def process_announcement(self, ann: Announcement, from_face: str, now: int, *, cost: int = 1) -> Effect:
        reason = self.check_announcement(ann, now)
        if reason is not None:
            self.metrics[f"announcements_rejected_{reason.value}"] += 1
            return Rejected(reason)
        self._announcement_nonces.add(ann.replay_key)
        self.metrics["announcements_accepted"] += 1
        route = FaceRoute(cost, ann.expires_at, ann.signer_key.key_hash, ann.signature)

        if ann.kind is AnnouncementKind.REGULAR:
            if ann.payload.withdraw:
                self.fib.withdraw(ann.prefix, from_face)
                return FibUpdated(ann.prefix, withdrawn=True)
            self.fib.upsert(ann.prefix, from_face, route)
            return FibUpdated(ann.prefix)

        if ann.kind is AnnouncementKind.MODIFICATION:
            payload: ModificationPayload = ann.payload
            self.fib.upsert(ann.prefix, from_face, route)
            file_name = payload.name.unversioned()
            self._watermarks.setdefault(file_name, _Watermark()).add(payload.version, payload.version_vector)
            count = self.store.invalidate_older(file_name, payload.version, payload.version_vector)
            self.metrics["cache_invalidations"] += count
            self._emit(kind="modification", name=payload.name, vv=payload.version_vector, time=now)
            return CacheInvalidated(count, payload.name)

        revoked = ann.payload.revoked_key_hash
        self.revoked.add(revoked)
        routes = self.fib.purge(lambda p, r: r.signer_key_hash == revoked or p.principal.public_key_hash == revoked)
        packets = self.store.purge(
            lambda pkt: pkt.signer_key.key_hash == revoked or pkt.name.principal.public_key_hash == revoked)
        return KeyRevoked(revoked, routes, packets)

    # -- housekeeping ---------------------------------------------------------------
    def expire(self, now: int) -> None:
        self.pit.expire(now)
        self.fib.expire(now)

    def fib_size(self) -> tuple[int, int]:
        return len(self.fib), self.fib.size_bytes()


def announce(kind: AnnouncementKind, prefix: Prefix, payload: Payload, signer: KeyPair, now: int, *,
             delegation: DelegationCert | None = None, lifetime_ms: int = DAY_MS,
             rng: random.Random | None = None, nonce: int | None = None) -> Announcement:
    """Build and sign an announcement; the signer must own or hold a delegation for ``prefix``."""
    signer_key = PublicKey.of(signer)
    if kind is AnnouncementKind.REVOCATION:
        if not isinstance(payload, RevocationPayload) or payload.revoked_key_hash != signer.key_hash:
            raise NotAuthorized("a revocation can only name the signer's own key")
    elif not signer_authorized(signer_key, prefix, delegation, now):
        raise NotAuthorized(f"{signer.key_hash.hex()[:12]} may not announce {prefix}")
    if nonce is None:
        nonce = (rng or secrets.SystemRandom()).getrandbits(64)
    unsigned = Announcement(kind, prefix, payload, signer_key, nonce, now + lifetime_ms, delegation)
    return replace(unsigned, signature=signer.sign(unsigned.signed_bytes()))


def regular(prefix: Prefix, signer: KeyPair, now: int, **kw) -> Announcement:
    return announce(AnnouncementKind.REGULAR, prefix, RegularPayload(), signer, now, **kw)
