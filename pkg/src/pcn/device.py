"""One PCN device: a router, its replicas and its command file, behind a transport.

The device is event driven.  Everything it does is a reaction to
:meth:`Device.on_frame` (a message from a neighbor), a timer it scheduled
through the transport, or a direct call from the user (publish, update,
replicate).  The simulator provides one transport; a real deployment would
provide another with sockets and wall-clock timers.
"""

from __future__ import annotations

import random
from collections import Counter
from collections.abc import Callable, MutableMapping
from dataclasses import dataclass, field, replace
from typing import Protocol

from .access.abe import AbeKeyring, AbePublicKey, AttributeSecretKey, abe_keygen, rekey_lazy
from .access.envelope import SecureEnvelope, envelope_decrypt, envelope_encrypt, envelope_update
from .access.policy import Attribute, Leaf, PolicyTree, attributes_of
from .errors import (
    DecodeError,
    EpochMismatch,
    NoNeighborsReachable,
    NotAuthorized,
    NotOwner,
    PCNError,
    PolicyNotSatisfied,
)
from .identity import DelegationCert, KeyPair, verify_delegation
from .naming import MonotonicClock, Name, Prefix, Principal, is_prefix_of
from .replica_mgmt import (
    COMMAND_EXPIRY_MS,
    CommandFile,
    CommandOp,
    Skipped,
    command_file_name,
    device_name,
    execute_commands,
    issue_command,
)
from .router.engine import (
    LOCAL_FACE,
    Effect,
    Forward,
    KeyRevoked,
    Rejected,
    Router,
    RouterConfig,
    ServeData,
    announce,
)
from .router.packets import (
    Announcement,
    AnnouncementKind,
    ContentType,
    DataPacket,
    Interest,
    ModificationPayload,
    RegularPayload,
    RevocationPayload,
    decode_packet,
)
from .sync.delta import DeltaDoc, apply_delta, make_delta
from .sync.directory import DirectoryDoc, merge_directory
from .sync.log import ReceivedPrefixLog, dedupe, log_name
from .sync.replica import (
    Outcome,
    Replica,
    ReplicaState,
    Revision,
    accepts_remote,
    apply_fetched,
    local_update,
    needs_fetch,
)
from .sync.vv import Order, VersionVector, dominated, vv_compare
from .wire import Reader, Writer

OWNER_ATTRIBUTE = "~owner"
DELTA_LEAF = ".delta"

F_PACKET, F_ANNOUNCE, F_PING, F_PONG = 1, 2, 3, 4


def owner_only_policy(principal: Principal) -> PolicyTree:
    return Leaf(Attribute(OWNER_ATTRIBUTE, principal))


# -- link framing ---------------------------------------------------------------------

def packet_frame(packet) -> bytes:
    return bytes([F_PACKET]) + packet.encode()


def announce_frame(ann: Announcement, hops_left: int) -> bytes:
    return Writer().u8(F_ANNOUNCE).u8(hops_left).raw(ann.encode()).getvalue()


def ping_frame(kind: int, seq: int) -> bytes:
    return Writer().u8(kind).u32(seq & 0xFFFFFFFF).getvalue()


class Transport(Protocol):
    rng: random.Random

    def now(self) -> int: ...
    def send(self, src: str, dst: str, frame: bytes) -> None: ...
    def schedule(self, delay_ms: int, callback: Callable[[], None], *, maintenance: bool = False) -> None: ...


@dataclass(frozen=True)
class PeerInfo:
    node_id: str
    principal: Principal
    device: str


@dataclass
class DeviceConfig:
    router: RouterConfig = field(default_factory=RouterConfig)
    ping_interval_ms: int = 10_000
    fetch_timeout_ms: int = 4_500
    fetch_attempts: int = 4
    announce_scope: int = 1
    use_deltas: bool = False
    command_expiry_ms: int = COMMAND_EXPIRY_MS


Resolver = Callable[["Device", Replica], "bytes | None"]


@dataclass
class _Fetch:
    name: Name
    faces: list[str]
    callbacks: list[tuple[Callable[[DataPacket], None], Callable[[], None] | None]]
    vv: VersionVector | None = None
    attempt: int = 0
    cancelled: bool = False


class Device:
    def __init__(self, node_id: str, keys: KeyPair, device: str, transport: Transport, *,
                 label: str = "", keyring: AbeKeyring | None = None, config: DeviceConfig | None = None,
                 trace: Callable[[dict], None] | None = None, resolver: Resolver | None = None,
                 repository: MutableMapping[Name, DataPacket] | None = None) -> None:
        self.node_id = node_id
        self.keys = keys
        self.principal = keys.principal(label)
        self.device = device
        self.replica_id = node_id
        self.transport = transport
        self.config = config or DeviceConfig()
        self._trace = trace
        self.resolver = resolver
        self.router = Router(node_id, self.config.router, repository=repository, observer=self._router_event)
        self.peers: dict[str, PeerInfo] = {}
        self.peer_up: dict[str, bool] = {}
        self._awaiting_pong: set[str] = set()
        self._ping_seq = 0
        self.online = True

        self.keyrings: dict[int, AbeKeyring] = {}
        if keyring is not None:
            if keyring.owner != self.principal:
                raise NotOwner("keyring belongs to another principal")
            keyring.define([Attribute(OWNER_ATTRIBUTE, self.principal)])
            self.keyrings[keyring.epoch] = keyring
        self._pk_cache: dict[int, AbePublicKey] = {}
        self._owner_sk: dict[int, AttributeSecretKey] = {}
        self.secret_keys: dict[bytes, dict[int, AttributeSecretKey]] = {}
        self.public_keys: dict[bytes, AbePublicKey] = {}
        self.delegations: list[DelegationCert] = []

        self.replicas: dict[Name, Replica] = {}
        self.kinds: dict[Name, ContentType] = {}
        self.replicated: set[Prefix] = set()
        self._announced_prefixes: set[Prefix] = set()
        self.log = ReceivedPrefixLog()
        self._log_packet: DataPacket | None = None
        self.seen: set[tuple[bytes, int]] = set()
        self._peer_log_seq: dict[str, int] = {}
        self.clock = MonotonicClock()
        self.executed_commands: set[bytes] = set()
        self.command_file: CommandFile | None = None
        self._pending: dict[Name, _Fetch] = {}
        self.stats: Counter[str] = Counter()

    # -- plumbing -----------------------------------------------------------------------
    @property
    def now(self) -> int:
        return self.transport.now()

    @property
    def rng(self) -> random.Random:
        return self.transport.rng

    def trace(self, kind: str, **fields) -> None:
        if self._trace is not None:
            self._trace({"time": self.now, "node": self.node_id, "kind": kind, **fields})

    def _router_event(self, event: dict) -> None:
        if self._trace is not None:
            self._trace(event)

    def _send(self, dst: str, frame: bytes) -> None:
        self.transport.send(self.node_id, dst, frame)

    def add_peer(self, peer: PeerInfo, up: bool = True) -> None:
        if peer.node_id == self.node_id:
            return
        self.peers[peer.node_id] = peer
        self.peer_up[peer.node_id] = up

    def start(self) -> None:
        offset = self.rng.randrange(self.config.ping_interval_ms)
        self.transport.schedule(offset, self._ping_tick, maintenance=True)

    def up_peers(self) -> list[str]:
        return sorted(p for p, up in self.peer_up.items() if up)

    @property
    def is_owner_device(self) -> bool:
        return bool(self.keyrings)

    def owns(self, name: Name | Prefix) -> bool:
        return name.principal.public_key_hash == self.keys.key_hash

    # -- keys ------------------------------------------------------------------------------
    @property
    def keyring(self) -> AbeKeyring:
        if not self.keyrings:
            raise NotOwner(f"{self.node_id} holds no keyring")
        return self.keyrings[max(self.keyrings)]

    def public_key(self, owner_hash: bytes | None = None) -> AbePublicKey:
        if owner_hash is None or owner_hash == self.keys.key_hash:
            ring = self.keyring
            if ring.epoch not in self._pk_cache or self._pk_cache[ring.epoch].attribute_keys.keys() != ring.attributes:
                self._pk_cache[ring.epoch] = ring.public_key
            return self._pk_cache[ring.epoch]
        try:
            return self.public_keys[owner_hash]
        except KeyError:
            raise PolicyNotSatisfied("no ABE public key known for that owner") from None

    def owner_secret_key(self, epoch: int) -> AttributeSecretKey:
        ring = self.keyrings.get(epoch)
        if ring is None:
            raise EpochMismatch(f"no keyring for epoch {epoch}")
        sk = self._owner_sk.get(epoch)
        if sk is None or sk.attributes != ring.attributes:
            sk = abe_keygen(ring, ring.attributes, self.principal)
            self._owner_sk[epoch] = sk
        return sk

    def secret_key_for(self, owner_hash: bytes, epoch: int) -> AttributeSecretKey:
        if owner_hash == self.keys.key_hash and self.keyrings:
            return self.owner_secret_key(epoch)
        by_epoch = self.secret_keys.get(owner_hash, {})
        if epoch in by_epoch:
            return by_epoch[epoch]
        if by_epoch:
            return by_epoch[max(by_epoch)]
        raise PolicyNotSatisfied("no attribute key issued by that owner")

    def issue_key(self, attrs, holder: Principal) -> AttributeSecretKey:
        return abe_keygen(self.keyring, attrs, holder)

    def learn_key(self, sk: AttributeSecretKey | None = None, pk: AbePublicKey | None = None) -> None:
        if sk is not None:
            self.secret_keys.setdefault(sk.owner_key_hash, {})[sk.epoch] = sk
        if pk is not None:
            self.public_keys[pk.owner_key_hash] = pk

    def add_delegation(self, cert: DelegationCert) -> None:
        self.delegations.append(cert)

    def delegation_for(self, name: Name | Prefix) -> DelegationCert | None:
        for cert in self.delegations:
            if (cert.delegate_key_hash == self.keys.key_hash
                    and verify_delegation(cert, self.now, covers=name)):
                return cert
        return None

    def rekey(self) -> AbeKeyring:
        ring = rekey_lazy(self.keyring, self.rng)
        self.keyrings[ring.epoch] = ring
        self.trace("rekey", epoch=ring.epoch)
        return ring

    # -- reading ---------------------------------------------------------------------------
    def read(self, name: Name) -> bytes:
        replica = self.replicas[name.unversioned()]
        return self.decrypt(replica.name, replica.envelope)

    def decrypt(self, name: Name, env: SecureEnvelope) -> bytes:
        sk = self.secret_key_for(name.principal.public_key_hash, env.epoch)
        return envelope_decrypt(env, sk)

    def directory(self, name: Name) -> DirectoryDoc:
        return DirectoryDoc.decode(self.read(name))

    def replicates(self, name: Name) -> bool:
        file = name.unversioned()
        return file in self.replicas or any(is_prefix_of(p, file) for p in self.replicated)

    # -- publishing ------------------------------------------------------------------------
    def _signing(self, name: Name | Prefix) -> DelegationCert | None:
        if self.owns(name):
            return None
        cert = self.delegation_for(name)
        if cert is None:
            raise NotAuthorized(f"{self.node_id} may not publish under {name}")
        return cert

    def publish(self, name: Name, content: bytes, read_policy: PolicyTree,
                write_policy: PolicyTree | None = None, *, kind: ContentType = ContentType.FILE,
                link_parent: bool = True) -> Announcement:
        """Owner-original publication of a new file (or a fresh write key for an old one)."""
        file = name.unversioned()
        if not self.owns(file) or not self.keyrings:
            raise NotOwner("only the namespace owner publishes new files")
        self.keyring.define(attributes_of(read_policy) | (attributes_of(write_policy) if write_policy else frozenset()))
        env = envelope_encrypt(self.public_key(), content, read_policy, write_policy, self.keys, rng=self.rng)
        old = self.replicas.get(file)
        floor = max((h.version for h in old.heads), default=None) if old else None
        version = self.clock.next(self.now, floor)
        if old is None:
            vv = VersionVector().increment(self.replica_id)
            rev = Revision(self.keys.key_hash, self.replica_id, self.now, version, vv, env)
            self.replicas[file] = Replica.from_revision(file, rev)
            self.kinds[file] = kind
            ann = announce(AnnouncementKind.MODIFICATION, file.prefix, ModificationPayload(file.with_version(version), vv),
                           self.keys, self.now, lifetime_ms=self.config.router.announcement_lifetime_ms, rng=self.rng)
            self._store_version(file, version, vv, env, kind, None)
            self.trace("publish", name=file, version=version, vv=vv)
            self.broadcast(ann)
        else:
            ann = self._commit_update(file, env, version, owner_update=True)
        if link_parent and file.components:
            self._link_in_parent(file, kind is ContentType.DIRECTORY)
        return ann

    def mkdir(self, prefix: Prefix, read_policy: PolicyTree | None = None,
              write_policy: PolicyTree | None = None) -> Announcement:
        policy = read_policy or owner_only_policy(self.principal)
        return self.publish(prefix.as_name(), DirectoryDoc().encode(), policy, write_policy,
                            kind=ContentType.DIRECTORY)

    def _link_in_parent(self, file: Name, is_directory: bool) -> None:
        parent = file.parent.as_name()
        replica = self.replicas.get(parent)
        if replica is None or self.kinds.get(parent) is not ContentType.DIRECTORY:
            return
        doc = self.directory(parent)
        current = doc.live(file.leaf)
        if len(current) == 1 and current[0].target == file:
            return
        self.update(parent, doc.put(file.leaf, file, self.replica_id, now=self.now, is_directory=is_directory).encode())

    def unlink(self, file: Name) -> Announcement:
        parent = file.parent.as_name()
        doc = self.directory(parent)
        return self.update(parent, doc.remove(file.leaf, self.replica_id, now=self.now).encode())

    def seal_update(self, file: Name, content: bytes, base: SecureEnvelope, version: int) -> tuple[SecureEnvelope, bool]:
        """Re-encrypt ``content`` as the next version of ``file``.

        The owner re-uses the file's write key when it still holds the
        matching epoch and otherwise republishes with a fresh key pair.
        """
        owner_hash = file.principal.public_key_hash
        if owner_hash == self.keys.key_hash and self.keyrings:
            pk = self.public_key()
            if base.write_policy is not None and base.epoch in self.keyrings:
                sk = self.owner_secret_key(base.epoch)
                return envelope_update(base, content, sk, pk, file, version, rng=self.rng), True
            return envelope_encrypt(pk, content, base.read_policy, base.write_policy, self.keys, rng=self.rng), True
        sk = self.secret_key_for(owner_hash, base.epoch)
        env = envelope_update(base, content, sk, self.public_key(owner_hash), file, version, rng=self.rng)
        return env, False

    def update(self, name: Name, content: bytes) -> Announcement:
        file = name.unversioned()
        replica = self.replicas[file]
        self._signing(file)
        version = self.clock.next(self.now, max(h.version for h in replica.heads))
        env, owner = self.seal_update(file, content, replica.envelope, version)
        return self._commit_update(file, env, version, owner_update=owner)

    def _commit_update(self, file: Name, env: SecureEnvelope, version: int, *, owner_update: bool) -> Announcement:
        replica = self.replicas[file]
        delegation = self._signing(file)
        kind = self.kinds.get(file, ContentType.FILE)
        delta = None
        delta_link = None
        if self.config.use_deltas and replica.state is ReplicaState.CLEAN:
            delta_link = file.child(DELTA_LEAF).with_version(version)
        new, ann = local_update(replica, env, self.replica_id, version, self.keys, self.now,
                                owner_update=owner_update, delegation=delegation, delta_link=delta_link,
                                lifetime_ms=self.config.router.announcement_lifetime_ms, rng=self.rng)
        packet = self._store_version(file, version, new.vv, env, kind, delegation)
        if delta_link is not None:
            delta = make_delta(replica.envelope, env, base_version=replica.current_version,
                               target_signature=packet.signature)
            self.router.publish(DataPacket.create(delta_link, delta.encode(), self.keys,
                                                  content_type=ContentType.DELTA, delegation=delegation))
        self.replicas[file] = new
        self.trace("update", name=file, version=version, vv=new.vv)
        self.broadcast(ann)
        return ann

    def _store_version(self, file: Name, version: int, vv: VersionVector, env: SecureEnvelope,
                       kind: ContentType, delegation: DelegationCert | None) -> DataPacket:
        packet = DataPacket.create(file.with_version(version), env.encode(), self.keys,
                                   content_type=kind, version_vector=vv, delegation=delegation)
        self.router.store.invalidate_older(file, version, vv)
        self.router.publish(packet)
        return packet

    # -- announcements ---------------------------------------------------------------------
    def broadcast(self, ann: Announcement) -> None:
        self.router.note_originated(ann)
        self._record(ann)
        frame = announce_frame(ann, self.config.announce_scope)
        for peer in sorted(self.peers):
            self._send(peer, frame)

    def _record(self, ann: Announcement) -> None:
        self.seen.add(ann.replay_key)
        self.log.append(ann)
        self._log_packet = None

    def handle_announcement(self, ann: Announcement, src: str, hops_left: int = 1) -> Effect:
        effect = self.router.process_announcement(ann, src, self.now)
        if isinstance(effect, Rejected):
            self.trace("announcement_rejected", reason=effect.reason.value, signer=ann.signer_key.key_hash)
            return effect
        self._record(ann)
        if hops_left > 1:
            frame = announce_frame(ann, hops_left - 1)
            for peer in sorted(self.peers):
                if peer != src:
                    self._send(peer, frame)
        if ann.kind is AnnouncementKind.MODIFICATION:
            self._on_modification(ann.payload, src)
        elif isinstance(effect, KeyRevoked):
            self.trace("key_revoked", key=effect.key_hash)
        return effect

    def _on_modification(self, payload: ModificationPayload, face: str | None) -> None:
        file = payload.name.unversioned()
        if file == command_file_name(device_name(self.principal, self.device)) and self.owns(file):
            self._fetch(payload.name, face, self._on_command_data, vv=payload.version_vector)
            return
        if not self.replicates(file):
            return
        replica = self.replicas.get(file)
        if not needs_fetch(replica, payload.version_vector):
            return
        for pending in self._pending.values():
            if (not pending.cancelled and pending.vv is not None and pending.name.unversioned() == file
                    and vv_compare(pending.vv, payload.version_vector) in (Order.EQUAL, Order.DOMINATES)):
                if face is not None and face not in pending.faces:
                    pending.faces.append(face)
                return
        for pending in list(self._pending.values()):
            if (pending.vv is not None and pending.name.unversioned() == file
                    and dominated(pending.vv, payload.version_vector)):
                pending.cancelled = True
                del self._pending[pending.name]
        expected = payload.version_vector
        if (payload.delta_link is not None and replica is not None and replica.state is ReplicaState.CLEAN
                and replica.current_version == payload.delta_base):
            base = replica

            def on_delta(packet: DataPacket) -> None:
                if not self._apply_delta_packet(packet, payload, base):
                    self._fetch(payload.name, face, lambda p: self._on_file_data(p, expected), vv=expected)

            self._fetch(payload.delta_link, face, on_delta,
                        on_fail=lambda: self._fetch(payload.name, face, lambda p: self._on_file_data(p, expected),
                                                    vv=expected), vv=None)
        else:
            self._fetch(payload.name, face, lambda p: self._on_file_data(p, expected), vv=expected)
        self._refresh_state(file)

    def _apply_delta_packet(self, packet: DataPacket, payload: ModificationPayload, base: Replica) -> bool:
        if packet.content_type is not ContentType.DELTA:
            return False
        try:
            delta = DeltaDoc.decode(packet.content)
            current = self.replicas.get(base.name)
            if current is None or current.current_version != delta.base_version:
                return False
            rebuilt = apply_delta(current.envelope.encode(), delta, local_version=current.current_version)
        except PCNError:
            return False
        target = DataPacket(payload.name, rebuilt, packet.signer_key, self.kinds.get(base.name, ContentType.FILE),
                            payload.version_vector, packet.delegation, delta.target_signature)
        if not target.verify(self.now, self.router.revoked):
            self.stats["delta_rejected"] += 1
            return False
        self.stats["delta_applied"] += 1
        self._on_file_data(target, payload.version_vector)
        return True

    # -- fetching --------------------------------------------------------------------------
    def _fetch(self, name: Name, face: str | None, on_data: Callable[[DataPacket], None],
               on_fail: Callable[[], None] | None = None, *, vv: VersionVector | None = None) -> None:
        faces = ([face] if face else []) + [p for p in self.up_peers() if p != face]
        pending = self._pending.get(name)
        if pending is not None:
            pending.callbacks.append((on_data, on_fail))
            return
        pending = _Fetch(name, faces, [(on_data, on_fail)], vv)
        self._pending[name] = pending
        self._attempt(pending)

    def _attempt(self, pending: _Fetch) -> None:
        if pending.cancelled or not self.online:
            return
        via = pending.faces[pending.attempt % len(pending.faces)] if pending.faces else None
        interest = Interest(pending.name, self.rng.getrandbits(64))
        action = self.router.process_interest(interest, LOCAL_FACE, self.now, via=via)
        if isinstance(action, ServeData):
            self._deliver_local(action.packet)
            return
        if isinstance(action, Forward):
            frame = packet_frame(interest)
            for f in action.faces:
                self._send(f, frame)
        attempt = pending.attempt
        self.transport.schedule(self.config.fetch_timeout_ms, lambda: self._timeout(pending, attempt))

    def _timeout(self, pending: _Fetch, attempt: int) -> None:
        if pending.cancelled or self._pending.get(pending.name) is not pending or pending.attempt != attempt:
            return
        pending.attempt += 1
        if pending.attempt >= self.config.fetch_attempts or not self.online:
            del self._pending[pending.name]
            self.stats["fetch_failed"] += 1
            self.trace("fetch_failed", name=pending.name)
            for _, on_fail in pending.callbacks:
                if on_fail is not None:
                    on_fail()
            self._refresh_state(pending.name.unversioned())
            return
        self._attempt(pending)

    def _deliver_local(self, packet: DataPacket) -> None:
        from .router.tables import satisfies
        for name in [n for n in self._pending if satisfies(n, packet.name)]:
            pending = self._pending.pop(name)
            for on_data, _ in pending.callbacks:
                on_data(packet)

    def fetch_latest(self, name: Name, face: str | None = None,
                     on_done: Callable[[DataPacket | None], None] | None = None) -> None:
        def got(packet: DataPacket) -> None:
            self._on_file_data(packet, None)
            if on_done:
                on_done(packet)

        self._fetch(name.unversioned(), face, got, (lambda: on_done(None)) if on_done else None)

    # -- remote versions ---------------------------------------------------------------------
    def _on_file_data(self, packet: DataPacket, expected_vv: VersionVector | None) -> Outcome | None:
        file = packet.name.unversioned()
        try:
            if packet.content_type not in (ContentType.FILE, ContentType.DIRECTORY, ContentType.COMMANDS):
                raise DecodeError("not a file")
            env = SecureEnvelope.decode(packet.content)
        except DecodeError:
            self.stats["malformed_data"] += 1
            return None
        vv = packet.version_vector
        version = packet.name.version
        if vv is None or version is None or (expected_vv is not None and vv != expected_vv):
            self.stats["metadata_mismatch"] += 1
            return None
        replica = self.replicas.get(file)
        if replica is not None and not needs_fetch(replica, vv):
            self._refresh_state(file)
            return Outcome.ALREADY_CURRENT
        signer_is_owner = packet.signer_key.key_hash == file.principal.public_key_hash
        if not accepts_remote(replica, env, file, version, signer_is_owner):
            self.stats["writes_rejected"] += 1
            self.trace("write_rejected", name=file, version=version)
            self._refresh_state(file)
            return None
        rev = Revision(packet.signer_key.key_hash, "", self.now, version, vv, env)
        self.kinds[file] = packet.content_type
        merged_packets: list[DataPacket] = []
        if replica is None:
            new, outcome = Replica.from_revision(file, rev), Outcome.FETCHED
        else:
            merge = None
            if packet.content_type is ContentType.DIRECTORY:
                merge = lambda a, b: self._merge_directories(file, a, b, merged_packets)
            new, outcome = apply_fetched(replica, rev, merge=merge)
        self.clock.observe(version)
        self.router.store.invalidate_older(file, version, vv)
        self.router.publish(packet)
        self.replicas[file] = new
        self._refresh_state(file)
        self.trace("replica", name=file, outcome=outcome.value, version=self.replicas[file].current_version,
                   vv=self.replicas[file].vv, state=self.replicas[file].state.value)
        if outcome is Outcome.MERGED:
            for mp in merged_packets:
                self.router.store.invalidate_older(file, mp.name.version, mp.version_vector)
                self.router.publish(mp)
            self._announce_merge(file)
        if outcome is Outcome.CONFLICT_FLAGGED and self.resolver is not None:
            resolution = self.resolver(self, self.replicas[file])
            if resolution is not None:
                self.update(file, resolution)
        if packet.content_type is ContentType.DIRECTORY:
            self._sync_children(file)
        self._check_replications()
        return outcome

    def _merge_directories(self, file: Name, local: Revision, remote: Revision,
                           out: list[DataPacket]) -> Revision | None:
        try:
            mine = DirectoryDoc.decode(self.decrypt(file, local.envelope))
            theirs = DirectoryDoc.decode(self.decrypt(file, remote.envelope))
            delegation = self._signing(file)
        except PCNError:
            return None
        merged, conflicts = merge_directory(mine, theirs)
        version = self.clock.next(self.now, max(local.version, remote.version))
        try:
            env, _ = self.seal_update(file, merged.encode(), local.envelope, version)
        except PCNError:
            return None
        vv = local.vv.merge(remote.vv)
        out.append(DataPacket.create(file.with_version(version), env.encode(), self.keys,
                                     content_type=ContentType.DIRECTORY, version_vector=vv, delegation=delegation))
        if conflicts:
            self.trace("directory_conflicts", name=file, count=len(conflicts))
        return Revision(self.keys.key_hash, self.replica_id, self.now, version, vv, env)

    def _announce_merge(self, file: Name) -> None:
        replica = self.replicas[file]
        ann = announce(AnnouncementKind.MODIFICATION, file.prefix,
                       ModificationPayload(replica.versioned_name(), replica.vv), self.keys, self.now,
                       delegation=self._signing(file), lifetime_ms=self.config.router.announcement_lifetime_ms,
                       rng=self.rng)
        self.broadcast(ann)

    def _refresh_state(self, file: Name) -> None:
        replica = self.replicas.get(file)
        if replica is None:
            return
        busy = any(p.name.unversioned() == file and p.vv is not None for p in self._pending.values())
        if busy:
            state = ReplicaState.DIRTY
        else:
            state = ReplicaState.CONFLICTED if len(replica.heads) > 1 else ReplicaState.CLEAN
        if state is not replica.state:
            self.replicas[file] = replace(replica, state=state)

    def conflict_state(self, file: Name) -> bool:
        replica = self.replicas[file]
        return len(replica.heads) > 1

    # -- replication -------------------------------------------------------------------------
    def replicate(self, prefix: Prefix) -> None:
        self.replicated.add(prefix)
        self.trace("replicate", prefix=prefix)
        root = prefix.as_name()
        if root not in self.replicas:
            self.fetch_latest(root)
        else:
            self._sync_children(root)
        self._check_replications()

    def unreplicate(self, prefix: Prefix) -> None:
        self.replicated.discard(prefix)
        for file in [f for f in self.replicas if is_prefix_of(prefix, f)]:
            del self.replicas[file]
            self.kinds.pop(file, None)
        self.router.store.purge(lambda pkt: is_prefix_of(prefix, pkt.name))
        if prefix in self._announced_prefixes:
            self._announced_prefixes.discard(prefix)
            try:
                ann = announce(AnnouncementKind.REGULAR, prefix, RegularPayload(withdraw=True), self.keys,
                               self.now, delegation=self._signing(prefix), rng=self.rng,
                               lifetime_ms=self.config.router.announcement_lifetime_ms)
            except NotAuthorized:
                return
            self.broadcast(ann)
        self.trace("unreplicate", prefix=prefix)

    def _sync_children(self, directory: Name) -> None:
        if not self.replicates(directory):
            return
        try:
            doc = self.directory(directory)
        except PCNError:
            return
        for entry in doc.listing().values():
            target = entry.target.unversioned()
            if target not in self.replicas and target not in self._pending:
                self.fetch_latest(target)

    def _resolved(self, name: Name, depth: int = 0) -> bool:
        replica = self.replicas.get(name)
        if replica is None:
            return False
        if self.kinds.get(name) is not ContentType.DIRECTORY or depth > 32:
            return True
        try:
            doc = self.directory(name)
        except PCNError:
            return True
        return all(self._resolved(e.target.unversioned(), depth + 1) for e in doc.listing().values())

    def _check_replications(self) -> None:
        for prefix in sorted(self.replicated - self._announced_prefixes, key=str):
            if self._resolved(prefix.as_name()):
                try:
                    ann = announce(AnnouncementKind.REGULAR, prefix, RegularPayload(), self.keys, self.now,
                                   delegation=self._signing(prefix), rng=self.rng,
                                   lifetime_ms=self.config.router.announcement_lifetime_ms)
                except NotAuthorized:
                    self._announced_prefixes.add(prefix)
                    continue
                self._announced_prefixes.add(prefix)
                self.trace("replication_complete", prefix=prefix)
                self.broadcast(ann)

    def announce_prefix(self, prefix: Prefix) -> Announcement:
        ann = announce(AnnouncementKind.REGULAR, prefix, RegularPayload(), self.keys, self.now,
                       delegation=self._signing(prefix), rng=self.rng,
                       lifetime_ms=self.config.router.announcement_lifetime_ms)
        self._announced_prefixes.add(prefix)
        self.broadcast(ann)
        return ann

    # -- commands --------------------------------------------------------------------------------
    def issue_command(self, device: str, op: CommandOp, target: Prefix) -> tuple[CommandFile, Announcement]:
        dev = device_name(self.principal, device)
        cmd_name = command_file_name(dev)
        existing = None
        if cmd_name in self.replicas:
            existing = CommandFile.decode(self.read(cmd_name))
        cmd_file = issue_command(self.keys, dev, op, target, self.now, existing=existing,
                                 expiry_ms=self.config.command_expiry_ms)
        if cmd_name in self.replicas:
            ann = self.update(cmd_name, cmd_file.encode())
        else:
            ann = self.publish(cmd_name, cmd_file.encode(), owner_only_policy(self.principal),
                               kind=ContentType.COMMANDS, link_parent=False)
        return cmd_file, ann

    def _on_command_data(self, packet: DataPacket) -> None:
        if packet.signer_key.key_hash != self.keys.key_hash or packet.content_type is not ContentType.COMMANDS:
            self.stats["commands_rejected"] += 1
            return
        try:
            env = SecureEnvelope.decode(packet.content)
            cmd_file = CommandFile.decode(self.decrypt(packet.name, env))
        except PCNError:
            self.stats["commands_rejected"] += 1
            return
        self.run_commands(cmd_file)

    def run_commands(self, cmd_file: CommandFile) -> tuple[list, list[Skipped]]:
        if cmd_file.device != device_name(self.principal, self.device):
            self.stats["commands_rejected"] += 1
            return [], []
        try:
            executed, skipped = execute_commands(self, cmd_file, self.now, executed_ids=self.executed_commands)
        except PCNError:
            self.stats["commands_rejected"] += 1
            self.trace("commands_rejected")
            return [], []
        self.command_file = cmd_file
        self.trace("commands", executed=len(executed),
                   skipped=len([s for s in skipped if s.reason == "expired"]))
        return executed, skipped

    # -- revocation --------------------------------------------------------------------------
    def revoke_identity(self) -> Announcement:
        ann = announce(AnnouncementKind.REVOCATION, Prefix(self.principal), RevocationPayload(self.keys.key_hash),
                       self.keys, self.now, rng=self.rng,
                       lifetime_ms=self.config.router.announcement_lifetime_ms)
        self.router.revoked.add(self.keys.key_hash)
        self.broadcast(ann)
        return ann

    # -- rejoin ------------------------------------------------------------------------------
    def log_packet(self) -> DataPacket:
        if self._log_packet is None:
            name = log_name(self.principal, self.device).with_version(self.log.next_seq)
            old = self.router.store.versions(name)
            for p in old:
                self.router.store.remove(p.name)
            self._log_packet = DataPacket.create(name, self.log.encode(), self.keys,
                                                 content_type=ContentType.PREFIX_LOG)
            self.router.publish(self._log_packet)
        return self._log_packet

    def rejoin(self, peers: list[str] | None = None) -> list[str]:
        """Ask neighbors for their received-prefix logs; returns who was asked."""
        targets = [p for p in (peers if peers is not None else self.up_peers()) if p in self.peers]
        if not targets:
            raise NoNeighborsReachable(f"{self.node_id} has no reachable neighbor")
        for peer_id in targets:
            info = self.peers[peer_id]
            name = log_name(info.principal, info.device)
            # a copy cached by an earlier rejoin would answer our own interest
            for stale in self.router.store.versions(name):
                self.router.store.remove(stale.name)
            self._fetch(name, peer_id, lambda packet, peer_id=peer_id: self._on_peer_log(peer_id, packet))
        self.trace("rejoin", peers=len(targets))
        return targets

    def _on_peer_log(self, peer_id: str, packet: DataPacket) -> list[Announcement]:
        info = self.peers[peer_id]
        if packet.content_type is not ContentType.PREFIX_LOG or packet.signer_key.key_hash != info.principal.public_key_hash:
            self.stats["bad_log"] += 1
            return []
        try:
            log = ReceivedPrefixLog.decode(packet.content)
        except DecodeError:
            self.stats["bad_log"] += 1
            return []
        since = self._peer_log_seq.get(peer_id, 0)
        if log.first_seq > since:
            # the peer's ring overwrote entries we never saw: compare replicas directly
            self.stats["log_overflow"] += 1
            for file in sorted(self.replicas, key=str):
                self.fetch_latest(file, peer_id)
        entries = log.since(since)
        self._peer_log_seq[peer_id] = log.next_seq
        missed = dedupe(entries, self.seen)
        accepted = []
        for ann in missed:
            if not isinstance(self.handle_announcement(ann, peer_id), Rejected):
                accepted.append(ann)
        self.trace("rejoin_processed", peer=peer_id, missed=len(missed), accepted=len(accepted))
        return accepted

    # -- frames ------------------------------------------------------------------------------
    def on_frame(self, src: str, frame: bytes) -> None:
        if not self.online or not frame:
            return
        kind = frame[0]
        try:
            if kind == F_PING or kind == F_PONG:
                r = Reader(frame[1:])
                seq = r.u32()
                self._heard_from(src)
                if kind == F_PING:
                    self._send(src, ping_frame(F_PONG, seq))
                return
            if kind == F_ANNOUNCE:
                hops = frame[1]
                ann = Announcement.decode(frame[2:])
                self._heard_from(src)
                self.handle_announcement(ann, src, hops)
                return
            if kind == F_PACKET:
                packet = decode_packet(frame[1:])
            else:
                raise DecodeError(f"unknown frame kind {kind}")
        except (DecodeError, ValueError):
            self.stats["malformed_frames"] += 1
            return
        if isinstance(packet, Interest):
            self._on_interest(packet, src)
        elif isinstance(packet, DataPacket):
            self._on_data(packet, src)

    def _on_interest(self, interest: Interest, src: str) -> None:
        if interest.name.unversioned() == log_name(self.principal, self.device):
            self.log_packet()
        action = self.router.process_interest(interest, src, self.now)
        if isinstance(action, ServeData):
            self._send(src, packet_frame(action.packet))
        elif isinstance(action, Forward):
            frame = packet_frame(interest)
            for f in action.faces:
                self._send(f, frame)

    def _on_data(self, packet: DataPacket, src: str) -> None:
        faces = self.router.process_data(packet, src, self.now)
        frame = None
        for face in sorted(faces):
            if face == LOCAL_FACE:
                self._deliver_local(packet)
            else:
                frame = frame or packet_frame(packet)
                self._send(face, frame)

    # -- liveness ----------------------------------------------------------------------------
    def _heard_from(self, peer: str) -> None:
        if peer not in self.peers:
            return
        self._awaiting_pong.discard(peer)
        if not self.peer_up.get(peer):
            self.peer_up[peer] = True
            self.trace("peer_up", peer=peer)
            try:
                self.rejoin([peer])
            except NoNeighborsReachable:
                pass

    def _ping_tick(self) -> None:
        if self.online:
            for peer in sorted(self.peers):
                if peer in self._awaiting_pong and self.peer_up.get(peer):
                    self.peer_up[peer] = False
                    self.trace("peer_down", peer=peer)
                self._awaiting_pong.add(peer)
                self._ping_seq += 1
                self._send(peer, ping_frame(F_PING, self._ping_seq))
            self.router.expire(self.now)
        self.transport.schedule(self.config.ping_interval_ms, self._ping_tick, maintenance=True)

    def go_offline(self) -> None:
        self.online = False
        for pending in self._pending.values():
            pending.cancelled = True
        self._pending.clear()
        self.router.pit = type(self.router.pit)()
        self.router.store.memory_cache.clear()
        self.router.store._cache_index.clear()
        for file in list(self.replicas):
            self._refresh_state(file)
        self.trace("offline")

    def go_online(self) -> None:
        self.online = True
        self._awaiting_pong.clear()
        for peer in self.peer_up:
            self.peer_up[peer] = False
        self.trace("online")
        for peer in sorted(self.peers):
            self._ping_seq += 1
            self._send(peer, ping_frame(F_PING, self._ping_seq))

    def busy(self) -> bool:
        return any(not p.cancelled for p in self._pending.values()) or any(
            r.state is ReplicaState.DIRTY for r in self.replicas.values())
