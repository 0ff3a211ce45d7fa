"""On-disk node state for the command-line tool.

Layout of a repository directory::

    config                 JSON: label, device, node id, contacts
    keystore/              mode 0700, every file 0600
      identity.key         signing key pair
      abe-<epoch>.json     keyring master key and attribute names per epoch
      sk-<owner>-<epoch>   attribute keys issued to us
      pk-<owner>           other owners' ABE public keys
      cert-<label>         identity statements from introductions
    repository/            one file per data packet, named by its canonical name encoding
    logs/received_prefix   the device's received-prefix log

Every operation opens the directory, builds a :class:`Device` on a
transport that never sends, does its work and writes state back.
"""

from __future__ import annotations

import json
import os
import random
import time
from collections.abc import Iterator, MutableMapping
from dataclasses import dataclass
from pathlib import Path

from .access.abe import TAG_SK, AbeKeyring, AbePublicKey, AttributeSecretKey, abe_setup
from .access.envelope import SecureEnvelope
from .access.policy import Attribute, parse_policy
from .device import Device, owner_only_policy
from .errors import DecodeError, PCNError, UnknownPrincipal
from .identity import IdentityCert, IntroductionParty, KeyPair, PublicKey, introduce
from .naming import Name, Prefix, Principal, canonical_decode, canonical_encode, is_prefix_of, parse_name, parse_prefix
from .replica_mgmt import CommandOp
from .router.packets import ContentType, DataPacket
from .sync.directory import DirectoryDoc
from .sync.replica import Replica, Revision

CONFIG = "config"
KEYSTORE = "keystore"
REPOSITORY = "repository"
LOG = Path("logs") / "received_prefix"
FILE_KINDS = (ContentType.FILE, ContentType.DIRECTORY, ContentType.COMMANDS)


class RepoError(PCNError):
    pass


class DiskRepository(MutableMapping):
    """Packets stored as files; the mapping key is the packet's :class:`Name`."""

    def __init__(self, root: Path) -> None:
        self.root = root
        root.mkdir(parents=True, exist_ok=True)

    def _path(self, name: Name) -> Path:
        return self.root / (canonical_encode(name).hex() + ".pkt")

    def __getitem__(self, name: Name) -> DataPacket:
        try:
            return DataPacket.decode(self._path(name).read_bytes())
        except FileNotFoundError:
            raise KeyError(name) from None

    def __setitem__(self, name: Name, packet: DataPacket) -> None:
        self._path(name).write_bytes(packet.encode())

    def __delitem__(self, name: Name) -> None:
        try:
            self._path(name).unlink()
        except FileNotFoundError:
            raise KeyError(name) from None

    def __iter__(self) -> Iterator[Name]:
        for p in sorted(self.root.glob("*.pkt")):
            try:
                yield canonical_decode(bytes.fromhex(p.stem))
            except (ValueError, DecodeError):
                continue

    def __len__(self) -> int:
        return sum(1 for _ in self)


class _LocalTransport:
    """Transport for a standalone process: wall-clock time, nothing is sent."""

    def __init__(self) -> None:
        self.rng = random.SystemRandom()

    def now(self) -> int:
        return int(time.time() * 1000)

    def send(self, src: str, dst: str, frame: bytes) -> None:
        pass

    def schedule(self, delay_ms: int, callback, *, maintenance: bool = False) -> None:
        pass


def _write_private(path: Path, data: bytes) -> None:
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.chmod(path, 0o600)


@dataclass
class ReplicaStatus:
    name: str
    device: str
    version: int
    vv: dict[str, int]
    state: str


class RepoDir:
    def __init__(self, path: str | os.PathLike) -> None:
        self.path = Path(path)
        cfg = self.path / CONFIG
        if not cfg.exists():
            raise RepoError(f"{self.path} is not a pcn repository (run 'pcn init')")
        self.config = json.loads(cfg.read_text())
        self.keys = KeyPair.import_private((self.keystore / "identity.key").read_bytes())
        self.principal = self.keys.principal(self.config["label"])
        self._device: Device | None = None

    # -- creation --------------------------------------------------------------------
    @classmethod
    def init(cls, path: str | os.PathLike, label: str, device: str = "main") -> RepoDir:
        root = Path(path)
        if (root / CONFIG).exists():
            raise RepoError(f"{root} already holds a repository")
        root.mkdir(parents=True, exist_ok=True)
        ks = root / KEYSTORE
        ks.mkdir(mode=0o700, exist_ok=True)
        os.chmod(ks, 0o700)
        (root / REPOSITORY).mkdir(exist_ok=True)
        (root / LOG).parent.mkdir(exist_ok=True)
        keys = KeyPair.generate()
        _write_private(ks / "identity.key", keys.export_private())
        ring = abe_setup(keys.principal(label))
        cfg = {"label": label, "device": device, "node_id": f"{label}.{device}", "contacts": {},
               "revoked": False}
        (root / CONFIG).write_text(json.dumps(cfg, indent=2, sort_keys=True))
        repo = cls(root)
        repo._save_keyring(ring)
        return repo

    @property
    def keystore(self) -> Path:
        return self.path / KEYSTORE

    def save_config(self) -> None:
        (self.path / CONFIG).write_text(json.dumps(self.config, indent=2, sort_keys=True))

    # -- keystore -----------------------------------------------------------------------
    def _save_keyring(self, ring: AbeKeyring) -> None:
        record = {"epoch": ring.epoch, "master_key": ring.master_key.hex(),
                  "attributes": sorted(a.name for a in ring.attributes)}
        _write_private(self.keystore / f"abe-{ring.epoch}.json", json.dumps(record).encode())

    def keyrings(self) -> dict[int, AbeKeyring]:
        rings = {}
        for p in self.keystore.glob("abe-*.json"):
            rec = json.loads(p.read_text())
            attrs = frozenset(Attribute(a, self.principal) for a in rec["attributes"])
            rings[rec["epoch"]] = AbeKeyring(self.principal, bytes.fromhex(rec["master_key"]), rec["epoch"], attrs)
        return rings

    def contacts(self) -> dict[str, Principal]:
        return {label: Principal(bytes.fromhex(h), label) for label, h in self.config["contacts"].items()}

    def resolver(self) -> dict[str, Principal]:
        return {**self.contacts(), self.principal.display_label: self.principal}

    def contact(self, label: str) -> Principal:
        try:
            return self.resolver()[label]
        except KeyError:
            raise UnknownPrincipal(label) from None

    # -- the device ---------------------------------------------------------------------
    @property
    def device(self) -> Device:
        if self._device is None:
            rings = self.keyrings()
            latest = rings[max(rings)]
            dev = Device(self.config["node_id"], self.keys, self.config["device"], _LocalTransport(),
                         label=self.principal.display_label, keyring=latest,
                         repository=DiskRepository(self.path / REPOSITORY))
            dev.keyrings.update(rings)
            for p in sorted(self.keystore.glob("sk-*")):
                dev.learn_key(sk=AttributeSecretKey.decode(p.read_bytes()))
            for p in sorted(self.keystore.glob("pk-*")):
                dev.learn_key(pk=AbePublicKey.decode(p.read_bytes()))
            self._load_replicas(dev)
            self._device = dev
        return self._device

    def _load_replicas(self, dev: Device) -> None:
        latest: dict[Name, DataPacket] = {}
        for name in dev.router.store.repository:
            if name.version is None:
                continue
            file = name.unversioned()
            if file not in latest or latest[file].name.version < name.version:
                packet = dev.router.store.repository[name]
                if packet.content_type in FILE_KINDS and packet.version_vector is not None:
                    latest[file] = packet
        for file, packet in latest.items():
            env = SecureEnvelope.decode(packet.content)
            rev = Revision(packet.signer_key.key_hash, dev.replica_id, packet.name.version,
                           packet.name.version, packet.version_vector, env)
            dev.replicas[file] = Replica.from_revision(file, rev)
            dev.kinds[file] = packet.content_type
            dev.clock.observe(packet.name.version)

    def flush(self) -> None:
        if self._device is None:
            return
        for epoch, ring in self._device.keyrings.items():
            self._save_keyring(ring)
        (self.path / LOG).write_bytes(self._device.log.encode())

    # -- names -----------------------------------------------------------------------------
    def name(self, text: str) -> Name:
        return parse_name(text, self.resolver())

    def prefix(self, text: str) -> Prefix:
        return parse_prefix(text, self.resolver())

    def label_of(self, name: Name | Prefix) -> str:
        for label, p in self.resolver().items():
            if p == name.principal:
                return label
        return ""

    def render(self, name: Name | Prefix) -> str:
        p = Principal(name.principal.public_key_hash, self.label_of(name))
        if isinstance(name, Name):
            return Name(p, name.components, name.version, name.segment).render()
        return Prefix(p, name.components).render()

    # -- content ---------------------------------------------------------------------------
    def publish(self, content: bytes, name_text: str, read_policy: str | None = None,
                write_policy: str | None = None) -> Name:
        name = self.name(name_text)
        read = parse_policy(read_policy, self.principal) if read_policy else owner_only_policy(self.principal)
        write = parse_policy(write_policy, self.principal) if write_policy else None
        dev = self.device
        if name.unversioned() in dev.replicas and write is None:
            dev.update(name, content)
        else:
            dev.publish(name, content, read, write)
        self.flush()
        return dev.replicas[name.unversioned()].versioned_name()

    def get(self, name_text: str, source: RepoDir | None = None) -> bytes:
        """Decrypt the latest local version, or the one held by ``source``'s repository."""
        name = self.name(name_text)
        store = (source.device if source else self.device).router.store
        hit = store.lookup(name)
        if hit is None:
            raise RepoError(f"{name_text} not found")
        packet, _ = hit
        if not packet.verify(int(time.time() * 1000)):
            raise RepoError("packet signature does not verify")
        env = SecureEnvelope.decode(packet.content)
        return self.device.decrypt(packet.name, env)

    def listing(self, prefix_text: str) -> list[tuple[str, int | None, str]]:
        prefix = self.prefix(prefix_text)
        dev = self.device
        out = []
        for file in sorted(dev.replicas, key=canonical_encode):
            if is_prefix_of(prefix, file):
                r = dev.replicas[file]
                out.append((self.render(file), r.current_version, dev.kinds.get(file, ContentType.FILE).name.lower()))
        directory = prefix.as_name()
        if directory in dev.replicas and dev.kinds.get(directory) is ContentType.DIRECTORY:
            try:
                doc = DirectoryDoc.decode(dev.read(directory))
            except PCNError:
                doc = None
            if doc is not None:
                listed = {row[0] for row in out}
                for key, entry in sorted(doc.listing().items()):
                    target = self.render(entry.target)
                    if target not in listed:
                        out.append((f"{self.render(directory)}/{key} -> {target}", None, "entry"))
        return out

    def status(self) -> list[ReplicaStatus]:
        dev = self.device
        return [ReplicaStatus(self.render(f), dev.node_id, r.current_version, dict(sorted(r.vv.items())),
                              r.state.value)
                for f, r in sorted(dev.replicas.items(), key=lambda kv: canonical_encode(kv[0]))]

    # -- keys ---------------------------------------------------------------------------------
    def keygen(self, attrs: list[str], holder: str | None = None) -> tuple[AttributeSecretKey, AbePublicKey]:
        dev = self.device
        who = self.contact(holder) if holder else self.principal
        sk = dev.issue_key([Attribute(a, self.principal) for a in attrs], who)
        self.flush()
        return sk, dev.public_key()

    def import_key(self, data: bytes) -> str:
        """Store an attribute key or an ABE public key produced by another repository."""
        if data[:1] == bytes([TAG_SK]):
            sk = AttributeSecretKey.decode(data)
            _write_private(self.keystore / f"sk-{sk.owner_key_hash.hex()}-{sk.epoch}", data)
            return "attribute key"
        pk = AbePublicKey.decode(data)
        _write_private(self.keystore / f"pk-{pk.owner_key_hash.hex()}", data)
        return "public key"

    def rekey(self) -> int:
        ring = self.device.rekey()
        self.flush()
        return ring.epoch

    def revoke_identity(self) -> bytes:
        ann = self.device.revoke_identity()
        self.config["revoked"] = True
        self.save_config()
        self.flush()
        return ann.encode()

    def replicate(self, prefix_text: str, device: str, op: CommandOp = CommandOp.REPLICATE) -> Name:
        prefix = self.prefix(prefix_text)
        cmd_file, _ = self.device.issue_command(device, op, prefix)
        self.flush()
        return cmd_file.device

    # -- introductions --------------------------------------------------------------------------
    def add_contact(self, label: str, key: PublicKey, cert: IdentityCert | None = None) -> None:
        self.config["contacts"][label] = key.key_hash.hex()
        self.save_config()
        if cert is not None:
            _write_private(self.keystore / f"cert-{label}", cert.encode())


def introduce_repos(a: RepoDir, b: RepoDir, *, answer_a: int = 0, answer_b: int = 0,
                    expect_a: int = 0, expect_b: int = 0) -> bool:
    """Run the interlock between two local repositories and record each other as contacts.

    ``answer_a`` is A's answer to B's question and ``expect_a`` the correct
    answer to A's own question (likewise for B).
    """
    pa = IntroductionParty(a.principal.display_label, a.keys, answer_a, expect_a)
    pb = IntroductionParty(b.principal.display_label, b.keys, answer_b, expect_b)
    if pa.label == pb.label:
        raise RepoError("both repositories use the same label")
    result = introduce(pa, pb, now=int(time.time() * 1000))
    if result.verified:
        a.add_contact(pb.label, PublicKey.of(b.keys), result.certs[pa.label])
        b.add_contact(pa.label, PublicKey.of(a.keys), result.certs[pb.label])
    return result.verified
