"""Replica state, local updates and application of remote versions.

A replica remembers every causally maximal version it has verified (its
*heads*).  One head means the replica is Clean; several mean an
update/update conflict, and the replica's version vector is the join of the
heads so that only an update which has seen all of them resolves it.
"""

from __future__ import annotations

import enum
import hashlib
import random
from collections.abc import Callable
from dataclasses import dataclass, replace

from ..access.envelope import SecureEnvelope, write_verified
from ..errors import FetchFailed, WriteNotVerified
from ..identity import DelegationCert, KeyPair, PublicKey
from ..naming import Name, Prefix
from ..router.engine import announce
from ..router.packets import Announcement, AnnouncementKind, ModificationPayload
from .vv import Order, VersionVector, vv_compare


class ReplicaState(enum.Enum):
    CLEAN = "Clean"
    DIRTY = "Dirty"
    CONFLICTED = "Conflicted"


class Outcome(enum.Enum):
    FETCHED = "Fetched"
    ALREADY_CURRENT = "AlreadyCurrent"
    CONFLICT_FLAGGED = "ConflictFlagged"
    MERGED = "Merged"


@dataclass(frozen=True)
class Revision:
    author: bytes
    device: str
    timestamp: int
    version: int
    vv: VersionVector
    envelope: SecureEnvelope
    content_hash: bytes = b""

    def __post_init__(self) -> None:
        if not self.content_hash:
            object.__setattr__(self, "content_hash", hashlib.sha256(self.envelope.encode()).digest())

    def record(self) -> str:
        return f"{self.author.hex()} {self.timestamp} {self.version} {self.content_hash.hex()}"


def _pick_current(heads: tuple[Revision, ...]) -> Revision:
    return max(heads, key=lambda r: (r.version, r.content_hash))


@dataclass(frozen=True)
class Replica:
    name: Name
    current_version: int
    vv: VersionVector
    envelope: SecureEnvelope
    state: ReplicaState = ReplicaState.CLEAN
    heads: tuple[Revision, ...] = ()
    history: tuple[Revision, ...] = ()
    verify_key: PublicKey | None = None

    @classmethod
    def from_revision(cls, name: Name, rev: Revision) -> Replica:
        return cls(name.unversioned(), rev.version, rev.vv, rev.envelope, ReplicaState.CLEAN,
                   (rev,), (rev,), rev.envelope.write_verify_key)

    @property
    def conflicted(self) -> bool:
        return self.state is ReplicaState.CONFLICTED

    def versioned_name(self) -> Name:
        return self.name.with_version(self.current_version)

    def export_history(self) -> str:
        """One ``author timestamp version content-hash`` line per revision."""
        return "".join(r.record() + "\n" for r in self.history)


def accepts_remote(replica: Replica | None, env: SecureEnvelope, name: Name, version: int,
                   signer_is_owner: bool) -> bool:
    """Replica-side write check for an incoming version.

    Unsigned envelopes are owner-original publications and need the owner's
    packet signature.  Signed ones must verify under the verify key this
    replica already holds; a replica seeing the file for the first time
    takes the envelope's key on trust.
    """
    if env.write_signature is None:
        return signer_is_owner
    pinned = replica.verify_key if replica is not None else None
    if pinned is not None and env.write_verify_key != pinned and not signer_is_owner:
        return False
    return write_verified(env, name, version)


def local_update(replica: Replica, new_envelope: SecureEnvelope, device_id: str, version: int,
                 signer: KeyPair, now: int, *, owner_update: bool = False,
                 announce_prefix: Prefix | None = None, delegation: DelegationCert | None = None,
                 delta_link: Name | None = None, lifetime_ms: int | None = None,
                 rng: random.Random | None = None) -> tuple[Replica, Announcement]:
    """Record a local write and build the Modification announcement for it.

    ``version`` comes from the device's monotonic clock and must already be
    covered by the envelope's write signature.  An update on a Conflicted
    replica has seen every head and therefore resolves the conflict.
    """
    if version <= replica.current_version and not replica.conflicted:
        raise ValueError(f"version {version} does not advance {replica.current_version}")
    if not owner_update and not write_verified(new_envelope, replica.name, version):
        raise WriteNotVerified(f"update to {replica.name} carries no valid write signature")
    if (not owner_update and replica.verify_key is not None
            and new_envelope.write_verify_key != replica.verify_key):
        raise WriteNotVerified("update is signed under a different write key")
    vv = replica.vv.increment(device_id)
    rev = Revision(signer.key_hash, device_id, now, version, vv, new_envelope)
    updated = replace(replica, current_version=version, vv=vv, envelope=new_envelope,
                      state=ReplicaState.CLEAN, heads=(rev,), history=replica.history + (rev,),
                      verify_key=new_envelope.write_verify_key or replica.verify_key)
    payload = ModificationPayload(replica.name.with_version(version), vv, delta_link,
                                  replica.current_version if delta_link is not None else None)
    kw = {} if lifetime_ms is None else {"lifetime_ms": lifetime_ms}
    ann = announce(AnnouncementKind.MODIFICATION, announce_prefix or replica.name.prefix, payload,
                   signer, now, delegation=delegation, rng=rng, **kw)
    return updated, ann


def remote_order(replica: Replica, remote_vv: VersionVector) -> Order:
    return vv_compare(remote_vv, replica.vv)


def needs_fetch(replica: Replica | None, remote_vv: VersionVector) -> bool:
    if replica is None:
        return True
    return remote_order(replica, remote_vv) in (Order.DOMINATES, Order.CONCURRENT)


Merger = Callable[[Revision, Revision], "Revision | None"]


def apply_fetched(replica: Replica, rev: Revision, *, merge: Merger | None = None) -> tuple[Replica, Outcome]:
    """Fold a fetched and write-verified revision into the replica."""
    order = remote_order(replica, rev.vv)
    if order in (Order.EQUAL, Order.DOMINATED_BY):
        return replica, Outcome.ALREADY_CURRENT
    if order is Order.DOMINATES:
        return replace(replica, current_version=rev.version, vv=rev.vv, envelope=rev.envelope,
                       state=ReplicaState.CLEAN, heads=(rev,), history=replica.history + (rev,),
                       verify_key=rev.envelope.write_verify_key or replica.verify_key), Outcome.FETCHED

    if merge is not None and not replica.conflicted:
        merged = merge(_pick_current(replica.heads), rev)
        if merged is not None:
            return replace(replica, current_version=merged.version, vv=merged.vv, envelope=merged.envelope,
                           state=ReplicaState.CLEAN, heads=(merged,),
                           history=replica.history + (rev, merged)), Outcome.MERGED

    heads = tuple(h for h in replica.heads if vv_compare(h.vv, rev.vv) is not Order.DOMINATED_BY) + (rev,)
    heads = tuple(sorted(heads, key=lambda r: (r.version, r.content_hash)))
    join = replica.vv.merge(rev.vv)
    current = _pick_current(heads)
    return replace(replica, current_version=current.version, vv=join, envelope=current.envelope,
                   state=ReplicaState.CONFLICTED, heads=heads,
                   history=replica.history + (rev,)), Outcome.CONFLICT_FLAGGED


Fetcher = Callable[[], "tuple[Revision, bool]"]


def apply_remote(replica: Replica, remote_version: int, remote_vv: VersionVector, fetcher: Fetcher, *,
                 merge: Merger | None = None) -> tuple[Replica, Outcome]:
    """Synchronous form: compare, fetch when needed, verify, apply.

    ``fetcher`` returns ``(revision, signer_is_owner)`` or raises
    :class:`FetchFailed`, in which case the replica is returned unchanged.
    """
    if not needs_fetch(replica, remote_vv):
        return replica, Outcome.ALREADY_CURRENT
    rev, signer_is_owner = fetcher()
    if rev.vv != remote_vv or rev.version != remote_version:
        raise FetchFailed("fetched version does not match the announcement")
    if not accepts_remote(replica, rev.envelope, replica.name, rev.version, signer_is_owner):
        raise WriteNotVerified(f"remote version {rev.version} of {replica.name} failed write verification")
    return apply_fetched(replica, rev, merge=merge)
