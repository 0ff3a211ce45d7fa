"""Interest, data and announcement packets with their canonical wire forms.

Every packet starts with a one-byte type tag.  Signatures cover the
canonical encoding of every other field of the packet (prefixed by the tag),
so re-serialising a decoded packet always reproduces the signed bytes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Union

from ..errors import DecodeError
from ..identity import DelegationCert, KeyPair, PublicKey, verify_delegation
from ..naming import DIGEST_SIZE, AnyName, Name, Prefix, is_prefix_of, read_name, write_name
from ..sync.vv import VersionVector
from ..wire import Reader, Writer

TAG_INTEREST = 0x20
TAG_DATA = 0x21
TAG_ANNOUNCEMENT = 0x22


class ContentType(enum.IntEnum):
    RAW = 0
    FILE = 1
    DIRECTORY = 2
    PREFIX_LOG = 3
    DELTA = 4
    COMMANDS = 5
    KEY = 6


class AnnouncementKind(enum.IntEnum):
    REGULAR = 1
    MODIFICATION = 2
    REVOCATION = 3


@dataclass(frozen=True)
class Interest:
    name: Name
    nonce: int

    def encode(self) -> bytes:
        w = Writer().u8(TAG_INTEREST)
        write_name(w, self.name)
        w.u64(self.nonce)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> Interest:
        r = Reader(data)
        if r.u8() != TAG_INTEREST:
            raise DecodeError("not an interest")
        name = read_name(r)
        nonce = r.u64()
        r.expect_end()
        return cls(name, nonce)


def _write_delegation(w: Writer, cert: DelegationCert | None) -> None:
    if cert is None:
        w.u8(0)
    else:
        w.u8(1)
        cert.write(w)


def _read_delegation(r: Reader) -> DelegationCert | None:
    flag = r.u8()
    if flag == 0:
        return None
    if flag != 1:
        raise DecodeError("bad delegation flag")
    return DelegationCert.read(r)


def _write_vv(w: Writer, vv: VersionVector | None) -> None:
    if vv is None:
        w.u8(0)
    else:
        w.u8(1)
        vv.write(w)


def _read_vv(r: Reader) -> VersionVector | None:
    flag = r.u8()
    if flag == 0:
        return None
    if flag != 1:
        raise DecodeError("bad version vector flag")
    return VersionVector.read(r)


def signer_authorized(signer: PublicKey, target: AnyName, delegation: DelegationCert | None, now: int) -> bool:
    """Signer owns ``target``'s principal, or holds a live delegation covering it."""
    if signer.key_hash == target.principal.public_key_hash:
        return True
    if delegation is None or delegation.prefix.principal != target.principal:
        return False
    return verify_delegation(delegation, now, delegate_key_hash=signer.key_hash, covers=target)


@dataclass(frozen=True)
class DataPacket:
    """Named content plus the secure binding ``Sign(name, content)``."""

    name: Name
    content: bytes
    signer_key: PublicKey
    content_type: ContentType = ContentType.RAW
    version_vector: VersionVector | None = None
    delegation: DelegationCert | None = None
    signature: bytes = b""

    def signed_bytes(self) -> bytes:
        w = Writer().u8(TAG_DATA)
        write_name(w, self.name)
        w.u8(self.content_type).bytes32(self.content)
        _write_vv(w, self.version_vector)
        self.signer_key.write(w)
        _write_delegation(w, self.delegation)
        return w.getvalue()

    def encode(self) -> bytes:
        return Writer().raw(self.signed_bytes()).bytes16(self.signature).getvalue()

    @classmethod
    def decode(cls, data: bytes) -> DataPacket:
        r = Reader(data)
        if r.u8() != TAG_DATA:
            raise DecodeError("not a data packet")
        name = read_name(r)
        ctype = r.u8()
        try:
            ctype = ContentType(ctype)
        except ValueError:
            raise DecodeError(f"unknown content type {ctype}") from None
        content = r.bytes32()
        vv = _read_vv(r)
        signer = PublicKey.read(r)
        delegation = _read_delegation(r)
        sig = r.bytes16()
        r.expect_end()
        return cls(name, content, signer, ctype, vv, delegation, sig)

    @classmethod
    def create(cls, name: Name, content: bytes, signer: KeyPair, *,
               content_type: ContentType = ContentType.RAW,
               version_vector: VersionVector | None = None,
               delegation: DelegationCert | None = None) -> DataPacket:
        unsigned = cls(name, content, PublicKey.of(signer), content_type, version_vector, delegation)
        return replace(unsigned, signature=signer.sign(unsigned.signed_bytes()))

    def verify(self, now: int, revoked: frozenset[bytes] | set[bytes] = frozenset()) -> bool:
        if self.signer_key.key_hash in revoked or self.name.principal.public_key_hash in revoked:
            return False
        if not signer_authorized(self.signer_key, self.name, self.delegation, now):
            return False
        return self.signer_key.verify(self.signed_bytes(), self.signature)


@dataclass(frozen=True)
class RegularPayload:
    withdraw: bool = False

    def write(self, w: Writer) -> None:
        w.u8(1 if self.withdraw else 0)

    @classmethod
    def read(cls, r: Reader) -> RegularPayload:
        flag = r.u8()
        if flag not in (0, 1):
            raise DecodeError("bad withdraw flag")
        return cls(bool(flag))


@dataclass(frozen=True)
class ModificationPayload:
    name: Name
    version_vector: VersionVector
    delta_link: Name | None = None
    delta_base: int | None = None

    @property
    def version(self) -> int:
        return self.name.version

    def write(self, w: Writer) -> None:
        write_name(w, self.name)
        self.version_vector.write(w)
        if self.delta_link is None:
            w.u8(0)
        else:
            w.u8(1)
            write_name(w, self.delta_link)
            w.i64(self.delta_base)

    @classmethod
    def read(cls, r: Reader) -> ModificationPayload:
        name = read_name(r)
        if name.version is None:
            raise DecodeError("modification payload names no version")
        vv = VersionVector.read(r)
        flag = r.u8()
        link = base = None
        if flag == 1:
            link = read_name(r)
            base = r.i64()
        elif flag != 0:
            raise DecodeError("bad delta flag")
        return cls(name, vv, link, base)


@dataclass(frozen=True)
class RevocationPayload:
    revoked_key_hash: bytes

    def write(self, w: Writer) -> None:
        w.raw(self.revoked_key_hash)

    @classmethod
    def read(cls, r: Reader) -> RevocationPayload:
        return cls(r.raw(DIGEST_SIZE))


Payload = Union[RegularPayload, ModificationPayload, RevocationPayload]
_PAYLOADS = {
    AnnouncementKind.REGULAR: RegularPayload,
    AnnouncementKind.MODIFICATION: ModificationPayload,
    AnnouncementKind.REVOCATION: RevocationPayload,
}


@dataclass(frozen=True)
class Announcement:
    kind: AnnouncementKind
    prefix: Prefix
    payload: Payload
    signer_key: PublicKey
    nonce: int
    expires_at: int
    delegation: DelegationCert | None = None
    signature: bytes = b""

    def __post_init__(self) -> None:
        if not isinstance(self.payload, _PAYLOADS[self.kind]):
            raise ValueError(f"{self.kind.name} announcement needs {_PAYLOADS[self.kind].__name__}")

    @property
    def replay_key(self) -> tuple[bytes, int]:
        return (self.signer_key.key_hash, self.nonce)

    def signed_bytes(self) -> bytes:
        w = Writer().u8(TAG_ANNOUNCEMENT).u8(self.kind)
        write_name(w, self.prefix)
        body = Writer()
        self.payload.write(body)
        w.bytes32(body.getvalue())
        self.signer_key.write(w)
        _write_delegation(w, self.delegation)
        w.u64(self.nonce).i64(self.expires_at)
        return w.getvalue()

    def encode(self) -> bytes:
        return Writer().raw(self.signed_bytes()).bytes16(self.signature).getvalue()

    @classmethod
    def decode(cls, data: bytes) -> Announcement:
        r = Reader(data)
        if r.u8() != TAG_ANNOUNCEMENT:
            raise DecodeError("not an announcement")
        try:
            kind = AnnouncementKind(r.u8())
        except ValueError:
            raise DecodeError("unknown announcement kind") from None
        prefix_name = read_name(r)
        if prefix_name.version is not None:
            raise DecodeError("announced prefix carries a version")
        pr = Reader(r.bytes32())
        payload = _PAYLOADS[kind].read(pr)
        pr.expect_end()
        signer = PublicKey.read(r)
        delegation = _read_delegation(r)
        nonce, expires = r.u64(), r.i64()
        sig = r.bytes16()
        r.expect_end()
        return cls(kind, prefix_name.prefix, payload, signer, nonce, expires, delegation, sig)

    def signature_valid(self) -> bool:
        return self.signer_key.verify(self.signed_bytes(), self.signature)

    def authorized(self, now: int) -> bool:
        if self.kind is AnnouncementKind.REVOCATION:
            return self.payload.revoked_key_hash == self.signer_key.key_hash
        if not signer_authorized(self.signer_key, self.prefix, self.delegation, now):
            return False
        if self.kind is AnnouncementKind.MODIFICATION:
            return is_prefix_of(self.prefix, self.payload.name)
        return True


Packet = Union[Interest, DataPacket, Announcement]


def decode_packet(data: bytes) -> Packet:
    if not data:
        raise DecodeError("empty packet")
    tag = data[0]
    if tag == TAG_INTEREST:
        return Interest.decode(data)
    if tag == TAG_DATA:
        return DataPacket.decode(data)
    if tag == TAG_ANNOUNCEMENT:
        return Announcement.decode(data)
    raise DecodeError(f"unknown packet tag {tag:#x}")
