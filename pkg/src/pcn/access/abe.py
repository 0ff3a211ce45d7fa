"""Attribute-based key encapsulation.

The default backend shares a random field element down the policy tree with
Shamir polynomials (one per threshold node) and seals each leaf's share to the
leaf attribute's X25519 public key.  Attribute key pairs are derived from the
master key per ``(epoch, attribute)``, so the owner can publish the public
halves and hand the private halves to holders.

This construction gives decrypt-iff-satisfy semantics but is NOT collusion
resistant: two holders can pool attribute keys to satisfy a policy neither
satisfies alone.  ``collusion_resistant = False`` says so on the backend.
"""

from __future__ import annotations

import os
import random
import secrets
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from typing import Protocol

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import x25519
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..errors import (
    DecodeError,
    EmptyAttributeSet,
    EpochMismatch,
    IntegrityFailure,
    MissingMasterKey,
    PolicyNotSatisfied,
    UnknownAttribute,
)
from ..naming import DIGEST_SIZE, Principal
from ..wire import Reader, Writer
from .policy import Attribute, Leaf, PolicyTree, policy_satisfied, read_policy, validate, write_policy

FIELD_PRIME = 2**521 - 1
SHARE_BYTES = 66
KEY_BYTES = 32
_ZERO_NONCE = bytes(12)

BACKEND_SHAMIR_X25519 = 1
TAG_PK, TAG_SK, TAG_KEM = 0x50, 0x51, 0x52


def random_bytes(n: int, rng: random.Random | None = None) -> bytes:
    return rng.randbytes(n) if rng is not None else os.urandom(n)


def _hkdf(ikm: bytes, info: bytes, salt: bytes | None = None, length: int = KEY_BYTES) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(ikm)


def _x25519_public(private: bytes) -> bytes:
    return (x25519.X25519PrivateKey.from_private_bytes(private).public_key()
            .public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw))


def _attr_label(attr: Attribute) -> bytes:
    return Writer().raw(attr.authority.public_key_hash).text16(attr.name).getvalue()


@dataclass(frozen=True)
class AbePublicKey:
    owner_key_hash: bytes
    epoch: int
    attribute_keys: Mapping[Attribute, bytes]
    backend_id: int = BACKEND_SHAMIR_X25519

    def encode(self) -> bytes:
        w = Writer().u8(TAG_PK).u8(self.backend_id).raw(self.owner_key_hash).u32(self.epoch)
        items = sorted(self.attribute_keys.items(), key=lambda kv: _attr_label(kv[0]))
        w.u32(len(items))
        for attr, pub in items:
            attr.write(w)
            w.raw(pub)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> AbePublicKey:
        r = Reader(data)
        if r.u8() != TAG_PK:
            raise DecodeError("not an ABE public key")
        backend = r.u8()
        owner, epoch = r.raw(DIGEST_SIZE), r.u32()
        keys = {}
        for _ in range(r.u32()):
            attr = Attribute.read(r)
            keys[attr] = r.raw(32)
        r.expect_end()
        return cls(owner, epoch, keys, backend)


@dataclass
class AbeKeyring:
    """Owner-held ABE state.  ``master_key`` never leaves this object."""

    owner: Principal
    master_key: bytes | None = field(repr=False)
    epoch: int = 0
    attributes: frozenset[Attribute] = frozenset()
    backend_id: int = BACKEND_SHAMIR_X25519

    def _attr_private(self, attr: Attribute) -> bytes:
        if self.master_key is None:
            raise MissingMasterKey("keyring holds no master key")
        info = b"pcn/abe/attr" + self.epoch.to_bytes(4, "big") + _attr_label(attr)
        return _hkdf(self.master_key, info, salt=self.owner.public_key_hash)

    def define(self, attrs: Iterable[Attribute]) -> None:
        new = frozenset(attrs)
        for attr in new:
            if attr.authority != self.owner:
                raise UnknownAttribute(f"{attr.name!r} belongs to another authority")
        self.attributes = self.attributes | new

    @property
    def public_key(self) -> AbePublicKey:
        keys = {a: _x25519_public(self._attr_private(a)) for a in self.attributes}
        return AbePublicKey(self.owner.public_key_hash, self.epoch, keys, self.backend_id)

    def public_only(self) -> AbeKeyring:
        return replace(self, master_key=None)


@dataclass(frozen=True)
class AttributeSecretKey:
    holder: Principal
    owner_key_hash: bytes
    epoch: int
    keys: Mapping[Attribute, bytes] = field(repr=False)

    @property
    def attributes(self) -> frozenset[Attribute]:
        return frozenset(self.keys)

    @property
    def key_material(self) -> bytes:
        return self.encode()

    def encode(self) -> bytes:
        w = Writer().u8(TAG_SK).raw(self.holder.public_key_hash).raw(self.owner_key_hash).u32(self.epoch)
        items = sorted(self.keys.items(), key=lambda kv: _attr_label(kv[0]))
        w.u32(len(items))
        for attr, priv in items:
            attr.write(w)
            w.raw(priv)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> AttributeSecretKey:
        r = Reader(data)
        if r.u8() != TAG_SK:
            raise DecodeError("not an attribute secret key")
        holder, owner, epoch = Principal(r.raw(DIGEST_SIZE)), r.raw(DIGEST_SIZE), r.u32()
        keys = {}
        for _ in range(r.u32()):
            attr = Attribute.read(r)
            keys[attr] = r.raw(32)
        r.expect_end()
        return cls(holder, owner, epoch, keys)


class AbeBackend(Protocol):
    name: str
    collusion_resistant: bool

    def encapsulate(self, pk: AbePublicKey, policy: PolicyTree,
                    rng: random.Random | None = None) -> tuple[bytes, bytes]: ...

    def decapsulate(self, ciphertext: bytes, sk: AttributeSecretKey) -> bytes: ...


# -- Shamir sharing over GF(2**521 - 1) ---------------------------------------------

def _rand_field(rng: random.Random | None) -> int:
    return int.from_bytes(random_bytes(SHARE_BYTES + 16, rng), "big") % FIELD_PRIME


def _split(secret: int, k: int, n: int, rng: random.Random | None) -> list[int]:
    coeffs = [secret] + [_rand_field(rng) for _ in range(k - 1)]
    shares = []
    for x in range(1, n + 1):
        acc = 0
        for c in reversed(coeffs):
            acc = (acc * x + c) % FIELD_PRIME
        shares.append(acc)
    return shares


def _combine(points: list[tuple[int, int]]) -> int:
    secret = 0
    for i, (xi, yi) in enumerate(points):
        num, den = 1, 1
        for j, (xj, _) in enumerate(points):
            if i != j:
                num = num * (-xj) % FIELD_PRIME
                den = den * (xi - xj) % FIELD_PRIME
        secret = (secret + yi * num * pow(den, -1, FIELD_PRIME)) % FIELD_PRIME
    return secret


def _leaf_key(shared: bytes, eph_pub: bytes, attr_pub: bytes, index: int) -> bytes:
    return _hkdf(shared, b"pcn/abe/leaf" + eph_pub + attr_pub + index.to_bytes(4, "big"))


class ShamirX25519Backend:
    """Shamir shares down the policy tree, one X25519-sealed share per leaf.

    Not collusion resistant: two holders can pool leaf keys.  ``precheck``
    runs the pure policy evaluator before touching any share; turning it off
    leaves only the cryptographic recovery, which tests use as a second route.
    """

    name = "shamir-x25519"
    collusion_resistant = False

    def __init__(self, precheck: bool = True) -> None:
        self.precheck = precheck

    def encapsulate(self, pk: AbePublicKey, policy: PolicyTree,
                    rng: random.Random | None = None) -> tuple[bytes, bytes]:
        validate(policy)
        secret = _rand_field(rng)
        leaf_records: list[bytes] = []

        def share_down(node: PolicyTree, value: int) -> None:
            if isinstance(node, Leaf):
                attr_pub = pk.attribute_keys.get(node.attribute)
                if attr_pub is None:
                    raise UnknownAttribute(f"attribute {node.attribute.name!r} not in public key")
                eph = random_bytes(32, rng)
                eph_pub = _x25519_public(eph)
                shared = x25519.X25519PrivateKey.from_private_bytes(eph).exchange(
                    x25519.X25519PublicKey.from_public_bytes(attr_pub))
                key = _leaf_key(shared, eph_pub, attr_pub, len(leaf_records))
                sealed = AESGCM(key).encrypt(_ZERO_NONCE, value.to_bytes(SHARE_BYTES, "big"), None)
                leaf_records.append(eph_pub + sealed)
                return
            for child, share in zip(node.children, _split(value, node.k, len(node.children), rng)):
                share_down(child, share)

        share_down(policy, secret)
        w = Writer().u8(TAG_KEM).u8(BACKEND_SHAMIR_X25519).raw(pk.owner_key_hash).u32(pk.epoch)
        write_policy(w, policy)
        for rec in leaf_records:
            w.bytes16(rec)
        return self._derive(secret), w.getvalue()

    @staticmethod
    def _derive(secret: int) -> bytes:
        return _hkdf(secret.to_bytes(SHARE_BYTES, "big"), b"pcn/abe/kem")

    @staticmethod
    def parse(ciphertext: bytes) -> tuple[bytes, int, PolicyTree, list[bytes]]:
        r = Reader(ciphertext)
        if r.u8() != TAG_KEM or r.u8() != BACKEND_SHAMIR_X25519:
            raise DecodeError("not a shamir-x25519 ciphertext")
        owner, epoch = r.raw(DIGEST_SIZE), r.u32()
        policy = read_policy(r)
        records = []
        while r.remaining:
            records.append(r.bytes16())
        return owner, epoch, policy, records

    def decapsulate(self, ciphertext: bytes, sk: AttributeSecretKey) -> bytes:
        owner, epoch, policy, records = self.parse(ciphertext)
        if epoch != sk.epoch:
            raise EpochMismatch(f"key epoch {sk.epoch}, ciphertext epoch {epoch}")
        if owner != sk.owner_key_hash:
            raise PolicyNotSatisfied("key issued by a different owner")
        if self.precheck and not policy_satisfied(policy, sk.attributes):
            raise PolicyNotSatisfied("attributes do not satisfy the policy")
        counter = iter(range(len(records)))

        def recover(node: PolicyTree) -> int | None:
            if isinstance(node, Leaf):
                idx = next(counter)
                if idx >= len(records):
                    raise IntegrityFailure("ciphertext has fewer leaf records than its policy")
                attr_priv = sk.keys.get(node.attribute)
                if attr_priv is None:
                    return None
                rec = records[idx]
                eph_pub, sealed = rec[:32], rec[32:]
                priv = x25519.X25519PrivateKey.from_private_bytes(attr_priv)
                try:
                    shared = priv.exchange(x25519.X25519PublicKey.from_public_bytes(eph_pub))
                    key = _leaf_key(shared, eph_pub, _x25519_public(attr_priv), idx)
                    return int.from_bytes(AESGCM(key).decrypt(_ZERO_NONCE, sealed, None), "big")
                except (InvalidTag, ValueError):
                    raise IntegrityFailure("leaf share failed authentication") from None
            points = []
            for x, child in enumerate(node.children, start=1):
                value = recover(child)
                if value is not None and len(points) < node.k:
                    points.append((x, value))
            return _combine(points) if len(points) >= node.k else None

        secret = recover(policy)
        if secret is None:
            raise PolicyNotSatisfied("attributes do not satisfy the policy")
        return self._derive(secret)


DEFAULT_BACKEND = ShamirX25519Backend()


def abe_setup(owner: Principal, seed: bytes | int | None = None, *,
              attributes: Iterable[Attribute] = ()) -> AbeKeyring:
    """Fresh keyring at epoch 0; ``seed`` makes the master key reproducible."""
    if seed is None:
        mk = secrets.token_bytes(32)
    else:
        seed_bytes = seed.to_bytes(16, "big", signed=True) if isinstance(seed, int) else bytes(seed)
        mk = _hkdf(seed_bytes, b"pcn/abe/master", salt=owner.public_key_hash)
    keyring = AbeKeyring(owner, mk)
    keyring.define(attributes)
    return keyring


def abe_keygen(keyring: AbeKeyring, attrs: Iterable[Attribute], holder: Principal) -> AttributeSecretKey:
    wanted = frozenset(attrs)
    if not wanted:
        raise EmptyAttributeSet("cannot issue a key for no attributes")
    if keyring.master_key is None:
        raise MissingMasterKey("keyring holds no master key")
    keyring.define(wanted)
    keys = {a: keyring._attr_private(a) for a in wanted}
    return AttributeSecretKey(holder, keyring.owner.public_key_hash, keyring.epoch, keys)


def rekey_lazy(keyring: AbeKeyring, rng: random.Random | None = None) -> AbeKeyring:
    """New master key and epoch; existing envelopes and keys are left alone."""
    if keyring.master_key is None:
        raise MissingMasterKey("keyring holds no master key")
    fresh = random_bytes(32, rng)
    return AbeKeyring(keyring.owner, fresh, keyring.epoch + 1, keyring.attributes, keyring.backend_id)
