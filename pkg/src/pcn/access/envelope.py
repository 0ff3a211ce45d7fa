"""The six-field secure envelope carrying read/write policies with the content.

Wire layout (all lengths u32 big-endian)::

    tag:u8 = 0x30 | epoch:u32
    | len f1 | read policy
    | len f2 | write policy            (empty: immutable by non-owners)
    | len f3 | write-verify key        (alg:u8 | key)
    | len f4 | wrapped write-sign key  (kem ct | AES-GCM(sign key))
    | len f5 | body                    (kem ct | nonce | AES-GCM(content))
    | len f6 | write signature         (empty: owner-original publication)

The write signature covers ``(name, version, body)`` only; the policies and
keys are protected by the body's associated data and by the data packet
signature that wraps the whole envelope.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ..errors import (
    DecodeError,
    EpochMismatch,
    IntegrityFailure,
    MissingSignature,
    PolicyNotSatisfied,
)
from ..identity import KeyPair, PublicKey, SignatureAlgorithm
from ..naming import Name, write_name
from ..wire import Reader, Writer
from .abe import DEFAULT_BACKEND, AbeBackend, AbePublicKey, AttributeSecretKey, random_bytes
from .policy import PolicyTree, decode_policy, encode_policy, validate

TAG_ENVELOPE = 0x30
TAG_WRITE_SIG = 0x31


@dataclass(frozen=True)
class SecureEnvelope:
    read_policy: PolicyTree
    write_policy: PolicyTree | None
    write_verify_key: PublicKey | None
    wrapped_write_sign_key: bytes
    body: bytes
    write_signature: bytes | None
    epoch: int

    def encode(self) -> bytes:
        w = Writer().u8(TAG_ENVELOPE).u32(self.epoch)
        w.bytes32(encode_policy(self.read_policy))
        w.bytes32(encode_policy(self.write_policy) if self.write_policy is not None else b"")
        if self.write_verify_key is not None:
            vk = Writer()
            self.write_verify_key.write(vk)
            w.bytes32(vk.getvalue())
        else:
            w.bytes32(b"")
        w.bytes32(self.wrapped_write_sign_key)
        w.bytes32(self.body)
        w.bytes32(self.write_signature or b"")
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> SecureEnvelope:
        r = Reader(data)
        if r.u8() != TAG_ENVELOPE:
            raise DecodeError("not a secure envelope")
        epoch = r.u32()
        f1, f2, f3, f4, f5, f6 = (r.bytes32() for _ in range(6))
        r.expect_end()
        vk = None
        if f3:
            vr = Reader(f3)
            vk = PublicKey.read(vr)
            vr.expect_end()
        return cls(decode_policy(f1), decode_policy(f2) if f2 else None, vk, f4, f5, f6 or None, epoch)


def _body_aad(epoch: int, read_policy: PolicyTree) -> bytes:
    return b"pcn/env/body" + epoch.to_bytes(4, "big") + encode_policy(read_policy)


def _seal_body(backend: AbeBackend, pk: AbePublicKey, read_policy: PolicyTree, content: bytes,
               rng: random.Random | None) -> bytes:
    content_key, kem_ct = backend.encapsulate(pk, read_policy, rng)
    nonce = random_bytes(12, rng)
    ct = AESGCM(content_key).encrypt(nonce, content, _body_aad(pk.epoch, read_policy))
    return Writer().bytes32(kem_ct).raw(nonce).bytes32(ct).getvalue()


def _open_body(backend: AbeBackend, env: SecureEnvelope, sk: AttributeSecretKey) -> bytes:
    try:
        r = Reader(env.body)
        kem_ct, nonce, ct = r.bytes32(), r.raw(12), r.bytes32()
        r.expect_end()
    except DecodeError as exc:
        raise IntegrityFailure(f"body does not parse: {exc}") from None
    try:
        content_key = backend.decapsulate(kem_ct, sk)
    except DecodeError as exc:
        raise IntegrityFailure(f"wrapped content key does not parse: {exc}") from None
    try:
        return AESGCM(content_key).decrypt(nonce, ct, _body_aad(env.epoch, env.read_policy))
    except InvalidTag:
        raise IntegrityFailure("body failed authentication") from None


def _wrap_sign_key(backend: AbeBackend, pk: AbePublicKey, write_policy: PolicyTree, sign_key: KeyPair,
                   rng: random.Random | None) -> bytes:
    wrap_key, kem_ct = backend.encapsulate(pk, write_policy, rng)
    nonce = random_bytes(12, rng)
    ct = AESGCM(wrap_key).encrypt(nonce, sign_key.export_private(), b"pcn/env/wsk" + sign_key.public_key)
    return Writer().bytes32(kem_ct).raw(nonce).bytes32(ct).getvalue()


def _unwrap_sign_key(backend: AbeBackend, env: SecureEnvelope, sk: AttributeSecretKey) -> KeyPair:
    try:
        r = Reader(env.wrapped_write_sign_key)
        kem_ct, nonce, ct = r.bytes32(), r.raw(12), r.bytes32()
        r.expect_end()
        wrap_key = backend.decapsulate(kem_ct, sk)
        pair = KeyPair.import_private(AESGCM(wrap_key).decrypt(nonce, ct, b"pcn/env/wsk" + env.write_verify_key.key))
    except (DecodeError, InvalidTag):
        raise IntegrityFailure("wrapped write-sign key failed authentication") from None
    if pair.public_key != env.write_verify_key.key:
        raise IntegrityFailure("write-sign key does not match the verify key")
    return pair


def write_signed_bytes(name: Name, version: int, body: bytes) -> bytes:
    w = Writer().u8(TAG_WRITE_SIG)
    write_name(w, name.unversioned())
    w.i64(version).bytes32(body)
    return w.getvalue()


def envelope_encrypt(pk: AbePublicKey, content: bytes, read_policy: PolicyTree,
                     write_policy: PolicyTree | None, owner: KeyPair, *,
                     rng: random.Random | None = None,
                     backend: AbeBackend = DEFAULT_BACKEND) -> SecureEnvelope:
    """Owner-original publication: fresh content key and fresh write key pair."""
    if owner.key_hash != pk.owner_key_hash:
        raise ValueError("public key belongs to another owner")
    validate(read_policy)
    if write_policy is not None:
        validate(write_policy)
    body = _seal_body(backend, pk, read_policy, content, rng)
    if write_policy is None:
        return SecureEnvelope(read_policy, None, None, b"", body, None, pk.epoch)
    sign_key = KeyPair.generate(rng, SignatureAlgorithm.ED25519)
    wrapped = _wrap_sign_key(backend, pk, write_policy, sign_key, rng)
    return SecureEnvelope(read_policy, write_policy, PublicKey.of(sign_key), wrapped, body, None, pk.epoch)


def envelope_decrypt(env: SecureEnvelope, sk: AttributeSecretKey, pk: AbePublicKey | None = None, *,
                     backend: AbeBackend = DEFAULT_BACKEND) -> bytes:
    if pk is not None and pk.owner_key_hash != sk.owner_key_hash:
        raise PolicyNotSatisfied("key issued by a different owner")
    if sk.epoch != env.epoch:
        raise EpochMismatch(f"key epoch {sk.epoch}, envelope epoch {env.epoch}")
    return _open_body(backend, env, sk)


def envelope_update(env: SecureEnvelope, new_content: bytes, writer_sk: AttributeSecretKey,
                    pk: AbePublicKey, name: Name, new_version: int, *,
                    rng: random.Random | None = None,
                    backend: AbeBackend = DEFAULT_BACKEND) -> SecureEnvelope:
    """Re-encrypt under ``pk`` and sign with the unwrapped per-file write key.

    The writer's key must match the envelope's current epoch (it unwraps field
    4); the result is sealed under ``pk``'s epoch, which may be newer.
    """
    if env.write_policy is None or env.write_verify_key is None:
        raise PolicyNotSatisfied("file has no write policy; only the owner can republish it")
    if writer_sk.epoch != env.epoch:
        raise EpochMismatch(f"writer key epoch {writer_sk.epoch}, envelope epoch {env.epoch}")
    sign_key = _unwrap_sign_key(backend, env, writer_sk)
    body = _seal_body(backend, pk, env.read_policy, new_content, rng)
    wrapped = env.wrapped_write_sign_key
    if pk.epoch != env.epoch:
        wrapped = _wrap_sign_key(backend, pk, env.write_policy, sign_key, rng)
    signature = sign_key.sign(write_signed_bytes(name, new_version, body))
    return replace(env, wrapped_write_sign_key=wrapped, body=body, write_signature=signature, epoch=pk.epoch)


def verify_write(env: SecureEnvelope, name: Name, version: int) -> bool:
    if env.write_signature is None:
        raise MissingSignature("envelope carries no write signature")
    if env.write_verify_key is None:
        return False
    return env.write_verify_key.verify(write_signed_bytes(name, version, env.body), env.write_signature)


def write_verified(env: SecureEnvelope, name: Name, version: int) -> bool:
    """:func:`verify_write` with a missing signature counted as a failure."""
    try:
        return verify_write(env, name, version)
    except MissingSignature:
        return False
