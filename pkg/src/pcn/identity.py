"""Keys, signed local-name statements, prefix delegation and the interlock introduction.

Signature schemes are looked up by ``algorithm_id`` so the default
(Ed25519) can be swapped without touching the callers.  Ed25519 signing is
deterministic, which the simulator relies on for reproducible traces.
"""

from __future__ import annotations

import enum
import hashlib
import random
import secrets
from dataclasses import dataclass, field
from typing import Callable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519

from .errors import (
    AnswerOutOfRange,
    CommitmentOutOfRange,
    DecodeError,
    InvalidState,
    NotPrefixOwner,
)
from .naming import AnyName, Prefix, Principal, is_prefix_of, key_hash, read_name, write_name
from .wire import Reader, Writer

SECOND_MS = 1000
DAY_MS = 24 * 3600 * SECOND_MS
IDENTITY_CERT_LIFETIME_MS = 365 * DAY_MS
DELEGATION_CERT_LIFETIME_MS = 30 * DAY_MS

TAG_IDENTITY_CERT = 0x10
TAG_DELEGATION_CERT = 0x11


class SignatureAlgorithm(enum.IntEnum):
    ED25519 = 1
    ECDSA_P256 = 2


def _ed25519_generate(seed: bytes) -> tuple[bytes, bytes]:
    sk = ed25519.Ed25519PrivateKey.from_private_bytes(seed[:32])
    pk = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return pk, seed[:32]


def _ed25519_sign(private_key: bytes, message: bytes) -> bytes:
    return ed25519.Ed25519PrivateKey.from_private_bytes(private_key).sign(message)


def _ed25519_verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        ed25519.Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


_P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


def _p256_generate(seed: bytes) -> tuple[bytes, bytes]:
    scalar = int.from_bytes(hashlib.sha256(seed).digest(), "big") % (_P256_ORDER - 1) + 1
    sk = ec.derive_private_key(scalar, ec.SECP256R1())
    pk = sk.public_key().public_bytes(serialization.Encoding.X962,
                                      serialization.PublicFormat.CompressedPoint)
    return pk, scalar.to_bytes(32, "big")


def _p256_sign(private_key: bytes, message: bytes) -> bytes:
    sk = ec.derive_private_key(int.from_bytes(private_key, "big"), ec.SECP256R1())
    return sk.sign(message, ec.ECDSA(hashes.SHA256()))


def _p256_verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        pk = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), public_key)
        pk.verify(signature, message, ec.ECDSA(hashes.SHA256()))
        return True
    except (InvalidSignature, ValueError):
        return False


_SCHEMES: dict[int, tuple[Callable, Callable, Callable]] = {
    SignatureAlgorithm.ED25519: (_ed25519_generate, _ed25519_sign, _ed25519_verify),
    SignatureAlgorithm.ECDSA_P256: (_p256_generate, _p256_sign, _p256_verify),
}


def verify_signature(public_key: bytes, message: bytes, signature: bytes,
                     algorithm_id: int = SignatureAlgorithm.ED25519) -> bool:
    scheme = _SCHEMES.get(algorithm_id)
    if scheme is None:
        return False
    return scheme[2](public_key, message, signature)


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)
    algorithm_id: int = SignatureAlgorithm.ED25519

    @classmethod
    def generate(cls, rng: random.Random | None = None,
                 algorithm_id: int = SignatureAlgorithm.ED25519) -> KeyPair:
        seed = rng.randbytes(32) if rng is not None else secrets.token_bytes(32)
        return cls.from_seed(seed, algorithm_id)

    @classmethod
    def from_seed(cls, seed: bytes, algorithm_id: int = SignatureAlgorithm.ED25519) -> KeyPair:
        if len(seed) < 32:
            raise ValueError("seed must be at least 32 bytes")
        generate = _SCHEMES[algorithm_id][0]
        pk, sk = generate(seed)
        return cls(pk, sk, int(algorithm_id))

    @property
    def key_hash(self) -> bytes:
        return key_hash(self.public_key)

    def principal(self, label: str = "") -> Principal:
        return Principal(self.key_hash, label)

    def sign(self, message: bytes) -> bytes:
        return _SCHEMES[self.algorithm_id][1](self.private_key, message)

    def verify(self, message: bytes, signature: bytes) -> bool:
        return verify_signature(self.public_key, message, signature, self.algorithm_id)

    def export_public(self) -> bytes:
        return Writer().u8(self.algorithm_id).bytes16(self.public_key).getvalue()

    def export_private(self) -> bytes:
        return (Writer().u8(self.algorithm_id).bytes16(self.public_key)
                .bytes16(self.private_key).getvalue())

    @classmethod
    def import_private(cls, data: bytes) -> KeyPair:
        r = Reader(data)
        alg = r.u8()
        pk, sk = r.bytes16(), r.bytes16()
        r.expect_end()
        if alg not in _SCHEMES:
            raise DecodeError(f"unknown signature algorithm {alg}")
        return cls(pk, sk, alg)


@dataclass(frozen=True)
class PublicKey:
    """A verification key as carried on the wire next to what it signed."""

    key: bytes
    algorithm_id: int = SignatureAlgorithm.ED25519

    @classmethod
    def of(cls, pair: KeyPair) -> PublicKey:
        return cls(pair.public_key, pair.algorithm_id)

    @property
    def key_hash(self) -> bytes:
        return key_hash(self.key)

    def verify(self, message: bytes, signature: bytes) -> bool:
        return verify_signature(self.key, message, signature, self.algorithm_id)

    def write(self, w: Writer) -> None:
        w.u8(self.algorithm_id).bytes16(self.key)

    @classmethod
    def read(cls, r: Reader) -> PublicKey:
        alg = r.u8()
        return cls(r.bytes16(), alg)


# -- certificates -------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityCert:
    """Signed local-name statement: ``issuer`` says ``subject_label`` is ``subject_key``."""

    subject_label: str
    subject_key: PublicKey
    issuer_key_hash: bytes
    issued_at: int
    expires_at: int
    signature: bytes = b""

    def signed_bytes(self) -> bytes:
        w = Writer().u8(TAG_IDENTITY_CERT).text16(self.subject_label)
        self.subject_key.write(w)
        w.raw(self.issuer_key_hash).i64(self.issued_at).i64(self.expires_at)
        return w.getvalue()

    def encode(self) -> bytes:
        return Writer().raw(self.signed_bytes()).bytes16(self.signature).getvalue()

    @classmethod
    def decode(cls, data: bytes) -> IdentityCert:
        r = Reader(data)
        if r.u8() != TAG_IDENTITY_CERT:
            raise DecodeError("not an identity certificate")
        label = r.text16()
        subject = PublicKey.read(r)
        issuer = r.raw(32)
        issued, expires = r.i64(), r.i64()
        sig = r.bytes16()
        r.expect_end()
        return cls(label, subject, issuer, issued, expires, sig)

    @property
    def subject(self) -> Principal:
        return Principal(self.subject_key.key_hash, self.subject_label)


def issue_identity_cert(issuer: KeyPair, subject_label: str, subject_key: PublicKey, now: int,
                        lifetime_ms: int = IDENTITY_CERT_LIFETIME_MS) -> IdentityCert:
    if lifetime_ms <= 0:
        raise ValueError("certificate lifetime must be positive")
    cert = IdentityCert(subject_label, subject_key, issuer.key_hash, now, now + lifetime_ms)
    return IdentityCert(cert.subject_label, cert.subject_key, cert.issuer_key_hash,
                        cert.issued_at, cert.expires_at, issuer.sign(cert.signed_bytes()))


def verify_identity_cert(cert: IdentityCert, issuer_key: PublicKey, now: int | None = None) -> bool:
    if issuer_key.key_hash != cert.issuer_key_hash:
        return False
    if cert.expires_at <= cert.issued_at:
        return False
    if now is not None and not cert.issued_at <= now < cert.expires_at:
        return False
    return issuer_key.verify(cert.signed_bytes(), cert.signature)


@dataclass(frozen=True)
class DelegationCert:
    """Owner-signed permission for ``delegate_key_hash`` to announce ``prefix``.

    ``owner_key`` travels with the certificate so intermediate nodes can check
    it without a prior key exchange; it is bound by its hash matching
    ``prefix.principal``.
    """

    prefix: Prefix
    delegate_key_hash: bytes
    expires_at: int
    owner_key: PublicKey
    owner_signature: bytes = b""

    def signed_bytes(self) -> bytes:
        w = Writer().u8(TAG_DELEGATION_CERT)
        write_name(w, self.prefix)
        w.raw(self.delegate_key_hash).i64(self.expires_at)
        return w.getvalue()

    def write(self, w: Writer) -> None:
        w.raw(self.signed_bytes())
        self.owner_key.write(w)
        w.bytes16(self.owner_signature)

    def encode(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @classmethod
    def read(cls, r: Reader) -> DelegationCert:
        if r.u8() != TAG_DELEGATION_CERT:
            raise DecodeError("not a delegation certificate")
        name = read_name(r)
        if name.version is not None:
            raise DecodeError("delegated prefix carries a version")
        delegate = r.raw(32)
        expires = r.i64()
        owner_key = PublicKey.read(r)
        sig = r.bytes16()
        return cls(name.prefix, delegate, expires, owner_key, sig)

    @classmethod
    def decode(cls, data: bytes) -> DelegationCert:
        r = Reader(data)
        cert = cls.read(r)
        r.expect_end()
        return cert


def issue_delegation(owner: KeyPair, prefix: Prefix, delegate: Principal, expires_at: int) -> DelegationCert:
    if owner.key_hash != prefix.principal.public_key_hash:
        raise NotPrefixOwner(f"{owner.key_hash.hex()[:12]} does not own {prefix}")
    unsigned = DelegationCert(prefix, delegate.public_key_hash, expires_at, PublicKey.of(owner))
    return DelegationCert(prefix, delegate.public_key_hash, expires_at, PublicKey.of(owner),
                          owner.sign(unsigned.signed_bytes()))


def verify_delegation(cert: DelegationCert, now: int, *,
                      delegate_key_hash: bytes | None = None,
                      covers: AnyName | None = None) -> bool:
    """Signature, expiry and owner-prefix checks, plus optional delegate/name binding."""
    if cert.owner_key.key_hash != cert.prefix.principal.public_key_hash:
        return False
    if now >= cert.expires_at:
        return False
    if delegate_key_hash is not None and delegate_key_hash != cert.delegate_key_hash:
        return False
    if covers is not None and not is_prefix_of(cert.prefix, covers):
        return False
    return cert.owner_key.verify(cert.signed_bytes(), cert.owner_signature)


# -- interlock introduction -----------------------------------------------------------

_MODP_2048 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)


def hash_to_group(p: int, seed: bytes) -> int:
    """Quadratic residue mod safe prime ``p`` derived from a public seed.

    Nobody knows its discrete log to any fixed base, which is what keeps the
    commitment binding.
    """
    width = (p.bit_length() + 7) // 8 + 16
    counter = 0
    while True:
        stream = b""
        block = 0
        while len(stream) < width:
            stream += hashlib.sha256(seed + counter.to_bytes(4, "big") + block.to_bytes(4, "big")).digest()
            block += 1
        candidate = pow(int.from_bytes(stream[:width], "big") % p, 2, p)
        if candidate not in (0, 1, p - 1):
            return candidate
        counter += 1


@dataclass(frozen=True)
class GroupParams:
    p: int
    g: int
    h: int

    def __post_init__(self) -> None:
        for v in (self.g, self.h):
            if not 1 < v < self.p:
                raise ValueError("generators must lie in (1, p)")

    @classmethod
    def from_seed(cls, p: int, g: int, seed: bytes) -> GroupParams:
        return cls(p, g, hash_to_group(p, seed))


INTERLOCK_SEED = b"pcn/interlock/h/v1"
PRODUCTION_GROUP = GroupParams.from_seed(_MODP_2048, 2, INTERLOCK_SEED)
TEST_GROUP = GroupParams(23, 5, 7)


class InterlockState(enum.IntEnum):
    INIT = 0
    COMMITTED = 1
    EXCHANGED = 2
    VERIFIED = 3
    FAILED = 4


def commitment(group: GroupParams, exponent: int, blind: int) -> int:
    return pow(group.g, exponent, group.p) * pow(group.h, blind, group.p) % group.p


@dataclass
class InterlockSession:
    """One side of a commit-then-reveal answer exchange.

    ``context`` (normally both public keys) is folded into the committed
    exponent so an opening only verifies inside the session it was made for.
    An empty context commits to the bare answer index.
    """

    group: GroupParams = PRODUCTION_GROUP
    num_choices: int = 4
    context: bytes = b""
    rng: random.Random = field(default_factory=secrets.SystemRandom, repr=False)
    state: InterlockState = InterlockState.INIT
    my_answer: int | None = field(default=None, repr=False)
    my_blind: int | None = field(default=None, repr=False)
    my_commitment: int | None = None
    peer_commitment: int | None = None

    def exponent(self, answer: int) -> int:
        if not self.context:
            return answer
        tweak = int.from_bytes(hashlib.sha256(b"pcn/interlock/ctx" + self.context).digest(), "big")
        return (answer + self.num_choices * tweak) % (self.group.p - 1)

    def commit(self, answer: int, *, blind: int | None = None) -> int:
        """Commit to ``answer``; ``blind`` overrides the random draw (test hook)."""
        if self.state != InterlockState.INIT:
            raise InvalidState(f"commit in state {self.state.name}")
        if not 0 <= answer < self.num_choices:
            raise AnswerOutOfRange(f"answer {answer} not in [0, {self.num_choices})")
        u = self.rng.randrange(self.group.p - 1) if blind is None else blind
        self.my_answer, self.my_blind = answer, u
        self.my_commitment = commitment(self.group, self.exponent(answer), u)
        self.state = InterlockState.COMMITTED
        return self.my_commitment

    def receive(self, peer_commitment: int) -> None:
        if self.state != InterlockState.COMMITTED:
            raise InvalidState(f"receive in state {self.state.name}")
        if not 1 <= peer_commitment < self.group.p:
            raise CommitmentOutOfRange(f"{peer_commitment} is not a group element")
        self.peer_commitment = peer_commitment
        self.state = InterlockState.EXCHANGED

    def reveal(self) -> tuple[int, int]:
        if self.state < InterlockState.EXCHANGED:
            raise InvalidState("reveal before the peer commitment arrived")
        return self.my_answer, self.my_blind

    def verify(self, peer_answer: int, peer_blind: int, expected_answer: int) -> bool:
        if self.state != InterlockState.EXCHANGED:
            raise InvalidState(f"verify in state {self.state.name}")
        ok = (0 <= peer_answer < self.num_choices
              and commitment(self.group, self.exponent(peer_answer), peer_blind) == self.peer_commitment
              and peer_answer == expected_answer)
        self.state = InterlockState.VERIFIED if ok else InterlockState.FAILED
        return ok


def interlock_commit(session: InterlockSession, answer: int, *, blind: int | None = None) -> int:
    return session.commit(answer, blind=blind)


def interlock_receive(session: InterlockSession, peer_commitment: int) -> None:
    session.receive(peer_commitment)


def interlock_verify(session: InterlockSession, peer_answer: int, peer_blind: int,
                     expected_answer: int) -> bool:
    return session.verify(peer_answer, peer_blind, expected_answer)


@dataclass
class IntroductionParty:
    """A user at a device: their key pair, local label and question knowledge.

    ``answer_to_peer`` is this user's answer to the peer's multiple-choice
    question; ``expected_from_peer`` is the correct answer to their own.
    """

    label: str
    keys: KeyPair
    answer_to_peer: int
    expected_from_peer: int


@dataclass
class IntroductionResult:
    verified: bool
    certs: dict[str, IdentityCert]
    transcript: list[tuple[str, str, object]]


Channel = Callable[[str, str, str, object], object]


def _passthrough(sender: str, receiver: str, kind: str, payload: object) -> object:
    return payload


def introduce(a: IntroductionParty, b: IntroductionParty, *, now: int,
              group: GroupParams = PRODUCTION_GROUP, num_choices: int = 4,
              rng: random.Random | None = None, channel: Channel = _passthrough) -> IntroductionResult:
    """Mutual interlock: exchange keys, both commit, both reveal, both verify.

    Message order within each phase follows lexicographic key-hash order.
    ``channel(sender, receiver, kind, payload)`` may rewrite anything in flight,
    which is how tests stage a man in the middle.  On success each side signs
    an identity statement naming the other.
    """
    rng = rng or secrets.SystemRandom()
    first, second = sorted([a, b], key=lambda party: party.keys.key_hash)
    transcript: list[tuple[str, str, object]] = []

    def send(src: IntroductionParty, dst: IntroductionParty, kind: str, payload):
        out = channel(src.label, dst.label, kind, payload)
        transcript.append((src.label, kind, out))
        return out

    seen_key = {
        second.label: send(first, second, "key", PublicKey.of(first.keys)),
        first.label: send(second, first, "key", PublicKey.of(second.keys)),
    }
    sessions = {}
    for me in (first, second):
        peer_key = seen_key[me.label]
        ctx = b"".join(sorted([me.keys.public_key, peer_key.key]))
        sessions[me.label] = InterlockSession(group, num_choices, ctx, rng)

    commits = {p.label: sessions[p.label].commit(p.answer_to_peer) for p in (first, second)}
    sessions[second.label].receive(send(first, second, "commit", commits[first.label]))
    sessions[first.label].receive(send(second, first, "commit", commits[second.label]))

    openings = {
        second.label: send(first, second, "reveal", sessions[first.label].reveal()),
        first.label: send(second, first, "reveal", sessions[second.label].reveal()),
    }
    ok = True
    for me in (first, second):
        answer, blind = openings[me.label]
        ok &= sessions[me.label].verify(answer, blind, me.expected_from_peer)

    certs: dict[str, IdentityCert] = {}
    if ok:
        for me, peer in ((first, second), (second, first)):
            certs[me.label] = issue_identity_cert(me.keys, peer.label, seen_key[me.label], now)
    return IntroductionResult(bool(ok), certs, transcript)
