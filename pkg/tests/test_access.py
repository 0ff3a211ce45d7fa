from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from corpus import OWNER, SUBSETS, UNIVERSE, evaluate, policy_corpus, random_tree, tree_depth
from pcn.access import (
    AND,
    OR,
    AbePublicKey,
    AttributeSecretKey,
    SecureEnvelope,
    ShamirX25519Backend,
    abe_keygen,
    abe_setup,
    decode_policy,
    encode_policy,
    envelope_decrypt,
    envelope_encrypt,
    envelope_update,
    k_of,
    parse_policy,
    policy_satisfied,
    rekey_lazy,
    render_policy,
    verify_write,
)
from pcn.access.abe import DEFAULT_BACKEND
from pcn.access.envelope import _unwrap_sign_key
from pcn.access.policy import Attribute, Leaf, Threshold
from pcn.errors import (
    EmptyAttributeSet,
    EpochMismatch,
    IntegrityFailure,
    MalformedPolicy,
    MissingMasterKey,
    MissingSignature,
    PolicyNotSatisfied,
    PolicySyntaxError,
    UnknownAttribute,
)
from pcn.identity import KeyPair
from pcn.naming import Name

OWNER_KEYS = KeyPair.from_seed(b"o" * 32)


# -- policy -------------------------------------------------------------------------------

def test_music_sharing_policies(music, bob):
    _, college, team = music
    incubus = AND(college, team)
    peppers = OR(college, team)
    assert not policy_satisfied(incubus, {college})
    assert policy_satisfied(peppers, {college})
    assert policy_satisfied(incubus, {college, team})


def test_threshold_2_of_3():
    a, b, c = UNIVERSE[:3]
    pol = k_of(2, a, b, c)
    for held in SUBSETS:
        assert policy_satisfied(pol, held) == (len(held & {a, b, c}) >= 2)


@pytest.mark.parametrize("k, n", [(0, 2), (3, 2)])
def test_threshold_bounds(k, n):
    with pytest.raises(MalformedPolicy):
        Threshold(k, tuple(Leaf(a) for a in UNIVERSE[:n]))


def test_attribute_nfc():
    composed = Attribute("café", OWNER)
    decomposed = Attribute("café", OWNER)
    assert composed == decomposed


@given(st.integers(0, 10_000), st.sampled_from(SUBSETS), st.sampled_from(UNIVERSE))
def test_monotone(seed, held, extra):
    pol = random_tree(random.Random(seed))
    if policy_satisfied(pol, held):
        assert policy_satisfied(pol, held | {extra})


@given(st.integers(0, 10_000), st.sampled_from(SUBSETS))
def test_evaluator_agrees_with_reference(seed, held):
    pol = random_tree(random.Random(seed))
    assert policy_satisfied(pol, held) == evaluate(pol, held)


@given(st.integers(0, 10_000))
def test_policy_wire_round_trip(seed):
    pol = random_tree(random.Random(seed))
    assert decode_policy(encode_policy(pol)) == pol


@given(st.integers(0, 10_000))
def test_policy_text_round_trip(seed):
    pol = random_tree(random.Random(seed))
    assert parse_policy(render_policy(pol), OWNER) == pol


def test_parse_policy_grammar():
    fam, college, team = UNIVERSE[:3]
    got = parse_policy('family or ("college friends" and "CS219 team")', OWNER)
    assert got == OR(fam, AND(college, team))
    assert parse_policy('2-of(family, "college friends", "CS219 team")', OWNER) == k_of(2, fam, college, team)
    # and binds tighter than or
    assert parse_policy("a or b and c", OWNER) == OR(Attribute("a", OWNER), AND(Attribute("b", OWNER),
                                                                                 Attribute("c", OWNER)))


@pytest.mark.parametrize("text, pos", [("a and", 5), ("(a or b", 7), ("3-of(a, b)", 0), ("a $ b", 2)])
def test_policy_syntax_errors(text, pos):
    with pytest.raises(PolicySyntaxError) as info:
        parse_policy(text, OWNER)
    assert info.value.position == pos


def test_corpus_shape():
    corpus = policy_corpus()
    assert len(corpus) >= 50 and all(tree_depth(p) <= 3 for p in corpus)


# -- ABE -----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def keyring():
    return abe_setup(OWNER_KEYS.principal("Alice"), 11, attributes=_universe_for(OWNER_KEYS))


def _universe_for(keys):
    p = keys.principal("Alice")
    return [Attribute(a.name, p) for a in UNIVERSE]


def test_setup_freshness(alice):
    a, b = abe_setup(alice, 1), abe_setup(alice, 2)
    attrs = [Attribute("x", alice)]
    a.define(attrs)
    b.define(attrs)
    assert a.epoch == b.epoch == 0
    assert a.public_key.attribute_keys != b.public_key.attribute_keys


def test_keygen_errors(keyring, alice):
    with pytest.raises(EmptyAttributeSet):
        abe_keygen(keyring, [], alice)
    with pytest.raises(MissingMasterKey):
        abe_keygen(keyring.public_only(), [_universe_for(OWNER_KEYS)[0]], alice)
    with pytest.raises(UnknownAttribute):
        keyring.define([Attribute("x", alice)])


def test_key_wire_round_trip(keyring, bob):
    sk = abe_keygen(keyring, _universe_for(OWNER_KEYS)[:2], bob)
    assert AttributeSecretKey.decode(sk.encode()) == sk
    pk = keyring.public_key
    assert AbePublicKey.decode(pk.encode()) == pk


def test_round_trip_and_bob_incubus(music, issue, alice_keys, bob):
    keyring, college, team = music
    pk = keyring.public_key
    incubus = envelope_encrypt(pk, b"incubus", AND(college, team), None, alice_keys)
    peppers = envelope_encrypt(pk, b"peppers", OR(college, team), None, alice_keys)
    bob_sk = issue([college], bob)
    cathy_sk = issue([college, team], bob)
    assert envelope_decrypt(peppers, bob_sk, pk) == b"peppers"
    with pytest.raises(PolicyNotSatisfied):
        envelope_decrypt(incubus, bob_sk, pk)
    assert envelope_decrypt(incubus, cathy_sk, pk) == b"incubus"


def test_crypto_route_alone_refuses(music, issue, alice_keys, bob):
    """With the evaluator pre-check off, share recovery itself must fail."""
    keyring, college, team = music
    env = envelope_encrypt(keyring.public_key, b"x", AND(college, team), None, alice_keys)
    with pytest.raises(PolicyNotSatisfied):
        envelope_decrypt(env, issue([college], bob), backend=ShamirX25519Backend(precheck=False))


def test_tampered_body(music, issue, alice_keys, bob):
    keyring, college, _ = music
    env = envelope_encrypt(keyring.public_key, b"content" * 10, OR(college), None, alice_keys)
    sk = issue([college], bob)
    rng = random.Random(9)
    for _ in range(40):
        body = bytearray(env.body)
        i = rng.randrange(len(body))
        body[i] ^= 1 << rng.randrange(8)
        bad = SecureEnvelope(env.read_policy, None, None, b"", bytes(body), None, env.epoch)
        with pytest.raises((IntegrityFailure, PolicyNotSatisfied)):
            envelope_decrypt(bad, sk)


def test_update_and_verify(music, issue, alice_keys, bob, alice):
    keyring, college, team = music
    pk = keyring.public_key
    name = Name(alice, ("doc",))
    env = envelope_encrypt(pk, b"v1", OR(college, team), AND(team), alice_keys)
    with pytest.raises(MissingSignature):
        verify_write(env, name, 1)
    writer = issue([team], bob)
    updated = envelope_update(env, b"v2", writer, pk, name, 2)
    assert verify_write(updated, name, 2)
    assert not verify_write(updated, name, 3)
    assert updated.write_verify_key == env.write_verify_key
    assert envelope_decrypt(updated, issue([college], bob)) == b"v2"
    with pytest.raises(PolicyNotSatisfied):
        envelope_update(env, b"v2", issue([college], bob), pk, name, 2)


def test_immutable_without_write_policy(music, issue, alice_keys, bob, alice):
    keyring, college, _ = music
    env = envelope_encrypt(keyring.public_key, b"v1", OR(college), None, alice_keys)
    with pytest.raises(PolicyNotSatisfied):
        envelope_update(env, b"v2", issue([college], bob), keyring.public_key, Name(alice, ("d",)), 2)


def test_envelope_wire_stable(music, issue, alice_keys, bob, alice):
    keyring, college, team = music
    name = Name(alice, ("doc",))
    env = envelope_encrypt(keyring.public_key, b"v1", OR(college), OR(team), alice_keys)
    upd = envelope_update(env, b"v2", issue([team], bob), keyring.public_key, name, 5)
    back = SecureEnvelope.decode(upd.encode())
    assert back == upd
    assert verify_write(back, name, 5) == verify_write(upd, name, 5)
    data = upd.encode()
    assert data[0] == 0x30 and int.from_bytes(data[1:5], "big") == upd.epoch


def test_no_key_material_in_envelope(alice_keys, bob):
    """Canary scan: MK, attribute keys, content key and write-sign key never hit the wire."""
    principal = alice_keys.principal("Alice")
    attrs = [Attribute(n, principal) for n in ("r", "w")]
    keyring = abe_setup(principal, 99, attributes=attrs)
    rng = random.Random(4)
    env = envelope_encrypt(keyring.public_key, b"secret", OR(attrs[0]), OR(attrs[1]), alice_keys, rng=rng)
    wire = env.encode()
    sk = abe_keygen(keyring, attrs, bob)
    canaries = [keyring.master_key, *sk.keys.values()]
    # recover the content key and write-sign key through a satisfying key
    sign_key = _unwrap_sign_key(DEFAULT_BACKEND, env, sk)
    canaries.append(sign_key.private_key)
    kem_ct = env.body[4:4 + int.from_bytes(env.body[:4], "big")]
    canaries.append(DEFAULT_BACKEND.decapsulate(kem_ct, sk))
    for secret in canaries:
        assert secret not in wire


# -- lazy revocation -----------------------------------------------------------------------

def test_rekey(music, issue, alice_keys, bob, alice):
    keyring, college, team = music
    name = Name(alice, ("doc",))
    env = envelope_encrypt(keyring.public_key, b"old", OR(college), OR(team), alice_keys)
    old_sk = issue([college, team], bob)
    new_ring = rekey_lazy(keyring)
    assert new_ring.epoch == keyring.epoch + 1
    assert envelope_decrypt(env, old_sk) == b"old"
    upd = envelope_update(env, b"new", old_sk, new_ring.public_key, name, 2)
    with pytest.raises(EpochMismatch):
        envelope_decrypt(upd, old_sk)
    fresh = abe_keygen(new_ring, [college], bob)
    assert envelope_decrypt(upd, fresh) == b"new"
    with pytest.raises(MissingMasterKey):
        rekey_lazy(keyring.public_only())


def test_epoch_mismatch_on_keygen(music, alice_keys, bob):
    keyring, college, _ = music
    sk0 = abe_keygen(keyring, [college], bob)
    ring1 = rekey_lazy(keyring)
    env1 = envelope_encrypt(ring1.public_key, b"x", OR(college), None, alice_keys)
    with pytest.raises(EpochMismatch):
        envelope_decrypt(env1, sk0)
