"""End-to-end acceptance criteria.  Each test carries a ``criterion`` mark and
the terminal summary prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import collections
import dataclasses
import hashlib
import random
import time

import pytest
from scipy import stats

from corpus import SUBSETS, UNIVERSE, evaluate, policy_corpus, rebind, tree_depth
from schedules import run_schedule
from pcn.access.abe import ShamirX25519Backend, abe_keygen, abe_setup, rekey_lazy
from pcn.access.envelope import (SecureEnvelope, envelope_decrypt, envelope_encrypt, envelope_update,
                                 write_signed_bytes, write_verified)
from pcn.access.policy import Attribute, Leaf, Threshold
from pcn.errors import EpochMismatch, IntegrityFailure, PolicyNotSatisfied
from pcn.identity import (TEST_GROUP, IntroductionParty, InterlockSession, KeyPair, PublicKey, commitment,
                          introduce, issue_delegation)
from pcn.naming import Name, Prefix, canonical_encode
from pcn.router.engine import FibUpdated, Rejected, RejectReason, Router, regular
from pcn.router.packets import Announcement, AnnouncementKind, RegularPayload
from pcn.simnet.oracles import coherence_violations
from pcn.simnet.scenario import simulate
from pcn.sync.replica import Replica, Revision, accepts_remote
from pcn.sync.vv import VersionVector

from conftest import ROOT, keypair

criterion = pytest.mark.criterion
TOL = 0.05

OWNER_KEYS = keypair("acceptance-owner")
OWNER = OWNER_KEYS.principal("Alice")
ATTRS = [Attribute(a.name, OWNER) for a in UNIVERSE]
OUTSIDER = Attribute("outsider", OWNER)
CORPUS = [rebind(p, OWNER) for p in policy_corpus()]
CRYPTO_ONLY = ShamirX25519Backend(precheck=False)
ROUTES = {"default": ShamirX25519Backend(), "crypto-only": CRYPTO_ONLY}


@pytest.fixture(scope="module")
def keyring():
    return abe_setup(OWNER, 2011, attributes=ATTRS + [OUTSIDER])


@pytest.fixture(scope="module")
def subset_keys(keyring):
    """One key per subset of the universe; the empty subset holds only an unrelated attribute."""
    bob = keypair("acceptance-reader").principal("Bob")
    out = []
    for held in SUBSETS:
        rebound = frozenset(Attribute(a.name, OWNER) for a in held)
        out.append((rebound, abe_keygen(keyring, rebound or {OUTSIDER}, bob)))
    return out


def within(value: float, target: float) -> bool:
    return abs(value - target) <= TOL * target


# -- 1 -----------------------------------------------------------------------------------------

@criterion(1, "routing table: 6000 entries / 0.6 MB at k=1, 600k entries / 60 MB at k=2")
def test_routing_table_sizes():
    start = time.perf_counter()
    sim, report = simulate((ROOT / "scenarios/routing_table.pcn").read_text())
    elapsed = time.perf_counter() - start
    hub = report.nodes["me.d"]
    assert report.quiescent
    assert hub.fib_entries == 6000
    assert within(hub.fib_bytes, 600_000)
    # recount from each entry's canonical encoding
    sizes = [len(canonical_encode(e.prefix)) for e in sim.node("me.d").router.fib.entries()]
    assert set(sizes) == {100} and sum(sizes) == hub.fib_bytes
    assert elapsed < 60
    k2 = next(e for e in report.estimates if e["k"] == 2)
    assert within(k2["entries"], 600_000)
    assert within(k2["bytes"], 60_000_000)


# -- 2 -----------------------------------------------------------------------------------------

@criterion(2, "envelope_decrypt succeeds iff the key's attributes satisfy the read policy")
def test_decrypt_iff_satisfy(keyring, subset_keys):
    assert len(CORPUS) >= 50 and all(tree_depth(p) <= 3 for p in CORPUS)
    start = time.perf_counter()
    rng = random.Random(2)
    mismatches = []
    cases = 0
    for i, policy in enumerate(CORPUS):
        content = f"file {i}".encode()
        env = envelope_encrypt(keyring.public_key, content, policy, None, OWNER_KEYS, rng=rng)
        for held, sk in subset_keys:
            expected = evaluate(policy, held)
            for route, backend in ROUTES.items():
                cases += 1
                try:
                    ok = envelope_decrypt(env, sk, keyring.public_key, backend=backend) == content
                except PolicyNotSatisfied:
                    ok = False
                if ok != expected:
                    mismatches.append((i, sorted(a.name for a in held), route))
    assert cases == len(CORPUS) * 16 * 2
    assert mismatches == []
    assert time.perf_counter() - start < 30


# -- 3 -----------------------------------------------------------------------------------------

def _tampered(upd: SecureEnvelope, name: Name, version: int, rng: random.Random, attacker: KeyPair):
    yield "stripped", dataclasses.replace(upd, write_signature=None)
    for _ in range(3):
        body = bytearray(upd.body)
        body[rng.randrange(len(body))] ^= 1 << rng.randrange(8)
        yield "flipped", dataclasses.replace(upd, body=bytes(body))
    yield "swapped", dataclasses.replace(upd, write_verify_key=PublicKey.of(attacker))
    resigned = attacker.sign(write_signed_bytes(name, version, upd.body))
    yield "swapped+resigned", dataclasses.replace(upd, write_verify_key=PublicKey.of(attacker),
                                                  write_signature=resigned)


@criterion(3, "writes succeed iff the write policy holds; zero false accepts over tampered updates")
def test_write_enforcement(keyring, subset_keys):
    rng = random.Random(3)
    attacker = keypair("acceptance-attacker")
    name = Name(OWNER, ("docs", "shared"))
    everyone = Threshold(1, tuple(Leaf(a) for a in ATTRS))
    pk = keyring.public_key
    wrong, false_accepts, false_rejects = [], [], []
    tamper_cases = collections.Counter()
    for i, policy in enumerate(CORPUS):
        env = envelope_encrypt(pk, b"v1", everyone, policy, OWNER_KEYS, rng=rng)
        replica = Replica.from_revision(name, Revision(OWNER.public_key_hash, "Alice.d", 0, 1,
                                                       VersionVector({"Alice.d": 1}), env))
        for held, sk in subset_keys:
            expected = evaluate(policy, held)
            for route, backend in ROUTES.items():
                try:
                    upd = envelope_update(env, b"v2", sk, pk, name, 2, rng=rng, backend=backend)
                except PolicyNotSatisfied:
                    upd = None
                if (upd is not None) != expected:
                    wrong.append((i, sorted(a.name for a in held), route))
                if upd is None or route != "default":
                    continue
                if not (accepts_remote(replica, upd, name, 2, False) and write_verified(upd, name, 2)):
                    false_rejects.append((i, sorted(a.name for a in held)))
                if accepts_remote(replica, upd, name, 3, False):
                    false_accepts.append((i, "wrong version"))
                for kind, bad in _tampered(upd, name, 2, rng, attacker):
                    tamper_cases[kind] += 1
                    if accepts_remote(replica, bad, name, 2, False):
                        false_accepts.append((i, kind, "replica"))
                    if kind != "swapped+resigned" and write_verified(bad, name, 2):
                        false_accepts.append((i, kind, "verify_write"))
    assert wrong == []
    assert false_rejects == []
    assert sum(tamper_cases.values()) >= 1000, tamper_cases
    assert false_accepts == []


# -- 4 and 6 -----------------------------------------------------------------------------------

SEEDS = range(200)


@pytest.fixture(scope="module")
def verdicts():
    start = time.perf_counter()
    out = [run_schedule(seed) for seed in SEEDS]
    return out, time.perf_counter() - start


@pytest.mark.slow
@criterion(4, "200 random partition schedules match the happens-before oracle")
def test_eventual_consistency(verdicts):
    results, elapsed = verdicts
    disagreements = [(v.seed, v.files, v.unsettled) for v in results if not v.agrees]
    assert all(v.nodes <= 6 and v.updates <= 20 for v in results)
    # both outcomes must actually occur for the agreement figure to mean anything
    outcomes = collections.Counter(e for v in results for e, _ in v.files.values())
    assert outcomes[True] > 0 and outcomes[False] > 0
    assert disagreements == []
    assert elapsed < 300


@criterion(6, "no node serves a cached packet older than a Modification it processed")
def test_cache_coherence(verdicts):
    results, _ = verdicts
    assert sum(v.stale_serves for v in results) == 0
    assert sum(v.serves for v in results) > 0 and sum(v.modifications for v in results) > 0
    for path in sorted((ROOT / "scenarios").glob("*.pcn")):
        sim, _ = simulate(path.read_text())
        assert coherence_violations(sim.trace) == [], path.name


@criterion(6, "no node serves a cached packet older than a Modification it processed")
def test_coherence_checker_catches_stale_serve():
    p = OWNER
    old, new = Name(p, ("f",), 1), Name(p, ("f",), 2)
    trace = [{"kind": "modification", "node": "n", "name": new, "vv": VersionVector({"d": 2})},
             {"kind": "serve", "node": "n", "name": old, "vv": VersionVector({"d": 1})}]
    assert len(coherence_violations(trace)) == 1


# -- 5 -----------------------------------------------------------------------------------------

NOW = 1_000_000
PREFIX = Prefix(OWNER, ("music",))


def _signed(signer: KeyPair, claimed: PublicKey, *, expires_at: int, delegation=None, nonce: int = 1):
    unsigned = Announcement(AnnouncementKind.REGULAR, PREFIX, RegularPayload(), claimed, nonce,
                            expires_at, delegation)
    return dataclasses.replace(unsigned, signature=signer.sign(unsigned.signed_bytes()))


def _announcements(role: str, case: str):
    """The announcement for one cell, plus any that must be processed before it."""
    delegate = keypair("acceptance-delegate")
    stranger = keypair("acceptance-stranger")
    cert = issue_delegation(OWNER_KEYS, PREFIX, delegate.principal("Bob"), NOW + 3_600_000)
    keys, delegation = {"owner": (OWNER_KEYS, None), "delegate": (delegate, cert),
                        "stranger": (stranger, None)}[role]
    claimed = PublicKey.of(keys)
    if case == "valid":
        return [], _signed(keys, claimed, expires_at=NOW + 60_000, delegation=delegation)
    if case == "expired":
        return [], _signed(keys, claimed, expires_at=NOW - 1, delegation=delegation)
    if case == "forged":
        # signed by someone other than the claimed key
        forger = keypair("acceptance-forger")
        return [], _signed(forger, claimed, expires_at=NOW + 60_000, delegation=delegation)
    first = _signed(keys, claimed, expires_at=NOW + 60_000, delegation=delegation, nonce=77)
    return [first], first


EXPECTED = {
    ("owner", "valid"): None, ("delegate", "valid"): None,
    ("stranger", "valid"): RejectReason.BAD_DELEGATION,
    ("owner", "expired"): RejectReason.EXPIRED, ("delegate", "expired"): RejectReason.EXPIRED,
    ("stranger", "expired"): RejectReason.EXPIRED,
    ("owner", "forged"): RejectReason.BAD_SIGNATURE, ("delegate", "forged"): RejectReason.BAD_SIGNATURE,
    ("stranger", "forged"): RejectReason.BAD_SIGNATURE,
    ("owner", "replayed"): RejectReason.REPLAYED, ("delegate", "replayed"): RejectReason.REPLAYED,
    # the stranger's first copy was never accepted, so its replay fails on authorization again
    ("stranger", "replayed"): RejectReason.BAD_DELEGATION,
}


@criterion(5, "prefix announcements: FIB changes only for valid owner/delegate announcements")
@pytest.mark.parametrize("role, case", sorted(EXPECTED))
def test_prefix_protection(role, case):
    router = Router("hub")
    before, ann = _announcements(role, case)
    for earlier in before:
        router.process_announcement(earlier, "face", NOW)
    fib_before = len(router.fib)
    effect = router.process_announcement(ann, "face", NOW)
    expected = EXPECTED[(role, case)]
    if expected is None:
        assert effect == FibUpdated(PREFIX)
        assert router.fib.lookup(PREFIX.as_name().child("song"), NOW) is not None
    else:
        assert effect == Rejected(expected)
        assert len(router.fib) == fib_before
        if not before:
            assert len(router.fib) == 0


@criterion(5, "prefix announcements: FIB changes only for valid owner/delegate announcements")
def test_expired_delegation_rejected():
    delegate = keypair("acceptance-delegate")
    cert = issue_delegation(OWNER_KEYS, PREFIX, delegate.principal("Bob"), NOW - 1)
    ann = _signed(delegate, PublicKey.of(delegate), expires_at=NOW + 60_000, delegation=cert)
    router = Router("hub")
    assert router.process_announcement(ann, "face", NOW) == Rejected(RejectReason.BAD_DELEGATION)
    assert len(router.fib) == 0
    assert router.process_announcement(regular(PREFIX, OWNER_KEYS, NOW), "face", NOW) == FibUpdated(PREFIX)


# -- 7 -----------------------------------------------------------------------------------------

OPS = ("rekey", "update", "read-old")


@criterion(7, "lazy revocation: old-key reads succeed exactly on content written before the first rekey")
def test_lazy_revocation_timeline():
    rng = random.Random(7)
    friends = Attribute("friends", OWNER)
    ring0 = abe_setup(OWNER, 8, attributes=[friends])
    policy = Leaf(friends)
    name = Name(OWNER, ("photos", "trip"))
    reader = keypair("acceptance-revoked").principal("Eve")
    old_key = abe_keygen(ring0, [friends], reader)
    owner_sks = {}

    def owner_sk(ring):
        # sibling branches rekey independently, so cache by master key rather than epoch
        if ring.master_key not in owner_sks:
            owner_sks[ring.master_key] = abe_keygen(ring, [friends], OWNER)
        return owner_sks[ring.master_key]

    env0 = envelope_encrypt(ring0.public_key, b"v0", policy, policy, OWNER_KEYS, rng=rng)
    stats_ = collections.Counter()
    failures = []

    def explore(seq, rings, env, content, version, rekeyed, written_after_rekey):
        stats_["sequences"] += 1
        if len(seq) == 8:
            return
        for op in OPS:
            path = seq + (op,)
            if op == "rekey":
                fresh = rekey_lazy(rings[-1], rng)
                explore(path, rings + [fresh], env, content, version, True, written_after_rekey)
            elif op == "update":
                ring = rings[-1]
                body = f"v{version + 1}".encode()
                base_ring = rings[env.epoch]
                upd = envelope_update(env, body, owner_sk(base_ring), ring.public_key, name, version + 1, rng=rng)
                explore(path, rings, upd, body, version + 1, rekeyed, written_after_rekey or rekeyed)
            else:
                stats_["reads"] += 1
                try:
                    got = envelope_decrypt(env, old_key)
                except (EpochMismatch, PolicyNotSatisfied, IntegrityFailure):
                    got = None
                model_ok = not written_after_rekey
                if (got is not None) != model_ok or (got is not None and got != content):
                    failures.append(path)
                # a current member always reads the latest content
                if envelope_decrypt(env, owner_sk(rings[env.epoch])) != content:
                    failures.append(path + ("current",))
                explore(path, rings, env, content, version, rekeyed, written_after_rekey)

    explore((), [ring0], env0, b"v0", 0, False, False)
    assert stats_["sequences"] == sum(3 ** n for n in range(9))
    assert failures == []


# -- 8 -----------------------------------------------------------------------------------------

class HashCommitBaseline:
    """Strawman interlock commitment: the bare hash of the answer."""

    def __init__(self, num_choices: int = 4) -> None:
        self.num_choices = num_choices

    def commit(self, answer: int) -> bytes:
        return hashlib.sha256(answer.to_bytes(4, "big")).digest()


def dictionary_attack(num_choices: int, matches) -> list[int]:
    """Every answer some opening explains; one candidate means the answer leaked."""
    return [a for a in range(num_choices) if matches(a)]


@criterion(8, "interlock completes honestly; hash baseline falls to a dictionary attack, commitments hide")
def test_interlock_honest_runs():
    a = IntroductionParty("Alice", keypair("intro-alice"), 2, 1)
    b = IntroductionParty("Bob", keypair("intro-bob"), 1, 2)
    for group in (TEST_GROUP, None):
        kw = {"group": group} if group else {}
        assert introduce(a, b, now=0, rng=random.Random(1), **kw).verified


@criterion(8, "interlock completes honestly; hash baseline falls to a dictionary attack, commitments hide")
def test_dictionary_attacker():
    rng = random.Random(8)
    baseline = HashCommitBaseline()
    trials = 500
    leaked_hash = leaked_pedersen = 0
    guessed = 0
    for _ in range(trials):
        answer = rng.randrange(4)
        c = baseline.commit(answer)
        found = dictionary_attack(4, lambda x: baseline.commit(x) == c)
        leaked_hash += found == [answer]

        session = InterlockSession(TEST_GROUP, 4, rng=rng)
        com = session.commit(answer)
        found = dictionary_attack(4, lambda x: any(commitment(TEST_GROUP, x, u) == com
                                                   for u in range(TEST_GROUP.p - 1)))
        leaked_pedersen += len(found) == 1
        guessed += rng.choice(found) == answer
    assert leaked_hash == trials
    assert leaked_pedersen == 0
    # a guess among the surviving candidates does no better than chance
    assert stats.binomtest(guessed, trials, 0.25).pvalue > 0.01


@criterion(8, "interlock completes honestly; hash baseline falls to a dictionary attack, commitments hide")
def test_commitments_indistinguishable():
    rng = random.Random(88)
    n = 4000
    counts = []
    for answer in (0, 1):
        tally = collections.Counter(InterlockSession(TEST_GROUP, 4, rng=rng).commit(answer) for _ in range(n))
        counts.append([tally[v] for v in range(1, TEST_GROUP.p)])
    _, pvalue, _, _ = stats.chi2_contingency(counts)
    assert pvalue > 0.01
    # the baseline is trivially distinguishable: its commitments never coincide
    baseline = HashCommitBaseline()
    assert baseline.commit(0) != baseline.commit(1)
