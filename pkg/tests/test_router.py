from __future__ import annotations

import random
from collections import deque

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import keypair
from pcn.identity import issue_delegation
from pcn.naming import Name, Prefix, parse_name, parse_prefix
from pcn.router.engine import (
    LOCAL_FACE,
    CacheInvalidated,
    Drop,
    FibUpdated,
    Forward,
    KeyRevoked,
    Rejected,
    RejectReason,
    Router,
    RouterConfig,
    ServeData,
    announce,
    regular,
)
from pcn.router.packets import (
    Announcement,
    AnnouncementKind,
    DataPacket,
    Interest,
    ModificationPayload,
    RevocationPayload,
    decode_packet,
)
from pcn.errors import NotAuthorized
from pcn.sync.vv import VersionVector


def packet(keys, name: Name, content: bytes = b"c", vv=None) -> DataPacket:
    return DataPacket.create(name, content, keys, version_vector=vv)


def test_fib_forwarding_to_desktop(alice_keys, resolver):
    r = Router("bob.laptop")
    r.process_announcement(regular(parse_prefix("/Alice/my music/pepper/", resolver), alice_keys, 0), "desktop", 0)
    r.process_announcement(regular(parse_prefix("/Alice/my music/", resolver), alice_keys, 0), "laptop", 0)
    action = r.process_interest(Interest(parse_name("/Alice/my music/pepper/abc.mp3", resolver), 1), LOCAL_FACE, 1)
    assert isinstance(action, Forward) and action.faces == ("desktop",)
    assert r.pit.get(action.interest.name) is not None


def test_cache_before_repository(alice_keys, alice):
    class Spy(dict):
        reads = 0

        def __getitem__(self, k):
            Spy.reads += 1
            return super().__getitem__(k)

    r = Router("n", repository=Spy())
    p = packet(alice_keys, Name(alice, ("f",), 5))
    r.publish(p)
    r.store.cache(p)
    act = r.process_interest(Interest(p.name, 1), "x", 0)
    assert isinstance(act, ServeData) and act.tier == "cache" and Spy.reads == 0
    r.store.memory_cache.clear()
    r.store._cache_index.clear()
    assert r.process_interest(Interest(p.name, 2), "x", 0).tier == "repository"


def test_latest_version_for_versionless_interest(alice_keys, alice):
    r = Router("n")
    for v in (3, 9, 5):
        r.publish(packet(alice_keys, Name(alice, ("f",), v)))
    act = r.process_interest(Interest(Name(alice, ("f",)), 1), "x", 0)
    assert act.packet.name.version == 9


def test_duplicate_nonce_dropped(alice_keys, alice):
    r = Router("n")
    r.process_announcement(regular(Prefix(alice), alice_keys, 0), "up", 0)
    assert isinstance(r.process_interest(Interest(Name(alice, ("f",)), 7), "a", 0), Forward)
    assert r.process_interest(Interest(Name(alice, ("f",)), 7), "b", 0) == Drop("duplicate nonce")


def test_no_route(alice):
    assert Router("n").process_interest(Interest(Name(alice, ("f",)), 1), "a", 0) == Drop("no route")


def test_pit_aggregation_and_delivery(alice_keys, alice):
    r = Router("n")
    r.process_announcement(regular(Prefix(alice), alice_keys, 0), "up", 0)
    name = Name(alice, ("f",), 1)
    r.process_interest(Interest(name, 1), "a", 0)
    assert r.process_interest(Interest(name, 2), "b", 0) == Drop("aggregated")
    faces = r.process_data(packet(alice_keys, name), "up", 1)
    assert faces == {"a", "b"}
    assert len(r.pit) == 0 and name in r.store


def test_forged_data_dropped(alice_keys, bob_keys, alice):
    r = Router("n")
    r.process_announcement(regular(Prefix(alice), alice_keys, 0), "up", 0)
    name = Name(alice, ("f",), 1)
    r.process_interest(Interest(name, 1), "a", 0)
    forged = packet(bob_keys, name)
    assert r.process_data(forged, "up", 1) == frozenset()
    assert name not in r.store and r.metrics["data_rejected_signature"] == 1
    good = packet(alice_keys, name)
    tampered = DataPacket(name, b"other", good.signer_key, signature=good.signature)
    assert r.process_data(tampered, "up", 1) == frozenset()


@pytest.mark.parametrize("cache_unsolicited", [False, True])
def test_unsolicited_data(alice_keys, alice, cache_unsolicited):
    r = Router("n", RouterConfig(cache_unsolicited=cache_unsolicited))
    p = packet(alice_keys, Name(alice, ("f",), 1))
    assert r.process_data(p, "x", 0) == frozenset()
    assert (p.name in r.store) is cache_unsolicited


def test_cache_capacity_lru(alice_keys, alice):
    r = Router("n", RouterConfig(cache_capacity=2))
    ps = [packet(alice_keys, Name(alice, (f"f{i}",), 1)) for i in range(3)]
    r.store.cache(ps[0])
    r.store.cache(ps[1])
    r.store.lookup(ps[0].name)
    r.store.cache(ps[2])
    assert list(r.store.memory_cache) == [ps[0].name, ps[2].name]


@given(st.integers(0, 3), st.integers(0, 2000))
def test_pit_expiry(first_face, delay):
    keys = keypair("alice")
    owner = keys.principal()
    r = Router("n")
    r.process_announcement(regular(Prefix(owner), keys, 0), "up", 0)
    name = Name(owner, ("f",), 1)
    r.process_interest(Interest(name, first_face), "a", 0)
    r.expire(r.config.pit_ttl_ms + delay)
    assert len(r.pit) == 0


# -- announcements --------------------------------------------------------------------------

def test_delegated_announcement(alice_keys, bob_keys, resolver, bob):
    prefix = parse_prefix("/Alice/my doc/proj/", resolver)
    cert = issue_delegation(alice_keys, prefix, bob, 10_000)
    ann = regular(prefix, bob_keys, 0, delegation=cert)
    assert isinstance(Router("n").process_announcement(ann, "bob", 1), FibUpdated)
    with pytest.raises(NotAuthorized):
        regular(prefix, bob_keys, 0)
    with pytest.raises(NotAuthorized):
        regular(parse_prefix("/Alice/my doc/", resolver), bob_keys, 0, delegation=cert)


def test_modification_payload(alice_keys, alice):
    name = Name(alice, ("doc",), 17)
    vv = VersionVector({"laptop": 3})
    ann = announce(AnnouncementKind.MODIFICATION, Prefix(alice, ("doc",)), ModificationPayload(name, vv),
                   alice_keys, 0)
    back = Announcement.decode(ann.encode())
    assert back == ann
    assert (back.payload.name, back.payload.version, back.payload.version_vector) == (name, 17, vv)


def test_replay_and_expiry(alice_keys, alice):
    r = Router("n")
    ann = regular(Prefix(alice), alice_keys, 0, lifetime_ms=1000)
    assert isinstance(r.process_announcement(ann, "a", 0), FibUpdated)
    assert r.process_announcement(ann, "b", 1) == Rejected(RejectReason.REPLAYED)
    fresh = Router("m")
    assert fresh.process_announcement(ann, "a", ann.expires_at + 1) == Rejected(RejectReason.EXPIRED)
    assert fresh.process_announcement(ann, "a", ann.expires_at) == Rejected(RejectReason.EXPIRED)


def test_modification_invalidates_cache(alice_keys, alice):
    r = Router("n")
    old = Name(alice, ("doc",), 1)
    r.store.cache(packet(alice_keys, old, vv=VersionVector({"d": 1})))
    ann = announce(AnnouncementKind.MODIFICATION, Prefix(alice, ("doc",)),
                   ModificationPayload(Name(alice, ("doc",), 2), VersionVector({"d": 2})), alice_keys, 0)
    effect = r.process_announcement(ann, "a", 1)
    assert isinstance(effect, CacheInvalidated) and effect.count == 1
    assert not isinstance(r.process_interest(Interest(old, 5), "x", 2), ServeData)
    # a stale copy arriving later is not cached either
    r.process_interest(Interest(old, 9), "y", 3)
    assert r.process_data(packet(alice_keys, old, vv=VersionVector({"d": 1})), "a", 4) == frozenset()
    assert old not in r.store


def test_revocation(alice_keys, alice):
    r = Router("n")
    r.process_announcement(regular(Prefix(alice), alice_keys, 0), "a", 0)
    r.store.cache(packet(alice_keys, Name(alice, ("f",), 1)))
    ann = announce(AnnouncementKind.REVOCATION, Prefix(alice), RevocationPayload(alice_keys.key_hash),
                   alice_keys, 0)
    effect = r.process_announcement(ann, "a", 1)
    assert effect == KeyRevoked(alice_keys.key_hash, 1, 1)
    assert len(r.fib) == 0
    later = regular(Prefix(alice), alice_keys, 2)
    assert r.process_announcement(later, "a", 3) == Rejected(RejectReason.REVOKED)


def test_bad_signature(alice_keys, alice):
    ann = regular(Prefix(alice), alice_keys, 0)
    bad = Announcement(ann.kind, Prefix(alice, ("x",)), ann.payload, ann.signer_key, ann.nonce,
                       ann.expires_at, None, ann.signature)
    assert Router("n").process_announcement(bad, "a", 1) == Rejected(RejectReason.BAD_SIGNATURE)


def test_packet_decoding(alice_keys, alice):
    i = Interest(Name(alice, ("f",)), 99)
    d = packet(alice_keys, Name(alice, ("f",), 2), vv=VersionVector({"x": 1}))
    a = regular(Prefix(alice), alice_keys, 0)
    for p in (i, d, a):
        assert decode_packet(p.encode()) == p


# -- forwarding over random forests -------------------------------------------------------

def _forest(rng: random.Random, n: int) -> dict[int, set[int]]:
    adj = {i: set() for i in range(n)}
    for i in range(1, n):
        if rng.random() < 0.85:
            j = rng.randrange(i)
            adj[i].add(j)
            adj[j].add(i)
    return adj


def _reachable(adj, a, b) -> bool:
    seen, todo = {a}, deque([a])
    while todo:
        x = todo.popleft()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                todo.append(y)
    return b in seen


@pytest.mark.parametrize("seed", range(25))
def test_forwarding_correctness(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 20)
    adj = _forest(rng, n)
    keys = keypair("owner")
    owner = keys.principal()
    routers = {i: Router(str(i)) for i in range(n)}
    holder = rng.randrange(n)
    data = packet(keys, Name(owner, ("f",), 1))
    routers[holder].publish(data)

    ann = regular(Prefix(owner), keys, 0)
    routers[holder].note_originated(ann)
    todo = deque((nb, str(holder)) for nb in adj[holder])
    while todo:
        node, face = todo.popleft()
        if isinstance(routers[node].process_announcement(ann, face, 1), Rejected):
            continue
        todo.extend((nb, str(node)) for nb in adj[node] if str(nb) != face)

    requester = rng.randrange(n)
    delivered = False
    todo = deque([(requester, LOCAL_FACE, Interest(data.name.unversioned(), rng.getrandbits(64)))])
    replies = deque()
    while todo:
        node, face, interest = todo.popleft()
        act = routers[node].process_interest(interest, face, 2)
        if isinstance(act, ServeData):
            replies.append((int(face) if face != LOCAL_FACE else None, act.packet, str(node)))
        elif isinstance(act, Forward):
            todo.extend((int(f), str(node), interest) for f in act.faces)
    while replies:
        node, pkt, face = replies.popleft()
        if node is None:
            delivered = True
            continue
        for out in routers[node].process_data(pkt, face, 3):
            if out == LOCAL_FACE:
                delivered = True
            else:
                replies.append((int(out), pkt, str(node)))
    assert delivered == _reachable(adj, requester, holder)
    if delivered:
        assert all(len(r.pit) == 0 for r in routers.values())
    for r in routers.values():
        r.expire(2 + r.config.pit_ttl_ms)
    assert all(len(r.pit) == 0 for r in routers.values())
