from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcn.errors import ComponentTooLong, DecodeError, MalformedName, UnknownPrincipal
from pcn.naming import (
    DIGEST_SIZE,
    LinearPrefixTable,
    MonotonicClock,
    Name,
    Prefix,
    PrefixTrie,
    Principal,
    canonical_decode,
    canonical_encode,
    is_prefix_of,
    longest_prefix_match,
    parse_name,
    parse_prefix,
)

P = Principal(bytes(range(32)), "Alice")
Q = Principal(bytes(range(1, 33)), "Bob")

components = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12)
names = st.builds(
    lambda p, comps, v, s: Name(p, tuple(comps), v, s if v is not None else None),
    st.sampled_from([P, Q]),
    st.lists(components, max_size=5),
    st.one_of(st.none(), st.integers(-2**63, 2**63 - 1)),
    st.one_of(st.none(), st.integers(0, 2**32 - 1)),
)
prefixes = st.builds(lambda p, c: Prefix(p, tuple(c)), st.sampled_from([P, Q]),
                     st.lists(st.sampled_from(["a", "b", "c"]), max_size=4))


def test_example_name(resolver, alice):
    name = parse_name("/Alice/my music/pepper/abc.mp3", resolver)
    assert name == Name(alice, ("my music", "pepper", "abc.mp3"))


def test_root_name(resolver, alice):
    assert parse_name("/Alice", resolver) == Name(alice, ())


def test_escaped_slash(resolver, alice):
    assert parse_name("/Alice/a%2Fb", resolver).components == ("a/b",)


def test_version_and_segment(resolver):
    name = parse_name("/Alice/f/v42/s3", resolver)
    assert (name.components, name.version, name.segment) == (("f",), 42, 3)
    # "v3x" is an ordinary component, only the exact pattern is a version
    assert parse_name("/Alice/v3x", resolver).version is None


@pytest.mark.parametrize("text, exc", [
    ("/Carol/x", UnknownPrincipal),
    ("Alice/x", MalformedName),
    ("/Alice//x", MalformedName),
    ("/Alice/a%zz", MalformedName),
    ("/Alice/f/s3", MalformedName),
])
def test_parse_errors(resolver, text, exc):
    with pytest.raises(exc):
        parse_name(text, resolver)


def test_segment_requires_version(alice):
    with pytest.raises(MalformedName):
        Name(alice, ("x",), None, 1)


def test_principal_equality_ignores_label():
    a = Principal(bytes(32), "Alice")
    assert a == Principal(bytes(32), "someone else")
    assert hash(a) == hash(Principal(bytes(32)))
    with pytest.raises(ValueError):
        Principal(b"short")


def test_empty_encoding():
    assert canonical_encode(Name(P)) == P.public_key_hash + b"\x00\x00" + b"\x00"


def test_encoding_layout():
    enc = canonical_encode(Name(P, ("ab",), 5, 2))
    assert enc == (P.public_key_hash + b"\x00\x01" + b"\x00\x02ab" + b"\x03"
                   + (5).to_bytes(8, "big", signed=True) + (2).to_bytes(4, "big"))


def test_label_not_encoded():
    assert canonical_encode(Name(Principal(bytes(32), "x"), ("a",))) == \
        canonical_encode(Name(Principal(bytes(32), "y"), ("a",)))


def test_component_too_long():
    with pytest.raises(ComponentTooLong):
        canonical_encode(Name(P, ("x" * 70_000,)))


def test_decode_rejects_bad_flags():
    with pytest.raises(DecodeError):
        canonical_decode(P.public_key_hash + b"\x00\x00\x80")
    with pytest.raises(DecodeError):
        canonical_decode(canonical_encode(Name(P)) + b"\x00")


@given(names)
def test_encode_round_trip(name):
    enc = canonical_encode(name)
    assert canonical_decode(enc) == name
    assert canonical_encode(canonical_decode(enc)) == enc


@given(names, names)
def test_encoding_injective(a, b):
    assert (canonical_encode(a) == canonical_encode(b)) == (a == b)


@given(names)
def test_render_parse_round_trip(name):
    resolver = {"Alice": P, "Bob": Q}
    assert parse_name(name.render(), resolver) == name


@given(st.lists(components, min_size=1, max_size=4))
def test_escape_oracle(comps):
    name = Name(P, tuple(comps))
    text = name.render()
    assert text.count("/") == len(comps) + 1
    assert parse_name(text, {"Alice": P}).components == tuple(comps)


def test_hex_root_without_label():
    anon = Principal(bytes(32))
    name = Name(anon, ("a",))
    assert name.render().startswith("/~00")
    assert parse_name(name.render()) == name


def test_is_prefix_of_examples(resolver):
    full = parse_name("/Alice/my music/pepper/abc.mp3", resolver)
    assert is_prefix_of(parse_prefix("/Alice/my music/", resolver), full)
    assert not is_prefix_of(parse_prefix("/Alice/my music/pep", resolver), full)
    assert not is_prefix_of(parse_prefix("/Bob/my music/", resolver), full)
    p = parse_prefix("/Alice/my music/", resolver)
    assert is_prefix_of(p, p.as_name())


@given(prefixes, prefixes, prefixes)
def test_prefix_partial_order(a, b, c):
    assert is_prefix_of(a, a)
    if is_prefix_of(a, b) and is_prefix_of(b, a):
        assert a == b
    if is_prefix_of(a, b) and is_prefix_of(b, c):
        assert is_prefix_of(a, c)


def test_lpm_example(resolver):
    table = PrefixTrie([(parse_prefix("/Alice/my music/pepper/", resolver), "desktop"),
                        (parse_prefix("/Alice/my music/", resolver), "laptop")])
    assert longest_prefix_match(table, parse_name("/Alice/my music/pepper/abc.mp3", resolver)) == "desktop"
    assert longest_prefix_match(table, parse_name("/Alice/my music/other.mp3", resolver)) == "laptop"
    assert longest_prefix_match(PrefixTrie(), parse_name("/Alice/x", resolver)) is None


@given(st.dictionaries(prefixes, st.integers(), max_size=12), names)
def test_trie_matches_linear_scan(entries, name):
    trie, linear = PrefixTrie(entries.items()), LinearPrefixTable(entries.items())
    got = longest_prefix_match(trie, name)
    assert got == longest_prefix_match(linear, name)
    matching = [p for p in entries if is_prefix_of(p, name)]
    if got is None:
        assert not matching
    else:
        best = max(len(p) for p in matching)
        assert [p for p in matching if len(p) == best and entries[p] == got]


def test_trie_remove():
    t = PrefixTrie()
    t.insert(Prefix(P, ("a",)), 1)
    t.insert(Prefix(P, ("a", "b")), 2)
    assert t.remove(Prefix(P, ("a", "b"))) == 2
    assert len(t) == 1
    assert longest_prefix_match(t, Name(P, ("a", "b", "c"))) == 1


def test_monotonic_clock():
    clock = MonotonicClock()
    a = clock.next(100)
    b = clock.next(100)
    c = clock.next(50)
    assert a < b < c
    clock.observe(1_000)
    assert clock.next(10) > 1_000


def test_digest_size():
    assert DIGEST_SIZE == 32
