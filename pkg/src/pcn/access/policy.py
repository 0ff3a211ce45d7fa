"""Attributes and threshold policy trees.

Text syntax (used by the CLI and scenario files)::

    expr    := term ("or" term)*
    term    := factor ("and" factor)*
    factor  := ATTR | "(" expr ")" | K "-of" "(" expr ("," expr)* ")"
    ATTR    := '"' chars '"' | bare-word

``and``/``or`` are case-insensitive keywords; ``and`` binds tighter.  Bare
words are letters, digits and ``_ . @ : + -``.  Inside quotes, ``\\"`` and
``\\\\`` escape.  ``a and b and c`` flattens to one 3-of-3 node.
"""

from __future__ import annotations

import re
import unicodedata
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from typing import Union

from ..errors import DecodeError, MalformedPolicy, PolicySyntaxError
from ..naming import DIGEST_SIZE, Principal
from ..wire import Reader, Writer

MAX_POLICY_DEPTH = 32
_LEAF, _THRESHOLD = 0x01, 0x02


@dataclass(frozen=True)
class Attribute:
    name: str
    authority: Principal

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise MalformedPolicy("attribute name must be a non-empty string")
        object.__setattr__(self, "name", unicodedata.normalize("NFC", self.name))

    def write(self, w: Writer) -> None:
        w.raw(self.authority.public_key_hash).text16(self.name)

    @classmethod
    def read(cls, r: Reader) -> Attribute:
        authority = Principal(r.raw(DIGEST_SIZE))
        return cls(r.text16(), authority)

    def __repr__(self) -> str:
        return f"Attribute({self.name!r})"


@dataclass(frozen=True)
class Leaf:
    attribute: Attribute


@dataclass(frozen=True)
class Threshold:
    k: int
    children: tuple[PolicyTree, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise MalformedPolicy("threshold node needs at least one child")
        if not 1 <= self.k <= len(self.children):
            raise MalformedPolicy(f"threshold {self.k} outside 1..{len(self.children)}")


PolicyTree = Union[Leaf, Threshold]


def AND(*children: PolicyTree | Attribute) -> Threshold:
    kids = tuple(_as_tree(c) for c in children)
    return Threshold(len(kids), kids)


def OR(*children: PolicyTree | Attribute) -> Threshold:
    return Threshold(1, tuple(_as_tree(c) for c in children))


def k_of(k: int, *children: PolicyTree | Attribute) -> Threshold:
    return Threshold(k, tuple(_as_tree(c) for c in children))


def _as_tree(node: PolicyTree | Attribute) -> PolicyTree:
    return Leaf(node) if isinstance(node, Attribute) else node


def validate(policy: PolicyTree, _depth: int = 0) -> None:
    if _depth > MAX_POLICY_DEPTH:
        raise MalformedPolicy("policy nested too deeply")
    if isinstance(policy, Leaf):
        if not isinstance(policy.attribute, Attribute):
            raise MalformedPolicy("leaf must hold an Attribute")
        return
    if not isinstance(policy, Threshold):
        raise MalformedPolicy(f"not a policy node: {policy!r}")
    for child in policy.children:
        validate(child, _depth + 1)


def policy_satisfied(policy: PolicyTree, attrs: Iterable[Attribute]) -> bool:
    held = attrs if isinstance(attrs, (set, frozenset)) else frozenset(attrs)
    return _satisfied(policy, held)


def _satisfied(policy: PolicyTree, held) -> bool:
    if isinstance(policy, Leaf):
        return policy.attribute in held
    count = 0
    for child in policy.children:
        if _satisfied(child, held):
            count += 1
            if count >= policy.k:
                return True
    return False


def leaves(policy: PolicyTree) -> Iterator[Attribute]:
    """Leaf attributes in depth-first order (duplicates kept)."""
    if isinstance(policy, Leaf):
        yield policy.attribute
    else:
        for child in policy.children:
            yield from leaves(child)


def attributes_of(policy: PolicyTree) -> frozenset[Attribute]:
    return frozenset(leaves(policy))


def depth(policy: PolicyTree) -> int:
    if isinstance(policy, Leaf):
        return 0
    return 1 + max(depth(c) for c in policy.children)


# -- binary form ----------------------------------------------------------------

def write_policy(w: Writer, policy: PolicyTree) -> None:
    if isinstance(policy, Leaf):
        w.u8(_LEAF)
        policy.attribute.write(w)
    else:
        w.u8(_THRESHOLD).u16(policy.k).u16(len(policy.children))
        for child in policy.children:
            write_policy(w, child)


def read_policy(r: Reader, _depth: int = 0) -> PolicyTree:
    if _depth > MAX_POLICY_DEPTH:
        raise DecodeError("policy nested too deeply")
    tag = r.u8()
    if tag == _LEAF:
        try:
            return Leaf(Attribute.read(r))
        except MalformedPolicy as exc:
            raise DecodeError(str(exc)) from exc
    if tag == _THRESHOLD:
        k, n = r.u16(), r.u16()
        children = tuple(read_policy(r, _depth + 1) for _ in range(n))
        try:
            return Threshold(k, children)
        except MalformedPolicy as exc:
            raise DecodeError(str(exc)) from exc
    raise DecodeError(f"unknown policy node tag {tag:#x}")


def encode_policy(policy: PolicyTree) -> bytes:
    w = Writer()
    write_policy(w, policy)
    return w.getvalue()


def decode_policy(data: bytes) -> PolicyTree:
    r = Reader(data)
    policy = read_policy(r)
    r.expect_end()
    return policy


# -- text form -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<kof>\d+)\s*-\s*of\b
      | (?P<lp>\()
      | (?P<rp>\))
      | (?P<comma>,)
      | "(?P<quoted>(?:[^"\\]|\\.)*)"
      | (?P<word>[A-Za-z0-9_.@:+\-]+)
    )""",
    re.VERBOSE,
)


class _Parser:
    def __init__(self, text: str, authority: Principal) -> None:
        self.text = text
        self.authority = authority
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN_RE.match(text, pos)
            if not m:
                raise PolicySyntaxError("unexpected character", text, pos)
            kind = m.lastgroup
            value = m.group(kind)
            start = m.start(kind)
            if kind == "word" and value.lower() in ("and", "or"):
                kind = value.lower()
            if kind == "quoted":
                value = re.sub(r"\\(.)", r"\1", value)
                start -= 1
            self.tokens.append((kind, value, start))
            pos = m.end()
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("end", "", len(self.text))

    def take(self, kind: str) -> tuple[str, str, int]:
        tok = self.peek()
        if tok[0] != kind:
            want = {"rp": "')'", "lp": "'('", "end": "end of policy"}.get(kind, kind)
            raise PolicySyntaxError(f"expected {want}", self.text, tok[2])
        self.i += 1
        return tok

    def expr(self) -> PolicyTree:
        terms = [self.term()]
        while self.peek()[0] == "or":
            self.i += 1
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else Threshold(1, tuple(terms))

    def term(self) -> PolicyTree:
        factors = [self.factor()]
        while self.peek()[0] == "and":
            self.i += 1
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else Threshold(len(factors), tuple(factors))

    def factor(self) -> PolicyTree:
        kind, value, pos = self.peek()
        if kind in ("word", "quoted"):
            self.i += 1
            if kind == "quoted" and value == "":
                raise PolicySyntaxError("empty attribute name", self.text, pos)
            return Leaf(Attribute(value, self.authority))
        if kind == "lp":
            self.i += 1
            node = self.expr()
            self.take("rp")
            return node
        if kind == "kof":
            self.i += 1
            self.take("lp")
            children = [self.expr()]
            while self.peek()[0] == "comma":
                self.i += 1
                children.append(self.expr())
            self.take("rp")
            k = int(value)
            if not 1 <= k <= len(children):
                raise PolicySyntaxError(f"threshold {k} outside 1..{len(children)}", self.text, pos)
            return Threshold(k, tuple(children))
        raise PolicySyntaxError("expected attribute, '(' or k-of", self.text, pos)


def parse_policy(text: str, authority: Principal) -> PolicyTree:
    parser = _Parser(text, authority)
    node = parser.expr()
    parser.take("end")
    return node


_BARE_RE = re.compile(r"[A-Za-z0-9_.@:+\-]+")


def render_policy(policy: PolicyTree) -> str:
    """Text form that :func:`parse_policy` maps back to the same tree."""
    if isinstance(policy, Leaf):
        name = policy.attribute.name
        if _BARE_RE.fullmatch(name) and name.lower() not in ("and", "or") and not re.match(r"\d+\s*-\s*of", name):
            return name
        return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'
    n = len(policy.children)
    inner = [render_policy(c) for c in policy.children]
    if n >= 2 and policy.k == n:
        return "(" + " and ".join(inner) + ")"
    if n >= 2 and policy.k == 1:
        return "(" + " or ".join(inner) + ")"
    return f"{policy.k}-of(" + ", ".join(inner) + ")"
