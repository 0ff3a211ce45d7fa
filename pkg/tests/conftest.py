from __future__ import annotations

import random
import sys
from pathlib import Path

import pytest
from hypothesis import settings

from pcn.access import abe_keygen, abe_setup
from pcn.access.policy import Attribute
from pcn.identity import KeyPair

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parent.parent


def keypair(tag: str) -> KeyPair:
    return KeyPair.from_seed(tag.encode().ljust(32, b"\0"))


@pytest.fixture
def alice_keys() -> KeyPair:
    return keypair("alice")


@pytest.fixture
def bob_keys() -> KeyPair:
    return keypair("bob")


@pytest.fixture
def alice(alice_keys):
    return alice_keys.principal("Alice")


@pytest.fixture
def bob(bob_keys):
    return bob_keys.principal("Bob")


@pytest.fixture
def resolver(alice, bob):
    return {"Alice": alice, "Bob": bob}


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)


@pytest.fixture
def music(alice):
    """Alice's keyring with the two attributes from her music-sharing example."""
    college = Attribute("college friends", alice)
    team = Attribute("CS219 team", alice)
    keyring = abe_setup(alice, 7, attributes=[college, team])
    return keyring, college, team


@pytest.fixture
def issue(music):
    keyring = music[0]

    def _issue(attrs, holder):
        return abe_keygen(keyring, attrs, holder)
    return _issue


# -- acceptance reporting ------------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, list[str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    number, title = mark.args
    _, states = _CRITERIA.setdefault(number, (title, []))
    if report.when == "setup" and report.passed:
        return
    states.append("PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, states = _CRITERIA[number]
        verdict = "PASS" if states and all(s == "PASS" for s in states) else "FAIL"
        terminalreporter.write_line(f"{verdict} criterion {number}: {title}")
