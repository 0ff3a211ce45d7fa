from __future__ import annotations

from collections import deque

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcn.errors import ScenarioParseError, TimeLimitExceeded, UnknownNode
from pcn.simnet.engine import Simulator
from pcn.simnet.graph import SocialGraph, build_overlay, node_id, within_hops
from pcn.simnet.oracles import HappensBefore, coherence_violations, components
from pcn.simnet.report import TraceReport
from pcn.simnet.routing import estimate_routing_table
from pcn.simnet.scenario import parse_scenario, parse_time, run

from conftest import ROOT


def _graph(edges, devices=None) -> SocialGraph:
    g = SocialGraph()
    people = sorted({p for e in edges for p in e} | set(devices or {}))
    for p in people:
        g.add_principal(p, (devices or {}).get(p, ["laptop", "phone"]))
    for a, b in edges:
        g.befriend(a, b)
    return g


def test_overlay_two_friends():
    g = _graph([("Alice", "Bob")])
    peers = build_overlay(g, 1)[node_id("Alice", "laptop")]
    assert set(peers) == {"Alice.phone", "Bob.laptop", "Bob.phone"}


def test_isolated_principal():
    g = _graph([], {"Carol": ["a", "b"]})
    assert build_overlay(g, 1)["Carol.a"] == ["Carol.b"]


def test_two_hop_path():
    g = _graph([("A", "B"), ("B", "C")])
    assert "C.laptop" not in build_overlay(g, 1)["A.laptop"]
    assert "C.laptop" in build_overlay(g, 2)["A.laptop"]
    with pytest.raises(ValueError):
        build_overlay(g, 3)


def _bfs(edges, start):
    adj = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    dist, todo = {start: 0}, deque([start])
    while todo:
        x = todo.popleft()
        for y in sorted(adj.get(x, ())):
            if y not in dist:
                dist[y] = dist[x] + 1
                todo.append(y)
    return dist


people = st.sampled_from("ABCDEFG")
edge_lists = st.lists(st.tuples(people, people).filter(lambda e: e[0] != e[1]), max_size=12)


@given(edge_lists, st.sampled_from([1, 2]))
def test_overlay_matches_bfs(edges, k):
    g = _graph(edges, {p: ["d"] for p in "ABCDEFG"})
    overlay = build_overlay(g, k)
    for p in "ABCDEFG":
        dist = _bfs(edges, p)
        expect = {f"{q}.d" for q, d in dist.items() if 0 < d <= k}
        assert set(overlay[f"{p}.d"]) == expect
        assert {q for q, d in within_hops(g.adjacency(), p, k).items() if d > 0} == \
            {q for q, d in dist.items() if 0 < d <= k}


def test_parse_time():
    assert [parse_time(t) for t in ("5", "5ms", "2s", "3m", "1h", "1d")] == \
        [5, 5, 2000, 180_000, 3_600_000, 86_400_000]


@pytest.mark.parametrize("text, line", [
    ("seed 1\nbogus thing\n", 2),
    ("principal alice laptop\nat 1s fly alice.laptop\n", 2),
    ("at soon publish x /a b\n", 1),
    ("overlay k 3\n", 1),
])
def test_scenario_parse_errors(text, line):
    with pytest.raises(ScenarioParseError) as info:
        parse_scenario(text)
    assert info.value.line_no == line


def test_empty_scenario():
    report = run("")
    assert report.events == 0 and report.nodes == {} and report.quiescent


def test_unknown_node():
    sim = Simulator(1)
    sim.add_principal("alice", ["laptop"])
    with pytest.raises(UnknownNode):
        sim.node_down("alice.tablet", 10)
    with pytest.raises(UnknownNode):
        sim.inject_fault("Partition", 10, groups=[["bob.x"]])
    with pytest.raises(ScenarioParseError) as info:
        run("principal alice laptop\nat 1s down bob.x\n")
    assert info.value.line_no == 2


SCENARIO = """
seed 11
principal alice laptop phone
principal bob laptop
friends alice bob
grant alice family bob
at 1s mkdir alice.laptop /alice/docs read family
at 2s publish alice.laptop /alice/docs/a "one" read family
at 3s replicate alice.phone /alice/docs
at 30s update alice.laptop /alice/docs/a "two"
expect converged /alice/docs/a
expect content alice.phone /alice/docs/a "two"
expect coherent
"""


def test_determinism():
    a, b = run(SCENARIO), run(SCENARIO)
    assert a.to_json() == b.to_json() and a.trace_hash == b.trace_hash
    assert a.passed


def test_total_message_loss():
    text = SCENARIO.replace("at 30s update", "loss 1.0\nat 30s update").replace(
        "loss 1.0", "at 20s loss 1.0") + "limit 20m\nexpect not-quiescent\n"
    report = run(text)
    failed = {a.text for a in report.assertions if not a.passed}
    assert "expect not-quiescent" not in failed
    assert not report.quiescent


def test_strict_time_limit():
    text = "principal a x y\nat 1s loss 1.0\nlimit 1m\n"
    with pytest.raises(TimeLimitExceeded):
        run(text, strict=True)


def test_delivery_faithful():
    sim = Simulator(2)
    sim.add_principal("a", ["x"])
    sim.add_principal("b", ["y"])
    sim.befriend("a", "b")
    sim.connect()
    sim.run()
    assert sim.stats["sent"] == sim.stats["delivered"] > 0


def test_liveness_within_ping_interval():
    sim = Simulator(3)
    x, y = sim.add_principal("a", ["x", "y"])
    sim.connect()
    sim.node_down("a.y", 30_000, 120_000)
    sim.run(time_limit_ms=30_000 + 2 * x.config.ping_interval_ms + 1)
    assert x.peer_up["a.y"] is False
    down_at = next(e["time"] for e in sim.trace if e.get("kind") == "peer_down")
    assert down_at - 30_000 <= 2 * x.config.ping_interval_ms
    sim.run()
    assert x.peer_up["a.y"] is True


def test_routing_estimates():
    k1 = estimate_routing_table(100, 1, 60, 100)
    assert (k1["people"], k1["entries"], k1["bytes"]) == (100, 6_000, 600_000)
    k2 = estimate_routing_table(100, 2, 60, 100)
    assert k2["people"] == 100 + 100 * 100


def test_shipped_scenarios_pass():
    for path in sorted((ROOT / "scenarios").glob("*.pcn")):
        if path.stem == "routing_table":
            continue
        report = run(path.read_text())
        assert report.passed, (path.name, [a for a in report.assertions if not a.passed])


def test_report_formats():
    report = run(SCENARIO)
    text = report.to_text()
    assert "PASS expect converged /alice/docs/a" in text
    assert text.rstrip().endswith(report.trace_hash)
    data = report.to_dict()
    assert set(data["nodes"]) == {"alice.laptop", "alice.phone", "bob.laptop"}
    assert data["nodes"]["alice.phone"]["replicas"]["/alice/docs/a"]["state"] == "Clean"
    assert isinstance(report, TraceReport)


# -- oracles -----------------------------------------------------------------------------------

def test_happens_before():
    hb = HappensBefore(["a", "b"])
    u1 = hb.update("a", "f")
    hb.spread([["a", "b"]])
    u2 = hb.update("b", "f")
    assert hb.happened_before(u1, u2) and not hb.expect_conflicted("f")
    u3 = hb.update("a", "f")
    assert hb.concurrent_pairs("f") == [(u2, u3)] and hb.expect_conflicted("f")
    hb.spread([["a", "b"]])
    hb.update("b", "f")
    assert not hb.expect_conflicted("f")


def test_components():
    adj = {"a": ["b"], "b": ["a", "c"], "c": ["b"]}
    assert components("abc", adj, lambda x, y: True) == [["a", "b", "c"]]
    assert components("abc", adj, lambda x, y: {x, y} != {"b", "c"}) == [["a", "b"], ["c"]]


def test_coherence_checker_flags_stale_serve():
    from pcn.naming import Name, Principal
    from pcn.sync.vv import VersionVector
    p = Principal(bytes(32))
    old, new = Name(p, ("f",), 1), Name(p, ("f",), 2)
    trace = [{"kind": "modification", "node": "n", "name": new, "vv": VersionVector({"d": 2})},
             {"kind": "serve", "node": "n", "name": old, "vv": VersionVector({"d": 1})},
             {"kind": "serve", "node": "m", "name": old, "vv": VersionVector({"d": 1})},
             {"kind": "serve", "node": "n", "name": new, "vv": VersionVector({"d": 2})}]
    assert coherence_violations(trace) == [trace[1]]
