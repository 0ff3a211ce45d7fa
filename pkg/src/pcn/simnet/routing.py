"""Routing-table sizing: a star of friends announcing fixed-size prefixes, plus a dry-run estimator."""

from __future__ import annotations

from ..naming import Prefix, Principal, canonical_encode
from .graph import SocialGraph, within_hops

HUB = "me"


def padded_prefix(principal: Principal, index: int, entry_bytes: int) -> Prefix:
    """A one-component prefix whose canonical encoding is exactly ``entry_bytes`` long."""
    stem = f"p{index:04d}-"
    base = len(canonical_encode(Prefix(principal, (stem,))))
    if base > entry_bytes:
        raise ValueError(f"entries of {entry_bytes} bytes cannot hold a prefix (minimum {base})")
    return Prefix(principal, (stem + "x" * (entry_bytes - base),))


def friend_label(i: int) -> str:
    return f"f{i:03d}"


def build_routing_table(sim, friends: int, prefixes: int, entry_bytes: int, *, at: int = 1_000) -> str:
    """Populate ``sim`` with a hub and ``friends`` one-hop friends; returns the hub's node id."""
    sim.add_principal(HUB, ["d"])
    for i in range(friends):
        label = friend_label(i)
        sim.add_principal(label, ["d"])
        sim.befriend(HUB, label)

    def announce_all():
        for i in range(friends):
            dev = sim.devices_of(friend_label(i))[0]
            for j in range(prefixes):
                dev.announce_prefix(padded_prefix(dev.principal, j, entry_bytes))

    sim.at(at, announce_all, "routing-table announcements")
    return sim.devices_of(HUB)[0].node_id


def tree_graph(branching: int, depth: int) -> SocialGraph:
    """Social tree with the hub at the root and ``branching`` distinct friends per person."""
    graph = SocialGraph()
    graph.add_principal(HUB)
    frontier = [HUB]
    counter = 0
    for _ in range(depth):
        nxt = []
        for parent in frontier:
            for _ in range(branching):
                counter += 1
                child = f"u{counter}"
                graph.add_principal(child)
                graph.edges.add(frozenset((parent, child)))
                nxt.append(child)
        frontier = nxt
    return graph


def estimate_routing_table(branching: int, k: int, prefixes: int, entry_bytes: int) -> dict:
    """Count FIB entries at the hub without building devices or signing anything."""
    graph = tree_graph(branching, k)
    reach = within_hops(graph.adjacency(), HUB, k)
    people = len(reach) - 1
    entries = people * prefixes
    return {"k": k, "branching": branching, "people": people, "entries": entries,
            "bytes": entries * entry_bytes}
