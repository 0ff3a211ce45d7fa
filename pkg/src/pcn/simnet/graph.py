"""Social graph and the device overlay derived from it."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field


def node_id(principal: str, device: str) -> str:
    return f"{principal}.{device}"


@dataclass
class SocialGraph:
    principals: set[str] = field(default_factory=set)
    edges: set[frozenset[str]] = field(default_factory=set)
    devices: dict[str, list[str]] = field(default_factory=dict)

    def add_principal(self, label: str, devices: list[str] | tuple[str, ...] = ()) -> None:
        self.principals.add(label)
        owned = self.devices.setdefault(label, [])
        for d in devices:
            if d not in owned:
                owned.append(d)

    def add_device(self, principal: str, device: str) -> None:
        self.add_principal(principal, [device])

    def befriend(self, a: str, b: str) -> None:
        if a == b:
            raise ValueError("a principal cannot befriend itself")
        for p in (a, b):
            if p not in self.principals:
                raise KeyError(p)
        self.edges.add(frozenset((a, b)))

    def friends(self, principal: str) -> set[str]:
        return {next(iter(e - {principal})) for e in self.edges if principal in e}

    def adjacency(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {p: set() for p in self.principals}
        for e in self.edges:
            a, b = tuple(e)
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def node_ids(self) -> list[str]:
        return sorted(node_id(p, d) for p in self.principals for d in self.devices.get(p, []))

    def owner_of(self, nid: str) -> str:
        for p in self.principals:
            if any(node_id(p, d) == nid for d in self.devices.get(p, [])):
                return p
        raise KeyError(nid)


def within_hops(adj: dict[str, set[str]], start: str, k: int) -> dict[str, int]:
    """Hop distance to every principal at most ``k`` social hops away."""
    dist = {start: 0}
    queue = deque([start])
    while queue:
        p = queue.popleft()
        if dist[p] == k:
            continue
        for q in sorted(adj.get(p, ())):
            if q not in dist:
                dist[q] = dist[p] + 1
                queue.append(q)
    return dist


def build_overlay(graph: SocialGraph, k: int = 1) -> dict[str, list[str]]:
    """Peer list per device: own devices plus every device of principals within ``k`` hops."""
    if k not in (1, 2):
        raise ValueError(f"hop limit must be 1 or 2, got {k}")
    adj = graph.adjacency()
    overlay: dict[str, list[str]] = {}
    for p in sorted(graph.principals):
        reach = within_hops(adj, p, k)
        members = sorted(node_id(q, d) for q in reach for d in graph.devices.get(q, []))
        for d in graph.devices.get(p, []):
            me = node_id(p, d)
            overlay[me] = [m for m in members if m != me]
    return overlay
