"""Checkers that judge a run without trusting the protocol's own bookkeeping.

:class:`HappensBefore` tracks causality from the schedule alone (who
updated what, and who could talk to whom between updates), never looking at
version vectors.  :func:`coherence_violations` scans a trace for a content
store serving a version that a processed Modification had already
superseded.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from ..sync.vv import dominated


@dataclass
class HappensBefore:
    """Schedule oracle.  Knowledge spreads to the whole connected component after each step."""

    nodes: Iterable[str]
    knowledge: dict[str, dict[str, set[int]]] = field(init=False)
    preds: dict[int, frozenset[int]] = field(init=False, default_factory=dict)
    file_of: dict[int, str] = field(init=False, default_factory=dict)
    author: dict[int, str] = field(init=False, default_factory=dict)

    def __post_init__(self) -> None:
        self.nodes = tuple(self.nodes)
        self.knowledge = {n: {} for n in self.nodes}

    def update(self, node: str, file: str) -> int:
        known = self.knowledge[node].setdefault(file, set())
        uid = len(self.preds)
        self.preds[uid] = frozenset(known)
        self.file_of[uid] = file
        self.author[uid] = node
        known.add(uid)
        return uid

    def spread(self, components: Iterable[Iterable[str]]) -> None:
        for comp in components:
            comp = list(comp)
            merged: dict[str, set[int]] = {}
            for n in comp:
                for f, ids in self.knowledge[n].items():
                    merged.setdefault(f, set()).update(ids)
            for n in comp:
                self.knowledge[n] = {f: set(ids) for f, ids in merged.items()}

    def happened_before(self, a: int, b: int) -> bool:
        return a in self.preds[b]

    def updates(self, file: str) -> list[int]:
        return [u for u, f in self.file_of.items() if f == file]

    def maximal(self, file: str, among: Iterable[int] | None = None) -> set[int]:
        ids = set(self.updates(file) if among is None else among)
        return {u for u in ids if not any(u in self.preds[v] for v in ids if v != u)}

    def concurrent_pairs(self, file: str) -> list[tuple[int, int]]:
        ids = sorted(self.updates(file))
        return [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]
                if not self.happened_before(a, b) and not self.happened_before(b, a)]

    def expect_conflicted(self, file: str) -> bool:
        return len(self.maximal(file)) >= 2


def components(nodes: Iterable[str], adjacency: Mapping[str, Iterable[str]],
               reachable) -> list[list[str]]:
    """Connected components of the overlay restricted to links ``reachable`` allows."""
    nodes = sorted(nodes)
    seen: set[str] = set()
    out = []
    for start in nodes:
        if start in seen:
            continue
        comp, stack = [], [start]
        seen.add(start)
        while stack:
            n = stack.pop()
            comp.append(n)
            for m in adjacency.get(n, ()):
                if m not in seen and reachable(n, m):
                    seen.add(m)
                    stack.append(m)
        out.append(sorted(comp))
    return out


def coherence_violations(trace: Iterable[Mapping]) -> list[dict]:
    """Serves of a packet older than a Modification the same node had already processed."""
    marks: dict[tuple[str, object], list[tuple[Mapping, int | None]]] = {}
    bad = []
    for ev in trace:
        kind = ev.get("kind")
        if kind == "modification":
            name = ev["name"]
            marks.setdefault((ev["node"], name.unversioned()), []).append((ev["vv"], name.version))
        elif kind == "serve":
            name = ev["name"]
            vv = ev.get("vv")
            for mark_vv, mark_version in marks.get((ev["node"], name.unversioned()), ()):
                if vv is not None and mark_vv is not None:
                    older = dominated(vv, mark_vv)
                else:
                    older = name.version is not None and mark_version is not None and name.version < mark_version
                if older:
                    bad.append(dict(ev))
                    break
    return bad
