"""Run summaries: a structured text report and a JSON record with the same content."""

from __future__ import annotations

import enum
import hashlib
import json
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field

from ..naming import Name, Prefix, Principal
from ..sync.vv import VersionVector


def render_name(name: Name | Prefix, labels: Mapping[bytes, str]) -> str:
    label = labels.get(name.principal.public_key_hash, "")
    named = Principal(name.principal.public_key_hash, label)
    if isinstance(name, Name):
        return Name(named, name.components, name.version, name.segment).render()
    return Prefix(named, name.components).render()


def jsonable(value, labels: Mapping[bytes, str]):
    if isinstance(value, (Name, Prefix)):
        return render_name(value, labels)
    if isinstance(value, VersionVector):
        return dict(sorted(value.items()))
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, Mapping):
        return {str(k): jsonable(v, labels) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = [jsonable(v, labels) for v in value]
        return sorted(items, key=str) if isinstance(value, (set, frozenset)) else items
    return value


def trace_hash(trace: list[dict], labels: Mapping[bytes, str]) -> str:
    h = hashlib.sha256()
    for event in trace:
        h.update(json.dumps(jsonable(event, labels), sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


@dataclass
class ReplicaReport:
    version: int
    vv: dict[str, int]
    state: str
    heads: int


@dataclass
class NodeReport:
    online: bool
    fib_entries: int
    fib_bytes: int
    replicas: dict[str, ReplicaReport]
    metrics: dict[str, int]


@dataclass
class Assertion:
    text: str
    passed: bool
    detail: str = ""


@dataclass
class TraceReport:
    seed: int
    quiescent: bool
    time_ms: int
    events: int
    nodes: dict[str, NodeReport] = field(default_factory=dict)
    conflicts: list[dict] = field(default_factory=list)
    network: dict[str, int] = field(default_factory=dict)
    trace_hash: str = ""
    assertions: list[Assertion] = field(default_factory=list)
    estimates: list[dict] = field(default_factory=list)

    @classmethod
    def from_simulator(cls, sim, result, assertions: list[Assertion] | None = None,
                       estimates: list[dict] | None = None) -> TraceReport:
        labels = sim.labels
        nodes = {}
        conflicts = []
        for nid in sorted(sim.nodes):
            dev = sim.nodes[nid]
            replicas = {}
            for name in sorted(dev.replicas, key=lambda n: render_name(n, labels)):
                r = dev.replicas[name]
                key = render_name(name, labels)
                replicas[key] = ReplicaReport(r.current_version, dict(sorted(r.vv.items())), r.state.value,
                                              len(r.heads))
                if len(r.heads) > 1:
                    conflicts.append({"node": nid, "name": key,
                                      "heads": [dict(sorted(h.vv.items())) for h in r.heads]})
            metrics = dict(sorted((dev.router.metrics + dev.stats).items()))
            entries, size = dev.router.fib_size()
            nodes[nid] = NodeReport(nid not in sim.down, entries, size, replicas, metrics)
        return cls(sim.seed, result.quiescent, result.time, result.events, nodes, conflicts,
                   dict(sorted(sim.stats.items())), trace_hash(sim.trace, labels),
                   list(assertions or []), list(estimates or []))

    @property
    def fib_entries(self) -> int:
        return sum(n.fib_entries for n in self.nodes.values())

    @property
    def fib_bytes(self) -> int:
        return sum(n.fib_bytes for n in self.nodes.values())

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = [
            f"seed {self.seed}",
            f"time {self.time_ms} ms, {self.events} events, {'quiescent' if self.quiescent else 'NOT quiescent'}",
            f"fib total {self.fib_entries} entries, {self.fib_bytes} bytes",
        ]
        for nid, node in self.nodes.items():
            state = "up" if node.online else "down"
            lines.append(f"node {nid} [{state}] fib {node.fib_entries} entries {node.fib_bytes} bytes")
            for name, r in node.replicas.items():
                vv = ",".join(f"{k}:{v}" for k, v in r.vv.items())
                lines.append(f"  {name} v{r.version} {{{vv}}} {r.state}")
        for c in self.conflicts:
            lines.append(f"conflict {c['name']} at {c['node']} ({len(c['heads'])} heads)")
        for est in self.estimates:
            lines.append(f"estimate k={est['k']}: {est['people']} people, {est['entries']} entries, "
                         f"{est['bytes']} bytes ({est['bytes'] / 1e6:.2f} MB)")
        for a in self.assertions:
            lines.append(f"{'PASS' if a.passed else 'FAIL'} {a.text}" + (f" ({a.detail})" if a.detail else ""))
        if self.network:
            lines.append("network " + " ".join(f"{k}={v}" for k, v in self.network.items()))
        lines.append(f"trace {self.trace_hash}")
        return "\n".join(lines) + "\n"
