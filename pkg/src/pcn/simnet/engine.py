"""Discrete-event network of PCN devices.

Events run in ``(time, insertion sequence)`` order from a single heap, and
every random draw (keys, nonces, losses, ping offsets) comes from one
seeded generator, so a seed fixes the whole trace.
"""

from __future__ import annotations

import heapq
import random
from collections import Counter
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

from ..access.abe import AbeKeyring, abe_setup
from ..access.policy import Attribute
from ..device import F_PING, F_PONG, Device, DeviceConfig, PeerInfo
from ..errors import TimeLimitExceeded, UnknownNode
from ..identity import DelegationCert, KeyPair, issue_delegation
from ..naming import Prefix, Principal
from .graph import SocialGraph, build_overlay, node_id

SAME_PRINCIPAL_LATENCY_MS = 5
CROSS_PRINCIPAL_LATENCY_MS = 50
QUIET_MS = 60_000
DEFAULT_TIME_LIMIT_MS = 6 * 60 * 60 * 1000


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    kind: str = field(compare=False)
    action: Callable[[], None] = field(compare=False, repr=False)
    maintenance: bool = field(compare=False, default=False)


@dataclass(frozen=True)
class RunResult:
    quiescent: bool
    time: int
    events: int


class Simulator:
    """A network of devices plus the transport they share."""

    def __init__(self, seed: int = 0, *, config: DeviceConfig | None = None,
                 same_latency_ms: int = SAME_PRINCIPAL_LATENCY_MS,
                 cross_latency_ms: int = CROSS_PRINCIPAL_LATENCY_MS,
                 quiet_ms: int = QUIET_MS) -> None:
        self.seed = seed
        self.rng = random.Random(seed)
        self.config = config or DeviceConfig()
        self.same_latency_ms = same_latency_ms
        self.cross_latency_ms = cross_latency_ms
        self.quiet_ms = quiet_ms
        self.graph = SocialGraph()
        self.nodes: dict[str, Device] = {}
        self.keys: dict[str, KeyPair] = {}
        self.keyrings: dict[str, AbeKeyring] = {}
        self.labels: dict[bytes, str] = {}
        self.latency: dict[frozenset[str], int] = {}
        self.down: set[str] = set()
        self.groups: list[frozenset[str]] | None = None
        self.loss_rate = 0.0
        self.time = 0
        self.events = 0
        self.trace: list[dict] = []
        self.stats: Counter[str] = Counter()
        self.overlay: dict[str, list[str]] = {}
        self._queue: list[SimEvent] = []
        self._seq = 0
        self._work = 0
        self._started = False
        self._owner: dict[str, str] = {}

    # -- transport ---------------------------------------------------------------------
    def now(self) -> int:
        return self.time

    def schedule(self, delay_ms: int, callback: Callable[[], None], *, maintenance: bool = False,
                 kind: str = "timer") -> None:
        self.schedule_at(self.time + max(0, int(delay_ms)), callback, maintenance=maintenance, kind=kind)

    def schedule_at(self, time: int, callback: Callable[[], None], *, maintenance: bool = False,
                    kind: str = "action") -> None:
        self._seq += 1
        if not maintenance:
            self._work += 1
        heapq.heappush(self._queue, SimEvent(max(time, self.time), self._seq, kind, callback, maintenance))

    def send(self, src: str, dst: str, frame: bytes) -> None:
        if src in self.down or dst not in self.nodes:
            self.stats["dropped_sender_down"] += 1
            return
        self.stats["sent"] += 1
        if self.loss_rate > 0 and self.rng.random() < self.loss_rate:
            self.stats["dropped_loss"] += 1
            return
        housekeeping = bool(frame) and frame[0] in (F_PING, F_PONG)
        self.schedule(self.link_latency(src, dst), lambda: self._deliver(src, dst, frame),
                      maintenance=housekeeping, kind="deliver")

    def _deliver(self, src: str, dst: str, frame: bytes) -> None:
        if not self.reachable(src, dst):
            self.stats["dropped_unreachable"] += 1
            return
        self.stats["delivered"] += 1
        self.nodes[dst].on_frame(src, frame)

    def link_latency(self, a: str, b: str) -> int:
        custom = self.latency.get(frozenset((a, b)))
        if custom is not None:
            return custom
        same = self._owner[a] == self._owner[b]
        return self.same_latency_ms if same else self.cross_latency_ms

    def reachable(self, a: str, b: str) -> bool:
        if a in self.down or b in self.down:
            return False
        if self.groups is None:
            return True
        return self._group(a) == self._group(b)

    def _group(self, nid: str) -> int:
        for i, g in enumerate(self.groups or ()):
            if nid in g:
                return i
        return -1

    # -- population --------------------------------------------------------------------------
    def _record(self, event: dict) -> None:
        self.trace.append(event)

    def add_principal(self, label: str, devices: Iterable[str]) -> list[Device]:
        if label in self.keys:
            raise ValueError(f"principal {label!r} already exists")
        devices = list(devices)
        if not devices:
            raise ValueError("a principal needs at least one device")
        keys = KeyPair.generate(self.rng)
        principal = keys.principal(label)
        keyring = abe_setup(principal, self.rng.getrandbits(64))
        self.keys[label] = keys
        self.keyrings[label] = keyring
        self.labels[principal.public_key_hash] = label
        self.graph.add_principal(label, devices)
        created = []
        shared = None
        for d in devices:
            nid = node_id(label, d)
            dev = Device(nid, keys, d, self, label=label, keyring=keyring, config=self.config,
                         trace=self._record)
            if shared is None:
                shared = dev.keyrings
            else:
                dev.keyrings = shared
            self.nodes[nid] = dev
            self._owner[nid] = label
            created.append(dev)
        return created

    def principal(self, label: str) -> Principal:
        try:
            return self.keys[label].principal(label)
        except KeyError:
            raise UnknownNode(label) from None

    def devices_of(self, label: str) -> list[Device]:
        self.principal(label)
        return [self.nodes[node_id(label, d)] for d in self.graph.devices[label]]

    def befriend(self, a: str, b: str) -> None:
        self.principal(a), self.principal(b)
        self.graph.befriend(a, b)

    def node(self, nid: str) -> Device:
        try:
            return self.nodes[nid]
        except KeyError:
            raise UnknownNode(nid) from None

    def connect(self, k: int = 1) -> None:
        """Build the overlay and start liveness probing."""
        self.overlay = build_overlay(self.graph, k)
        for nid, peers in self.overlay.items():
            dev = self.nodes[nid]
            for peer in peers:
                other = self.nodes[peer]
                dev.add_peer(PeerInfo(peer, other.principal, other.device))
        if not self._started:
            for nid in sorted(self.nodes):
                self.nodes[nid].start()
            self._started = True

    # -- keys ----------------------------------------------------------------------------------
    def grant(self, owner: str, attrs: Iterable[str], holder: str) -> None:
        """Issue an attribute key from ``owner`` to every device of ``holder``."""
        owner_dev = self.devices_of(owner)[0]
        attributes = [Attribute(a, self.principal(owner)) for a in attrs]
        sk = owner_dev.issue_key(attributes, self.principal(holder))
        pk = owner_dev.public_key()
        for dev in self.devices_of(holder):
            if dev.principal == owner_dev.principal:
                continue
            dev.learn_key(sk, pk)
        self._record({"time": self.time, "kind": "grant", "owner": owner, "holder": holder,
                      "attrs": sorted(attrs)})

    def delegate(self, owner: str, prefix: Prefix, holder: str, lifetime_ms: int) -> DelegationCert:
        cert = issue_delegation(self.keys[owner], prefix, self.principal(holder), self.time + lifetime_ms)
        for dev in self.devices_of(holder):
            dev.add_delegation(cert)
        return cert

    # -- faults --------------------------------------------------------------------------------
    def _check_nodes(self, nids: Iterable[str]) -> None:
        for nid in nids:
            self.node(nid)

    def node_down(self, nid: str, at: int, duration: int | None = None) -> None:
        self._check_nodes([nid])
        self.schedule_at(at, lambda: self._set_down(nid), kind="NodeDown")
        if duration is not None:
            self.node_up(nid, at + duration)

    def node_up(self, nid: str, at: int) -> None:
        self._check_nodes([nid])
        self.schedule_at(at, lambda: self._set_up(nid), kind="NodeUp")

    def _set_down(self, nid: str) -> None:
        if nid in self.down:
            return
        self.down.add(nid)
        self._record({"time": self.time, "kind": "NodeDown", "node": nid})
        self.nodes[nid].go_offline()

    def _set_up(self, nid: str) -> None:
        if nid not in self.down:
            return
        self.down.discard(nid)
        self._record({"time": self.time, "kind": "NodeUp", "node": nid})
        self.nodes[nid].go_online()

    def partition(self, groups: Iterable[Iterable[str]], at: int, duration: int | None = None) -> None:
        frozen = [frozenset(g) for g in groups]
        self._check_nodes(n for g in frozen for n in g)
        listed = set().union(*frozen) if frozen else set()
        rest = frozenset(n for n in self.nodes if n not in listed)
        if rest:
            frozen.append(rest)

        def apply() -> None:
            self.groups = frozen
            self._record({"time": self.time, "kind": "Partition", "groups": [sorted(g) for g in frozen]})

        self.schedule_at(at, apply, kind="Partition")
        if duration is not None:
            self.heal(at + duration)

    def heal(self, at: int) -> None:
        def apply() -> None:
            self.groups = None
            self._record({"time": self.time, "kind": "Heal"})

        self.schedule_at(at, apply, kind="Heal")

    def message_loss(self, rate: float, at: int, duration: int | None = None) -> None:
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"loss rate {rate} outside [0, 1]")

        def apply(r: float) -> None:
            self.loss_rate = r
            self._record({"time": self.time, "kind": "MessageLoss", "rate": r})

        self.schedule_at(at, lambda: apply(rate), kind="MessageLoss")
        if duration is not None:
            self.schedule_at(at + duration, lambda: apply(0.0), kind="MessageLoss")

    def inject_fault(self, kind: str, at: int, duration: int | None = None, **args) -> None:
        if kind == "NodeDown":
            self.node_down(args["node"], at, duration)
        elif kind == "Partition":
            self.partition(args["groups"], at, duration)
        elif kind == "MessageLoss":
            self.message_loss(args["rate"], at, duration)
        else:
            raise ValueError(f"unknown fault kind {kind!r}")

    # -- actions -------------------------------------------------------------------------------
    def at(self, time: int, action: Callable[[], None], label: str = "action") -> None:
        def run() -> None:
            self._record({"time": self.time, "kind": "action", "action": label})
            action()

        self.schedule_at(time, run, kind="UserAction")

    # -- running -------------------------------------------------------------------------------
    def settled(self) -> bool:
        if self._work:
            return False
        for nid, dev in self.nodes.items():
            if nid in self.down:
                continue
            if dev.busy():
                return False
            for peer, up in dev.peer_up.items():
                if up != self.reachable(nid, peer):
                    return False
        return True

    def run(self, *, time_limit_ms: int = DEFAULT_TIME_LIMIT_MS, strict: bool = False) -> RunResult:
        """Process events until quiescence or ``time_limit_ms`` of simulated time."""
        limit = self.time + time_limit_ms
        quiet_since: int | None = None
        quiescent = False
        while True:
            if self.settled():
                if quiet_since is None:
                    quiet_since = self.time
            else:
                quiet_since = None
            if not self._queue:
                quiescent = quiet_since is not None
                break
            nxt = self._queue[0].time
            if quiet_since is not None and nxt >= quiet_since + self.quiet_ms:
                self.time = quiet_since + self.quiet_ms
                quiescent = True
                break
            if nxt > limit:
                self.time = limit
                break
            ev = heapq.heappop(self._queue)
            if not ev.maintenance:
                self._work -= 1
            self.time = ev.time
            self.events += 1
            ev.action()
        if not quiescent and strict:
            raise TimeLimitExceeded(f"no quiescence within {time_limit_ms} ms")
        return RunResult(quiescent, self.time, self.events)
