"""Line-oriented scenario files and the runner that turns one into a :class:`TraceReport`.

See ``docs/scenarios.md`` for the grammar.  Parsing checks syntax and
that every principal and node mentioned has been declared; it does not
touch the simulator, so a bad file fails before any keys are generated.
"""

from __future__ import annotations

import re
import shlex
from collections.abc import Callable
from dataclasses import dataclass, field

from ..access.policy import parse_policy
from ..device import DeviceConfig, owner_only_policy
from ..errors import MalformedName, MalformedPolicy, PCNError, ScenarioParseError, UnknownPrincipal
from ..naming import Name, Prefix, Principal, parse_name, parse_prefix
from ..replica_mgmt import CommandOp
from ..router.engine import RouterConfig
from ..sync.replica import ReplicaState
from ..sync.vv import Order, vv_compare
from .engine import DEFAULT_TIME_LIMIT_MS, Simulator
from .graph import node_id
from .oracles import coherence_violations
from .report import Assertion, TraceReport
from .routing import HUB, build_routing_table, estimate_routing_table, friend_label

_TIME_RE = re.compile(r"(\d+)(ms|s|m|h|d)?")
_UNITS = {None: 1, "ms": 1, "s": 1000, "m": 60_000, "h": 3_600_000, "d": 86_400_000}

ACTIONS = {"publish", "mkdir", "update", "unlink", "replicate", "unreplicate", "command", "announce",
           "rekey", "revoke", "down", "up", "partition", "heal", "loss", "rejoin"}
EXPECTS = {"quiescent", "not-quiescent", "converged", "conflicted", "state", "content", "fib",
           "fib-total", "coherent"}


def parse_time(text: str) -> int:
    m = _TIME_RE.fullmatch(text)
    if not m:
        raise ValueError(f"bad time {text!r}")
    return int(m.group(1)) * _UNITS[m.group(2)]


@dataclass
class Statement:
    line_no: int
    line: str
    words: list[str]


@dataclass
class Scenario:
    seed: int = 0
    k: int = 1
    time_limit_ms: int = DEFAULT_TIME_LIMIT_MS
    quiet_ms: int | None = None
    ping_ms: int | None = None
    deltas: bool = False
    latency: dict[str, int] = field(default_factory=dict)
    links: list[tuple[str, str, int]] = field(default_factory=list)
    principals: dict[str, list[str]] = field(default_factory=dict)
    friendships: list[tuple[str, str]] = field(default_factory=list)
    setup: list[Statement] = field(default_factory=list)
    actions: list[tuple[int, Statement]] = field(default_factory=list)
    expects: list[Statement] = field(default_factory=list)
    routing_table: tuple[int, int, int] | None = None
    estimates: list[tuple[int, int, int, int]] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.principals and self.routing_table is None

    def principal_labels(self) -> set[str]:
        labels = set(self.principals)
        if self.routing_table is not None:
            labels.add(HUB)
            labels |= {friend_label(i) for i in range(self.routing_table[0])}
        return labels

    def node_ids(self) -> set[str]:
        ids = {node_id(p, d) for p, devs in self.principals.items() for d in devs}
        if self.routing_table is not None:
            ids.add(node_id(HUB, "d"))
            ids |= {node_id(friend_label(i), "d") for i in range(self.routing_table[0])}
        return ids


def _options(words: list[str], allowed: set[str]) -> dict[str, str]:
    if len(words) % 2:
        raise ValueError(f"expected key/value pairs, got {' '.join(words)!r}")
    opts = dict(zip(words[::2], words[1::2]))
    unknown = set(opts) - allowed
    if unknown:
        raise ValueError(f"unknown option {sorted(unknown)[0]!r}")
    return opts


def _int_options(words: list[str], required: set[str], optional: set[str] = frozenset()) -> dict[str, int]:
    opts = _options(words, required | set(optional))
    missing = required - set(opts)
    if missing:
        raise ValueError(f"missing {sorted(missing)[0]!r}")
    return {k: int(v) for k, v in opts.items()}


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            words = shlex.split(line, comments=True)
        except ValueError as exc:
            raise ScenarioParseError(str(exc), no, line) from None
        if not words:
            continue
        st = Statement(no, line, words)
        try:
            _parse_statement(sc, st)
        except ScenarioParseError:
            raise
        except (ValueError, KeyError, IndexError, PCNError) as exc:
            msg = exc.args[0] if exc.args else type(exc).__name__
            raise ScenarioParseError(str(msg), no, line) from None
    return sc


def _parse_statement(sc: Scenario, st: Statement) -> None:
    head, rest = st.words[0], st.words[1:]
    if head == "seed":
        (sc.seed,) = map(int, rest)
    elif head == "overlay":
        if rest[:1] != ["k"] or len(rest) != 2:
            raise ValueError("expected 'overlay k <1|2>'")
        sc.k = int(rest[1])
        if sc.k not in (1, 2):
            raise ValueError("hop limit must be 1 or 2")
    elif head == "limit":
        (t,) = rest
        sc.time_limit_ms = parse_time(t)
    elif head == "quiet":
        (t,) = rest
        sc.quiet_ms = parse_time(t)
    elif head == "ping":
        (t,) = rest
        sc.ping_ms = parse_time(t)
    elif head == "deltas":
        (v,) = rest
        if v not in ("on", "off"):
            raise ValueError("expected 'deltas on' or 'deltas off'")
        sc.deltas = v == "on"
    elif head == "latency":
        if len(rest) == 2 and rest[0] in ("same", "cross"):
            sc.latency[rest[0]] = parse_time(rest[1])
        elif len(rest) == 3:
            sc.links.append((rest[0], rest[1], parse_time(rest[2])))
            _check_nodes(sc, rest[:2])
        else:
            raise ValueError("expected 'latency same|cross <ms>' or 'latency <node> <node> <ms>'")
    elif head == "principal":
        if len(rest) < 2:
            raise ValueError("expected 'principal <label> <device>...'")
        label, devices = rest[0], rest[1:]
        if label in sc.principal_labels():
            raise ValueError(f"principal {label!r} declared twice")
        if not re.fullmatch(r"[A-Za-z][\w-]*", label) or any(not re.fullmatch(r"[\w-]+", d) for d in devices):
            raise ValueError("labels and device names are letters, digits, '_' and '-'")
        sc.principals[label] = devices
    elif head == "friends":
        a, b = rest
        _check_principals(sc, [a, b])
        sc.friendships.append((a, b))
    elif head in ("grant", "delegate"):
        _parse_setup(sc, st)
        sc.setup.append(st)
    elif head == "routing-table":
        opts = _int_options(rest, {"friends", "prefixes", "bytes"})
        sc.routing_table = (opts["friends"], opts["prefixes"], opts["bytes"])
    elif head == "estimate":
        opts = _int_options(rest, {"k", "branching", "prefixes", "bytes"})
        sc.estimates.append((opts["k"], opts["branching"], opts["prefixes"], opts["bytes"]))
    elif head == "at":
        if len(rest) < 2:
            raise ValueError("expected 'at <time> <action> ...'")
        t = parse_time(rest[0])
        action = Statement(st.line_no, st.line, rest[1:])
        _parse_action(sc, action)
        sc.actions.append((t, action))
    elif head == "expect":
        if not rest or rest[0] not in EXPECTS:
            raise ValueError(f"unknown expectation {rest[0] if rest else ''!r}")
        _parse_expect(sc, Statement(st.line_no, st.line, rest))
        sc.expects.append(Statement(st.line_no, st.line, rest))
    else:
        raise ValueError(f"unknown statement {head!r}")


def _check_principals(sc: Scenario, labels) -> None:
    for label in labels:
        if label not in sc.principal_labels():
            raise ValueError(f"unknown principal {label!r}")


def _check_nodes(sc: Scenario, nids) -> None:
    known = sc.node_ids()
    for nid in nids:
        if nid not in known:
            raise ValueError(f"unknown node {nid!r}")


def _resolver(sc: Scenario) -> dict[str, Principal]:
    # placeholder digests: parsing only needs the labels to resolve
    return {label: Principal(bytes(32), label) for label in sc.principal_labels()}


def _check_name(sc: Scenario, text: str, prefix: bool = False) -> None:
    try:
        (parse_prefix if prefix else parse_name)(text, _resolver(sc))
    except UnknownPrincipal as exc:
        raise ValueError(f"unknown principal {exc.args[0]!r}") from None
    except MalformedName as exc:
        raise ValueError(str(exc)) from None


def _check_policy(text: str) -> None:
    try:
        parse_policy(text, Principal(bytes(32)))
    except MalformedPolicy as exc:
        raise ValueError(str(exc).splitlines()[0]) from None


def _parse_setup(sc: Scenario, st: Statement) -> None:
    head, rest = st.words[0], st.words[1:]
    if head == "grant":
        owner, attrs, holder = rest
        _check_principals(sc, [owner, holder])
        if not all(attrs.split(",")):
            raise ValueError("empty attribute in grant")
    else:
        if len(rest) not in (3, 5):
            raise ValueError("expected 'delegate <owner> <prefix> <holder> [for <time>]'")
        owner, prefix, holder = rest[:3]
        _check_principals(sc, [owner, holder])
        _check_name(sc, prefix, prefix=True)
        if len(rest) == 5:
            if rest[3] != "for":
                raise ValueError("expected 'for <time>'")
            parse_time(rest[4])


def _split_duration(words: list[str]) -> tuple[list[str], int | None]:
    if len(words) >= 2 and words[-2] == "for":
        return words[:-2], parse_time(words[-1])
    return words, None


def _parse_action(sc: Scenario, st: Statement) -> None:
    kind, rest = st.words[0], st.words[1:]
    if kind not in ACTIONS:
        raise ValueError(f"unknown action {kind!r}")
    if kind in ("heal",):
        if rest:
            raise ValueError("'heal' takes no arguments")
        return
    if kind == "loss":
        words, _ = _split_duration(rest)
        (rate,) = words
        if not 0.0 <= float(rate) <= 1.0:
            raise ValueError("loss rate must be in [0, 1]")
        return
    if kind == "partition":
        words, _ = _split_duration(rest)
        groups = " ".join(words).split("|")
        if len(groups) < 2:
            raise ValueError("a partition needs at least two groups separated by '|'")
        for g in groups:
            members = [m for m in g.replace(",", " ").split() if m]
            if not members:
                raise ValueError("empty partition group")
            _check_nodes(sc, members)
        return
    if not rest:
        raise ValueError(f"'{kind}' needs a node")
    _check_nodes(sc, rest[:1])
    args = rest[1:]
    if kind in ("down",):
        words, _ = _split_duration(rest)
        if len(words) != 1:
            raise ValueError("expected 'down <node> [for <time>]'")
    elif kind in ("up", "rekey", "revoke", "rejoin"):
        if args:
            raise ValueError(f"'{kind}' takes only a node")
    elif kind in ("publish", "mkdir"):
        n_fixed = 2 if kind == "publish" else 1
        if len(args) < n_fixed:
            raise ValueError(f"'{kind}' is missing arguments")
        _check_name(sc, args[0], prefix=kind == "mkdir")
        opts = _options(args[n_fixed:], {"read", "write"})
        for text in opts.values():
            _check_policy(text)
    elif kind == "update":
        if len(args) != 2:
            raise ValueError("expected 'update <node> <name> <text>'")
        _check_name(sc, args[0])
    elif kind == "unlink":
        (name,) = args
        _check_name(sc, name)
    elif kind in ("replicate", "unreplicate", "announce"):
        (prefix,) = args
        _check_name(sc, prefix, prefix=True)
    elif kind == "command":
        if len(args) < 2:
            raise ValueError("expected 'command <node> <device> <op> [<prefix>]'")
        device, op = args[0], args[1]
        if op not in ("replicate", "unreplicate", "rekey"):
            raise ValueError(f"unknown command op {op!r}")
        if op == "rekey":
            if len(args) != 2:
                raise ValueError("'rekey' takes no target")
        else:
            if len(args) != 3:
                raise ValueError(f"'{op}' needs a target prefix")
            _check_name(sc, args[2], prefix=True)
        if not re.fullmatch(r"[\w-]+", device):
            raise ValueError(f"bad device name {device!r}")


def _parse_expect(sc: Scenario, st: Statement) -> None:
    kind, rest = st.words[0], st.words[1:]
    if kind in ("quiescent", "not-quiescent", "coherent"):
        if rest:
            raise ValueError(f"'{kind}' takes no arguments")
    elif kind in ("converged", "conflicted"):
        (name,) = rest
        _check_name(sc, name)
    elif kind == "state":
        nid, name, state = rest
        _check_nodes(sc, [nid])
        _check_name(sc, name)
        ReplicaState(state)
    elif kind == "content":
        nid, name, _ = rest
        _check_nodes(sc, [nid])
        _check_name(sc, name)
    elif kind == "fib":
        nid, *opts = rest
        _check_nodes(sc, [nid])
        _int_options(opts, {"entries"}, {"bytes"})
    elif kind == "fib-total":
        _int_options(rest, {"entries"}, {"bytes"})


# -- running -------------------------------------------------------------------------

class _Runner:
    def __init__(self, sc: Scenario, seed: int) -> None:
        self.sc = sc
        router = RouterConfig()
        config = DeviceConfig(router=router, use_deltas=sc.deltas)
        if sc.ping_ms is not None:
            config.ping_interval_ms = sc.ping_ms
        kw = {}
        if sc.quiet_ms is not None:
            kw["quiet_ms"] = sc.quiet_ms
        if "same" in sc.latency:
            kw["same_latency_ms"] = sc.latency["same"]
        if "cross" in sc.latency:
            kw["cross_latency_ms"] = sc.latency["cross"]
        self.sim = Simulator(seed, config=config, **kw)

    @property
    def resolver(self) -> dict[str, Principal]:
        return {label: self.sim.principal(label) for label in self.sim.keys}

    def name(self, text: str) -> Name:
        return parse_name(text, self.resolver)

    def prefix(self, text: str) -> Prefix:
        return parse_prefix(text, self.resolver)

    def build(self) -> None:
        sim, sc = self.sim, self.sc
        if sc.routing_table is not None:
            build_routing_table(sim, *sc.routing_table)
        for label, devices in sc.principals.items():
            sim.add_principal(label, devices)
        for a, b in sc.friendships:
            sim.befriend(a, b)
        for a, b, ms in sc.links:
            sim.latency[frozenset((a, b))] = ms
        if sim.nodes:
            sim.connect(sc.k)
        for st in sc.setup:
            head, rest = st.words[0], st.words[1:]
            if head == "grant":
                sim.grant(rest[0], rest[1].split(","), rest[2])
            else:
                lifetime = parse_time(rest[4]) if len(rest) == 5 else 365 * 86_400_000
                sim.delegate(rest[0], self.prefix(rest[1]), rest[2], lifetime)
        for t, st in sc.actions:
            self.schedule(t, st)

    def schedule(self, t: int, st: Statement) -> None:
        sim = self.sim
        kind, rest = st.words[0], st.words[1:]
        if kind == "down":
            words, duration = _split_duration(rest)
            sim.node_down(words[0], t, duration)
        elif kind == "up":
            sim.node_up(rest[0], t)
        elif kind == "partition":
            words, duration = _split_duration(rest)
            groups = [[m for m in g.replace(",", " ").split() if m] for g in " ".join(words).split("|")]
            sim.partition(groups, t, duration)
        elif kind == "heal":
            sim.heal(t)
        elif kind == "loss":
            words, duration = _split_duration(rest)
            sim.message_loss(float(words[0]), t, duration)
        else:
            sim.at(t, self._guarded(st, self._action(st)), " ".join(st.words))

    def _guarded(self, st: Statement, fn: Callable[[], None]) -> Callable[[], None]:
        def run() -> None:
            try:
                fn()
            except PCNError as exc:
                self.sim.trace.append({"time": self.sim.time, "kind": "action_failed", "line": st.line_no,
                                       "error": type(exc).__name__})
        return run

    def _action(self, st: Statement) -> Callable[[], None]:
        kind, nid, args = st.words[0], st.words[1], st.words[2:]
        dev = self.sim.node(nid)
        if kind == "publish":
            name = self.name(args[0])
            content = args[1].encode()
            opts = _options(args[2:], {"read", "write"})
            return lambda: dev.publish(name, content, *self._policies(name.principal, opts))
        if kind == "mkdir":
            prefix = self.prefix(args[0])
            opts = _options(args[1:], {"read", "write"})
            return lambda: dev.mkdir(prefix, *self._policies(prefix.principal, opts))
        if kind == "update":
            name = self.name(args[0])
            return lambda: dev.update(name, args[1].encode())
        if kind == "unlink":
            name = self.name(args[0])
            return lambda: dev.unlink(name)
        if kind == "replicate":
            prefix = self.prefix(args[0])
            return lambda: dev.replicate(prefix)
        if kind == "unreplicate":
            prefix = self.prefix(args[0])
            return lambda: dev.unreplicate(prefix)
        if kind == "announce":
            prefix = self.prefix(args[0])
            return lambda: dev.announce_prefix(prefix)
        if kind == "command":
            op = {"replicate": CommandOp.REPLICATE, "unreplicate": CommandOp.UNREPLICATE,
                  "rekey": CommandOp.REKEY}[args[1]]
            target = self.prefix(args[2]) if len(args) > 2 else Prefix(dev.principal, ())
            return lambda: dev.issue_command(args[0], op, target)
        if kind == "rekey":
            return dev.rekey
        if kind == "revoke":
            return dev.revoke_identity
        if kind == "rejoin":
            return lambda: dev.rejoin()
        raise AssertionError(kind)

    @staticmethod
    def _policies(owner: Principal, opts: dict[str, str]):
        read = parse_policy(opts["read"], owner) if "read" in opts else owner_only_policy(owner)
        write = parse_policy(opts["write"], owner) if "write" in opts else None
        return read, write

    # -- expectations ----------------------------------------------------------------------
    def holders(self, name: Name):
        return [(nid, dev.replicas[name]) for nid, dev in sorted(self.sim.nodes.items())
                if name in dev.replicas and nid not in self.sim.down]

    def check(self, st: Statement, result) -> Assertion:
        text = "expect " + " ".join(st.words)
        kind, rest = st.words[0], st.words[1:]
        sim = self.sim
        if kind == "quiescent":
            return Assertion(text, result.quiescent)
        if kind == "not-quiescent":
            return Assertion(text, not result.quiescent)
        if kind == "coherent":
            bad = coherence_violations(sim.trace)
            return Assertion(text, not bad, f"{len(bad)} stale serves" if bad else "")
        if kind in ("converged", "conflicted"):
            name = self.name(rest[0])
            holders = self.holders(name)
            if not holders:
                return Assertion(text, False, "no replicas")
            vvs = [r.vv for _, r in holders]
            equal = all(vv_compare(vvs[0], v) is Order.EQUAL for v in vvs)
            if kind == "converged":
                ok = equal and all(len(r.heads) == 1 for _, r in holders)
            else:
                ok = equal and all(len(r.heads) > 1 for _, r in holders)
            return Assertion(text, ok, f"{len(holders)} replicas")
        if kind == "state":
            dev = sim.node(rest[0])
            replica = dev.replicas.get(self.name(rest[1]))
            got = replica.state.value if replica else "missing"
            return Assertion(text, got == rest[2], f"got {got}")
        if kind == "content":
            dev = sim.node(rest[0])
            try:
                got = dev.read(self.name(rest[1]))
            except (KeyError, PCNError) as exc:
                return Assertion(text, False, type(exc).__name__)
            return Assertion(text, got == rest[2].encode(), f"got {got!r}")
        if kind == "fib":
            opts = _int_options(rest[1:], {"entries"}, {"bytes"})
            entries, size = sim.node(rest[0]).router.fib_size()
        else:
            opts = _int_options(rest, {"entries"}, {"bytes"})
            sizes = [d.router.fib_size() for d in sim.nodes.values()]
            entries, size = sum(s[0] for s in sizes), sum(s[1] for s in sizes)
        ok = entries == opts["entries"] and ("bytes" not in opts or size == opts["bytes"])
        return Assertion(text, ok, f"{entries} entries, {size} bytes")


def simulate(scenario: Scenario | str, seed: int | None = None, *,
             strict: bool = False) -> tuple[Simulator, TraceReport]:
    """Like :func:`run` but also hands back the simulator for trace inspection."""
    sc = parse_scenario(scenario) if isinstance(scenario, str) else scenario
    runner = _Runner(sc, sc.seed if seed is None else seed)
    runner.build()
    result = runner.sim.run(time_limit_ms=sc.time_limit_ms, strict=strict)
    assertions = [runner.check(st, result) for st in sc.expects]
    estimates = [estimate_routing_table(b, k, p, n) for k, b, p, n in sc.estimates]
    return runner.sim, TraceReport.from_simulator(runner.sim, result, assertions, estimates)


def run(scenario: Scenario | str, seed: int | None = None, *, strict: bool = False) -> TraceReport:
    """Parse (if needed), simulate to quiescence or the time limit, and report."""
    return simulate(scenario, seed, strict=strict)[1]


def run_file(path, seed: int | None = None, *, strict: bool = False) -> TraceReport:
    with open(path, encoding="utf-8") as fh:
        return run(fh.read(), seed, strict=strict)
