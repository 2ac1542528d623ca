"""Deterministic discrete-event network simulator.

Single-hop lossy broadcast with uniform latency, partitions, and node churn,
driving one :class:`~agdh.node_fsm.Node` per participant.  Everything is
derived from the run seed: per-node protocol randomness, channel loss, and
latency draws.  Events are processed in (time, insertion-sequence) order, so
identical inputs produce byte-identical transcripts.

The transcript is the run's complete observable history: every send,
delivery, drop, state transition, and key change, one line per event.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from .errors import ConfigError, OverlapError, UnknownNode
from .group_arith import GroupParams, PROD
from .node_fsm import (
    LocalLeaveRequest,
    MessageArrived,
    Mode,
    Node,
    NodeConfig,
    Outgoing,
    TimerFired,
)
from .messages import HmacKeyRing

SECOND = 1_000_000

# queue entry tags; the unique sequence number keeps payloads uncompared
_TIMER, _DELIVER, _SCHED = 0, 1, 2


@dataclass(frozen=True)
class PartitionAt:
    at: int
    cells: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class HealAt:
    at: int


@dataclass(frozen=True)
class JoinAt:
    at: int
    node_id: int


@dataclass(frozen=True)
class LeaveAt:
    at: int
    node_id: int
    graceful: bool = True


@dataclass(frozen=True)
class CrashAt:
    at: int
    node_id: int


@dataclass(frozen=True)
class InjectAt:
    """Deliver raw bytes to one node as if they came off the network.

    Test hook for adversarial and replay scenarios; not part of the scenario
    file grammar.
    """

    at: int
    node_id: int
    wire: bytes


@dataclass(frozen=True)
class SimConfig:
    node_count: int
    loss_prob: float = 0.0
    latency_min: int = 10_000
    latency_max: int = 50_000
    seed: int = 0
    duration: int = 120 * SECOND
    schedule: tuple = ()
    skip_verify_nodes: frozenset = frozenset()
    initial_leader: int | None = None  # skip the election, per the IKA setup

    def validate(self) -> "SimConfig":
        if self.node_count < 1:
            raise ConfigError("node_count must be at least 1")
        if self.initial_leader is not None and not \
                1 <= self.initial_leader <= self.node_count:
            raise ConfigError("initial_leader must be one of the starting nodes")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ConfigError("loss_prob must lie in [0, 1]")
        if not 0 < self.latency_min <= self.latency_max:
            raise ConfigError("latency bounds must satisfy 0 < min <= max")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        return self


@dataclass(frozen=True)
class Record:
    """One transcript line: time, event kind, node, ordered detail fields."""

    time: int
    kind: str
    node: int | None
    fields: tuple[tuple[str, str], ...] = ()

    def get(self, key: str) -> str | None:
        for k, v in self.fields:
            if k == key:
                return v
        return None

    def render(self) -> str:
        node = "-" if self.node is None else str(self.node)
        detail = " ".join(f"{k}={v}" for k, v in self.fields)
        return f"{self.time} {self.kind} {node} {detail}".rstrip()


class Transcript:
    def __init__(self) -> None:
        self.records: list[Record] = []

    def append(self, time: int, kind: str, node: int | None, *fields) -> None:
        self.records.append(
            Record(time, kind, node, tuple((k, str(v)) for k, v in fields)))

    def of_kind(self, *kinds: str) -> list[Record]:
        wanted = set(kinds)
        return [r for r in self.records if r.kind in wanted]

    def render(self) -> str:
        return "\n".join(r.render() for r in self.records) + "\n"

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class KeyEvent:
    time: int
    node_id: int
    leader_id: int
    old_epoch: int | None
    epoch: int
    group_key: int
    derived: bytes


@dataclass
class Metrics:
    sent: dict = field(default_factory=dict)        # (node, kind) -> count
    broadcasts: dict = field(default_factory=dict)  # node -> count
    accepted: dict = field(default_factory=dict)    # node -> count
    rejected: dict = field(default_factory=dict)    # (node, reason) -> count
    delivered: int = 0
    dropped: int = 0
    suppressed: int = 0
    exp_events: list = field(default_factory=list)  # (time, node, delta)
    key_events: list = field(default_factory=list)  # KeyEvent
    per_message: dict = field(default_factory=dict) # msg_id -> outcome counts

    def exp_total(self, node_id: int) -> int:
        return sum(d for _, n, d in self.exp_events if n == node_id)

    def bump(self, table: dict, key) -> None:
        table[key] = table.get(key, 0) + 1


@dataclass
class SimResult:
    config: SimConfig
    node_config: NodeConfig
    params: GroupParams
    transcript: Transcript
    metrics: Metrics
    nodes: dict
    live: set
    keyring: HmacKeyRing
    secrets: dict  # node_id -> list[SecretRecord]
    wire_by_id: dict  # msg_id -> bytes


class _Simulation:
    def __init__(self, config: SimConfig, node_config: NodeConfig,
                 params: GroupParams):
        self.config = config.validate()
        self.node_config = node_config.validate()
        self.params = params
        self.queue: list = []
        self.seq = 0
        self.msg_seq = 0
        self.transcript = Transcript()
        self.metrics = Metrics()
        self.channel_rng = random.Random(f"{config.seed}/channel")
        self.cells: dict[int, int] = {}
        self.nodes: dict[int, Node] = {}
        self.live: set[int] = set()
        self.wire_by_id: dict[int, bytes] = {}

        initial = list(range(1, config.node_count + 1))
        scheduled_joins = [e.node_id for e in config.schedule
                           if isinstance(e, JoinAt)]
        clash = set(initial) & set(scheduled_joins)
        if clash:
            raise ConfigError(f"scheduled joins reuse initial ids: {sorted(clash)}")
        self.keyring = HmacKeyRing.provision(
            initial + scheduled_joins, master=f"agdh/{config.seed}")
        for node_id in initial:
            self._create_node(node_id, now=0)
        for entry in config.schedule:
            self._push(entry.at, _SCHED, entry)

    # -- plumbing ---------------------------------------------------------

    def _push(self, at: int, tag: int, payload) -> None:
        self.seq += 1
        heapq.heappush(self.queue, (at, self.seq, tag, payload))

    def _create_node(self, node_id: int, now: int) -> None:
        node = Node(
            node_id, self.node_config, self.params, self.keyring,
            rng=random.Random(f"{self.config.seed}/node/{node_id}"),
            skip_verify=node_id in self.config.skip_verify_nodes,
        )
        self.nodes[node_id] = node
        self.live.add(node_id)
        self.cells.setdefault(node_id, 0)
        if node_id == self.config.initial_leader and now == 0:
            self._absorb(node_id, node.start_as_leader(now), now)
        else:
            self._absorb(node_id, node.start(now), now)

    def _same_cell(self, a: int, b: int) -> bool:
        return self.cells.get(a, 0) == self.cells.get(b, 0)

    # -- event processing ----------------------------------------------------

    def run(self) -> SimResult:
        duration = self.config.duration
        while self.queue and self.queue[0][0] <= duration:
            at, _, tag, payload = heapq.heappop(self.queue)
            if tag == _TIMER:
                node_id, kind = payload
                if node_id in self.live:
                    node = self.nodes[node_id]
                    self._absorb(node_id, node.handle(TimerFired(kind), at), at)
            elif tag == _DELIVER:
                msg_id, receiver, sender = payload
                self._deliver(msg_id, receiver, sender, at)
            else:
                self._schedule_entry(payload, at)
        return SimResult(
            config=self.config, node_config=self.node_config, params=self.params,
            transcript=self.transcript, metrics=self.metrics, nodes=self.nodes,
            live=set(self.live), keyring=self.keyring,
            secrets={nid: list(n.secret_log) for nid, n in self.nodes.items()},
            wire_by_id=dict(self.wire_by_id),
        )

    def _deliver(self, msg_id: int, receiver: int, sender: int | None, at: int) -> None:
        if receiver not in self.live:
            self.transcript.append(at, "SUPPRESS", receiver,
                                   ("id", msg_id), ("reason", "dead"))
            self.metrics.suppressed += 1
            self._account(msg_id, "suppressed")
            return
        self.transcript.append(at, "DELIVER", receiver,
                               ("id", msg_id), ("from", sender if sender is not None else "-"))
        self.metrics.delivered += 1
        self._account(msg_id, "delivered")
        node = self.nodes[receiver]
        wire = self.wire_by_id[msg_id]
        self._absorb(receiver, node.handle(MessageArrived(wire), at), at,
                     msg_id=msg_id)

    def _schedule_entry(self, entry, at: int) -> None:
        if isinstance(entry, PartitionAt):
            self.apply_partition(entry.cells, at)
        elif isinstance(entry, HealAt):
            self.heal(at)
        elif isinstance(entry, JoinAt):
            if entry.node_id in self.nodes:
                raise UnknownNode(f"node {entry.node_id} already exists")
            self.transcript.append(at, "JOIN", entry.node_id)
            self._create_node(entry.node_id, at)
        elif isinstance(entry, (LeaveAt, CrashAt)):
            graceful = isinstance(entry, LeaveAt) and entry.graceful
            self.node_leave(entry.node_id, graceful, at)
        elif isinstance(entry, InjectAt):
            self.msg_seq += 1
            self.wire_by_id[self.msg_seq] = entry.wire
            self.transcript.append(at, "INJECT", entry.node_id,
                                   ("id", self.msg_seq))
            self._push(at, _DELIVER, (self.msg_seq, entry.node_id, None))
        else:
            raise ConfigError(f"unknown schedule entry {entry!r}")

    def apply_partition(self, cells, at: int) -> None:
        seen: set[int] = set()
        for cell in cells:
            for node_id in cell:
                if node_id in seen:
                    raise OverlapError(f"node {node_id} in two partition cells")
                seen.add(node_id)
        if not cells:
            return  # no-op
        assignment = {}
        for index, cell in enumerate(cells, start=1):
            for node_id in cell:
                assignment[node_id] = index
        for node_id in self.nodes:
            self.cells[node_id] = assignment.get(node_id, -1)
        rendered = "|".join(",".join(str(n) for n in sorted(cell)) for cell in cells)
        self.transcript.append(at, "PARTITION", None, ("cells", rendered))

    def heal(self, at: int) -> None:
        for node_id in self.cells:
            self.cells[node_id] = 0
        self.transcript.append(at, "HEAL", None)

    def node_leave(self, node_id: int, graceful: bool, at: int) -> None:
        if node_id not in self.live:
            raise UnknownNode(f"node {node_id} is not live")
        if graceful:
            node = self.nodes[node_id]
            self._absorb(node_id, node.handle(LocalLeaveRequest(True), at), at)
            self.transcript.append(at, "LEAVE", node_id, ("graceful", "true"))
        else:
            self.transcript.append(at, "CRASH", node_id)
        self.live.discard(node_id)

    # -- FSM output absorption --------------------------------------------------

    def _absorb(self, node_id: int, out, at: int, msg_id: int | None = None) -> None:
        node = self.nodes[node_id]
        if msg_id is not None and out.accepted is not None:
            if out.accepted:
                self.transcript.append(at, "ACCEPT", node_id, ("id", msg_id))
                self.metrics.bump(self.metrics.accepted, node_id)
            else:
                reason = "unspecified"
                for entry in out.log:
                    if entry[0] in ("reject", "discard", "ignore"):
                        reason = str(entry[1])
                        break
                self.transcript.append(at, "REJECT", node_id,
                                       ("id", msg_id), ("reason", reason))
                self.metrics.bump(self.metrics.rejected, (node_id, reason))
        for entry in out.log:
            tag = entry[0]
            if tag in ("reject", "discard", "ignore", "key", "accept"):
                continue
            if tag == "mode":
                self.transcript.append(
                    at, "STATE", node_id,
                    ("mode", entry[1]), ("why", entry[2]))
            else:
                fields = tuple((f"a{i}", v) for i, v in enumerate(entry[1:]))
                self.transcript.append(at, tag.upper(), node_id, *fields)
        for kc in out.key_changes:
            self.transcript.append(
                at, "KEY", node_id,
                ("leader", kc.leader_id), ("epoch", kc.new_epoch),
                ("key", kc.derived.hex()))
            self.metrics.key_events.append(KeyEvent(
                at, kc.node_id, kc.leader_id, kc.old_epoch, kc.new_epoch,
                kc.group_key, kc.derived))
        for outgoing in out.sends:
            self._send(node_id, outgoing, at)
        for kind, deadline in out.timers:
            self._push(deadline, _TIMER, (node_id, kind))
        # exponentiation accounting rides on the counter the node owns
        done = node.counter.count
        seen = getattr(node, "_exp_seen", 0)
        if done != seen:
            self.metrics.exp_events.append((at, node_id, done - seen))
            node._exp_seen = done

    def _send(self, sender: int, outgoing: Outgoing, at: int) -> None:
        self.msg_seq += 1
        msg_id = self.msg_seq
        self.wire_by_id[msg_id] = outgoing.wire
        msg = outgoing.message
        dest = "bcast" if outgoing.dest is None else str(outgoing.dest)
        self.transcript.append(
            at, "SEND", sender,
            ("id", msg_id), ("kind", msg.kind.name), ("dest", dest),
            ("epoch", msg.epoch), ("entries", len(msg.entries)),
            ("wire", outgoing.wire.hex()))
        self.metrics.bump(self.metrics.sent, (sender, msg.kind.name))
        if outgoing.dest is None:
            self.metrics.bump(self.metrics.broadcasts, sender)
            targets = [n for n in sorted(self.live) if n != sender]
        else:
            targets = [outgoing.dest] if outgoing.dest in self.live else []
            if not targets:
                self.transcript.append(at, "SUPPRESS", outgoing.dest,
                                       ("id", msg_id), ("reason", "dead"))
                self.metrics.suppressed += 1
                self._account(msg_id, "suppressed")
        for receiver in targets:
            if not self._same_cell(sender, receiver):
                self.transcript.append(at, "SUPPRESS", receiver,
                                       ("id", msg_id), ("reason", "partition"))
                self.metrics.suppressed += 1
                self._account(msg_id, "suppressed")
                continue
            if self.channel_rng.random() < self.config.loss_prob:
                self.transcript.append(at, "DROP", receiver, ("id", msg_id))
                self.metrics.dropped += 1
                self._account(msg_id, "dropped")
                continue
            latency = self.channel_rng.randrange(
                self.config.latency_min, self.config.latency_max + 1)
            self._account(msg_id, "scheduled")
            self._push(at + latency, _DELIVER, (msg_id, receiver, sender))

    def _account(self, msg_id: int, outcome: str) -> None:
        bucket = self.metrics.per_message.setdefault(
            msg_id, {"scheduled": 0, "delivered": 0, "dropped": 0, "suppressed": 0})
        bucket[outcome] += 1


def run(config: SimConfig, node_config: NodeConfig | None = None,
        params: GroupParams = PROD) -> SimResult:
    """Execute one simulation; identical inputs give identical outputs."""
    return _Simulation(config, node_config or NodeConfig(), params).run()


# -- post-run helpers ------------------------------------------------------------


def leaders(result: SimResult) -> list[int]:
    return sorted(n for n in result.live
                  if result.nodes[n].mode is Mode.LEADER)


def converged(result: SimResult) -> bool:
    """One live leader whose cell-mates all share its current session key."""
    heads = leaders(result)
    if len(heads) != 1:
        return False
    leader = result.nodes[heads[0]]
    peers = [result.nodes[n] for n in result.live if n != heads[0]]
    if leader.session is None:
        return not peers
    for node in peers:
        if node.session is None or node.session.derived != leader.session.derived:
            return False
    return True


def final_key_epoch(result: SimResult) -> int | None:
    heads = leaders(result)
    if len(heads) != 1:
        return None
    session = result.nodes[heads[0]].session
    return session.epoch if session else None


def converged_by(result: SimResult) -> int | None:
    """Earliest time at which exactly one node led and every live node held
    the leader's current key, reconstructed by replaying the transcript.

    Returns None if that state is never reached.  Later churn (and its
    recovery window) does not retract an earlier convergence.
    """
    live: set[int] = set(range(1, result.config.node_count + 1))
    mode: dict[int, str] = {n: "member" for n in live}
    key: dict[int, bytes | None] = {n: None for n in live}
    for rec in result.transcript:
        if rec.kind == "STATE":
            mode[rec.node] = rec.get("mode")
        elif rec.kind == "KEY":
            key[rec.node] = rec.get("key")
        elif rec.kind == "DISSOLVE":
            key[rec.node] = None
        elif rec.kind == "JOIN":
            live.add(rec.node)
            mode[rec.node] = "member"
            key[rec.node] = None
        elif rec.kind in ("CRASH", "LEAVE"):
            live.discard(rec.node)
        else:
            continue
        heads = [n for n in live if mode.get(n) == "leader"]
        if len(heads) != 1 or key.get(heads[0]) is None:
            continue
        wanted = key[heads[0]]
        if all(key.get(n) == wanted for n in live):
            return rec.time
    return None
