"""Per-node protocol state machine.

A node is a member, a candidate, or the group leader:

* Leaders broadcast the group announcement every beacon period, fold
  collected contributions into a fresh key on every membership change or
  renewal, and expire members that stop replying.
* Members reply with their contribution every period, compute the session
  key from announcements that echo their contribution, and start a
  randomized-backoff election when the leader falls silent.
* Candidates are members whose silence timer fired; the backoff slot keeps
  simultaneous self-elections rare, and the smallest-id rule resolves the
  rest.

The transition function is pure in the operational sense: no I/O, no clock,
no global randomness.  Events carry the current time, the node owns a seeded
random source, and every outgoing message, timer update, and key change is
returned in :class:`FsmOutput` for the harness to act on.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError, DegenerateKey, MalformedMessage, ShapeViolation
from .gka_core import (
    BlindedResponse,
    Contribution,
    SessionKey,
    blind,
    compute_key_leader,
    compute_key_member,
    derive_session_key,
    recover_leader_blind,
)
from .group_arith import ExpCounter, GroupParams, random_scalar
from .messages import (
    ANNOUNCEMENT_KINDS,
    CONTRIBUTION_KINDS,
    GroupEntry,
    Message,
    MessageKind,
    build_del,
    build_igroup,
    build_ireply,
    decode,
    encode_signed,
    sign,
    validate_shape,
    verify,
)

SECOND = 1_000_000  # all durations are integer microseconds


class Mode(Enum):
    MEMBER = "member"
    CANDIDATE = "candidate"
    LEADER = "leader"


class TimerKind(Enum):
    BEACON = "beacon"
    REPLY = "reply"
    SILENCE = "silence"
    BACKOFF = "backoff"
    RENEWAL = "renewal"


@dataclass(frozen=True)
class NodeConfig:
    """Protocol timing knobs.  Defaults: 5 s beacons, 20 min renewals,
    3 missed beacons before presuming departure, backoff window of 20 slots
    of 100 ms, jitter up to a tenth of the beacon period."""

    period_t: int = 5 * SECOND
    renew_p: int = 20 * 60 * SECOND
    miss_k: int = 3
    backoff_window: int = 20
    slot_trtd: int = 100_000
    jitter_max: int = 500_000
    eager_rekey: bool = False

    def validate(self) -> "NodeConfig":
        if min(self.period_t, self.renew_p, self.slot_trtd) <= 0:
            raise ConfigError("durations must be positive")
        if not 0 <= self.jitter_max < self.period_t:
            raise ConfigError("jitter_max must lie in [0, period_t)")
        if self.miss_k < 2:
            raise ConfigError("miss_k must be at least 2")
        if self.backoff_window < 1:
            raise ConfigError("backoff window must be at least 1")
        if self.renew_p < 2 * self.period_t:
            raise ConfigError("renew period must be a large multiple of the beacon period")
        return self

    @property
    def silence_threshold(self) -> int:
        """Gap after which a peer is presumed gone: miss_k full periods plus
        the scheduling jitter, so exactly miss_k - 1 consecutive losses are
        tolerated regardless of jitter phase."""
        return self.miss_k * self.period_t + self.jitter_max


# -- events ------------------------------------------------------------------

@dataclass(frozen=True)
class MessageArrived:
    wire: bytes


@dataclass(frozen=True)
class TimerFired:
    kind: TimerKind


@dataclass(frozen=True)
class LocalLeaveRequest:
    graceful: bool = True


# -- outputs -----------------------------------------------------------------

@dataclass(frozen=True)
class Outgoing:
    message: Message
    wire: bytes
    dest: int | None  # None means broadcast


@dataclass(frozen=True)
class KeyChange:
    node_id: int
    leader_id: int
    old_epoch: int | None
    new_epoch: int
    group_key: int
    derived: bytes


@dataclass
class FsmOutput:
    sends: list[Outgoing] = field(default_factory=list)
    timers: list[tuple[TimerKind, int]] = field(default_factory=list)
    key_changes: list[KeyChange] = field(default_factory=list)
    accepted: bool | None = None  # set for message events only
    log: list[tuple] = field(default_factory=list)


@dataclass
class MemberRecord:
    """What a leader knows about one member."""

    nonce: bytes
    blinded_secret: int
    last_heard: int
    reg_index: int  # bumped whenever the registered contribution changes


@dataclass(frozen=True)
class SecretRecord:
    """Ground-truth log entry for audits; never leaves the node over the wire."""

    time: int
    role: str  # "member" or "leader"
    secret: int
    blinded: int | None
    nonce: bytes


class Node:
    """One protocol participant, driven entirely by events."""

    def __init__(self, node_id: int, config: NodeConfig, params: GroupParams,
                 keyring, rng: random.Random,
                 counter: ExpCounter | None = None,
                 skip_verify: bool = False):
        config.validate()
        self.node_id = node_id
        self.config = config
        self.params = params
        self.keyring = keyring
        self.rng = rng
        self.counter = counter if counter is not None else ExpCounter()
        # test hook: a node that skips signature checks must be caught by audit
        self._skip_verify = skip_verify

        self.mode = Mode.MEMBER
        self.leader_id: int | None = None
        self.seq = 0  # send counter for member messages (replay protection)

        self.own_secret: int | None = None
        self.contribution: Contribution | None = None
        self.contribution_leader: int | None = None  # leader it was minted for
        self.prev_secret: int | None = None
        self.prev_contribution: Contribution | None = None

        self.session: SessionKey | None = None
        self.session_leader: int | None = None
        self.last_seen_epoch = 0
        self.leader_epochs: dict[int, int] = {}
        self.last_announcement_wire: bytes | None = None
        self._last_wire_included = False  # our entry was in that announcement
        self.absent_streak = 0  # accepted announcements omitting our entry

        # leader-side state
        self.leader_secret: int | None = None
        self.leader_nonce: bytes | None = None
        self.view: dict[int, MemberRecord] = {}
        self.seen_seq: dict[int, int] = {}  # survives member removal
        self.blocked: dict[int, int] = {}   # id -> blinded secret rejected for degeneracy
        self._rejoin_pending = False        # a blocked member re-registered fresh
        self._reg_counter = 0
        self.current_announcement: Outgoing | None = None

        self.deadlines: dict[TimerKind, int] = {}
        # periodic timers are anchored to a drift-free grid; the jitter only
        # wobbles each firing, so send spacing averages exactly the period
        self._period_base: dict[TimerKind, int] = {}
        self.secret_log: list[SecretRecord] = []

    # -- public API ----------------------------------------------------------

    def start(self, now: int) -> FsmOutput:
        """Arm the initial timers; the node begins leaderless."""
        out = FsmOutput()
        self._arm(TimerKind.SILENCE, now + self.config.silence_threshold, out)
        self._arm_periodic(TimerKind.RENEWAL, self.config.renew_p, now, out,
                           restart=True)
        out.log.append(("mode", self.mode.value, "start"))
        return out

    def start_as_leader(self, now: int) -> FsmOutput:
        """Begin as the chosen group leader: broadcast the initial request
        immediately instead of waiting out an election."""
        out = FsmOutput()
        self._arm_periodic(TimerKind.RENEWAL, self.config.renew_p, now, out,
                           restart=True)
        self.mode = Mode.LEADER
        self.leader_id = self.node_id
        self.leader_nonce = self._fresh_nonce()
        out.log.append(("mode", "leader", "chosen_initial"))
        self._build_empty_announcement(out)
        out.sends.append(self.current_announcement)
        self._arm_periodic(TimerKind.BEACON, self.config.period_t, now, out,
                           restart=True)
        return out

    def handle(self, event, now: int) -> FsmOutput:
        out = FsmOutput()
        if isinstance(event, MessageArrived):
            self._on_wire(event.wire, now, out)
        elif isinstance(event, TimerFired):
            self._on_timer(event.kind, now, out)
        elif isinstance(event, LocalLeaveRequest):
            self._on_leave(event.graceful, now, out)
        else:
            raise TypeError(f"unknown event {event!r}")
        return out

    def state_digest(self) -> tuple:
        """Protocol-visible state, for no-transition assertions in tests.

        Excludes the send counter: re-sending a contribution is an output,
        not a state change.
        """
        session = (self.session.epoch, self.session.group_key,
                   self.session.derived) if self.session else None
        view = tuple(sorted(
            (pid, r.nonce, r.blinded_secret) for pid, r in self.view.items()
        ))
        return (
            self.mode, self.leader_id, session, self.session_leader,
            self.contribution, self.prev_contribution, view,
            self.leader_secret, self.last_seen_epoch,
            tuple(sorted(self.leader_epochs.items())),
        )

    # -- helpers --------------------------------------------------------------

    def _jitter(self) -> int:
        if self.config.jitter_max == 0:
            return 0
        return self.rng.randrange(self.config.jitter_max + 1)

    def _arm(self, kind: TimerKind, deadline: int, out: FsmOutput) -> None:
        self.deadlines[kind] = deadline
        out.timers.append((kind, deadline))

    def _arm_periodic(self, kind: TimerKind, period: int, now: int,
                      out: FsmOutput, restart: bool = False) -> None:
        base = self._period_base.get(kind)
        if restart or base is None:
            base = now
        base += period
        self._period_base[kind] = base
        self._arm(kind, base + self._jitter(), out)

    def _disarm(self, kind: TimerKind) -> None:
        self.deadlines.pop(kind, None)
        self._period_base.pop(kind, None)

    def _fresh_nonce(self) -> bytes:
        return self.rng.getrandbits(128).to_bytes(16, "big")

    def _fresh_contribution(self, now: int) -> None:
        """Draw a new secret and nonce and blind the secret (one exp)."""
        self.prev_secret = self.own_secret
        self.prev_contribution = self.contribution
        self.own_secret = random_scalar(self.rng, self.params)
        nonce = self._fresh_nonce()
        blinded = blind(self.own_secret, self.params, self.counter)
        self.contribution = Contribution(self.node_id, nonce, blinded)
        self.secret_log.append(
            SecretRecord(now, "member", self.own_secret, blinded, nonce))

    def _sign_and_pack(self, msg: Message, dest: int | None) -> Outgoing:
        signed = sign(msg, self.keyring, self.params)
        return Outgoing(signed, encode_signed(signed, self.params), dest)

    def _send_ireply(self, now: int, out: FsmOutput) -> None:
        assert self.contribution is not None and self.leader_id is not None
        self.seq += 1
        entry = GroupEntry(self.node_id, self.contribution.nonce,
                           self.contribution.blinded_secret, None)
        msg = build_ireply(self.node_id, self.contribution.nonce, self.seq, entry)
        out.sends.append(self._sign_and_pack(msg, self.leader_id))

    # -- message handling ------------------------------------------------------

    def _on_wire(self, wire: bytes, now: int, out: FsmOutput) -> None:
        # Fast path: the leader re-broadcasts the identical announcement
        # between changes; skip decoding, refresh liveness, and keep the
        # omission accounting running if we were not part of it.
        if (self.mode is Mode.MEMBER and self.leader_id is not None
                and wire == self.last_announcement_wire):
            out.accepted = True
            self._arm(TimerKind.SILENCE, now + self.config.silence_threshold, out)
            out.log.append(("accept", "rebeacon", self.leader_id))
            if not self._last_wire_included:
                self._note_absent(self.leader_id, now, out, just_replied=False)
            return

        try:
            msg = decode(wire, self.params)
        except MalformedMessage as exc:
            out.accepted = False
            out.log.append(("reject", "malformed", str(exc)))
            return
        if not self._skip_verify and not verify(msg, self.keyring, self.params):
            out.accepted = False
            out.log.append(("reject", "bad_signature", msg.sender_id))
            return
        try:
            validate_shape(msg)
        except ShapeViolation as exc:
            out.accepted = False
            out.log.append(("reject", "shape", str(exc)))
            return
        if msg.sender_id == self.node_id:
            out.accepted = False
            out.log.append(("reject", "self_echo", msg.sender_id))
            return

        if msg.kind in ANNOUNCEMENT_KINDS:
            self._on_announcement(msg, wire, now, out)
        elif msg.kind in CONTRIBUTION_KINDS:
            self._on_contribution(msg, now, out)
        elif msg.kind is MessageKind.DEL:
            self._on_del(msg, now, out)
        else:  # JREPLY: not used by the operational protocol
            out.accepted = False
            out.log.append(("ignore", "jreply", msg.sender_id))

    def _on_announcement(self, msg: Message, wire: bytes, now: int,
                         out: FsmOutput) -> None:
        sender = msg.sender_id
        if msg.epoch < self.leader_epochs.get(sender, 0):
            out.accepted = False
            out.log.append(("reject", "stale_epoch", sender, msg.epoch))
            return

        if self.mode is Mode.LEADER:
            if sender < self.node_id:
                self._demote(sender, now, out)
                self._process_announcement(msg, wire, now, out, just_replied=True)
            else:
                out.accepted = False
                out.log.append(("discard", "larger_leader", sender))
            return

        if self.mode is Mode.CANDIDATE:
            self._disarm(TimerKind.BACKOFF)
            self.mode = Mode.MEMBER
            out.log.append(("mode", "member", "announcement_during_backoff"))
            self._adopt(sender, now, out)
            self._process_announcement(msg, wire, now, out, just_replied=True)
            return

        # plain member
        if self.leader_id is None:
            self._adopt(sender, now, out)
            self._process_announcement(msg, wire, now, out, just_replied=True)
        elif sender == self.leader_id:
            self._process_announcement(msg, wire, now, out, just_replied=False)
        elif sender < self.leader_id:
            out.log.append(("switch_leader", self.leader_id, sender))
            self._adopt(sender, now, out)
            self._process_announcement(msg, wire, now, out, just_replied=True)
        else:
            out.accepted = False
            out.log.append(("discard", "larger_leader", sender))

    def _adopt(self, leader: int, now: int, out: FsmOutput) -> None:
        """Join a leader's group and reply at once.

        A new group context gets a fresh contribution; when rejoining the
        leader the current contribution was minted for (e.g. after a silence
        scare), the contribution is reused so the leader's echo of it still
        matches.
        """
        self.leader_id = leader
        self.last_announcement_wire = None
        self.absent_streak = 0
        if self.contribution is None or self.contribution_leader != leader:
            self._fresh_contribution(now)
            self.contribution_leader = leader
            self.prev_secret = None
            self.prev_contribution = None
        self._send_ireply(now, out)
        self._arm(TimerKind.SILENCE, now + self.config.silence_threshold, out)
        self._arm_periodic(TimerKind.REPLY, self.config.period_t, now, out,
                           restart=True)
        out.log.append(("adopt", leader))

    def _note_absent(self, sender: int, now: int, out: FsmOutput,
                     just_replied: bool) -> None:
        """Accepted announcement omits our entry: keep knocking.  After
        miss_k consecutive omissions, re-mint the contribution: the leader
        may have rejected the current one (degenerate-key exclusion) or lost
        it, and only a different blinded value can make progress."""
        self.absent_streak += 1
        if self.absent_streak >= self.config.miss_k:
            self._fresh_contribution(now)
            self.absent_streak = 0
            out.log.append(("contribution_reminted", sender))
        if not just_replied:
            out.log.append(("echo_absent", sender))
            self._send_ireply(now, out)

    def _demote(self, new_leader: int, now: int, out: FsmOutput) -> None:
        """Leader heard a smaller-id leader: stop beaconing, rejoin as member."""
        out.log.append(("mode", "member", f"demoted_to_{new_leader}"))
        self.mode = Mode.MEMBER
        self._disarm(TimerKind.BEACON)
        self.view = {}
        self.blocked = {}
        self.leader_secret = None
        self.leader_nonce = None
        self.current_announcement = None
        self._adopt(new_leader, now, out)

    def _process_announcement(self, msg: Message, wire: bytes, now: int,
                              out: FsmOutput, just_replied: bool) -> None:
        """Handle an announcement from the (now) accepted leader."""
        sender = msg.sender_id
        my_entry = next(
            (e for e in msg.entries if e.participant_id == self.node_id), None)

        matched_secret: int | None = None
        if my_entry is not None:
            if (self.contribution is not None
                    and my_entry.nonce == self.contribution.nonce
                    and my_entry.blinded_secret == self.contribution.blinded_secret):
                matched_secret = self.own_secret
                self.prev_secret = None
                self.prev_contribution = None
            elif (self.prev_contribution is not None
                    and my_entry.nonce == self.prev_contribution.nonce
                    and my_entry.blinded_secret == self.prev_contribution.blinded_secret):
                # the leader has not folded our refresh yet; the echoed key
                # legitimately uses the previous secret
                matched_secret = self.prev_secret
            else:
                out.accepted = False
                out.log.append(("reject", "wrong_echo", sender, msg.epoch))
                if not just_replied:
                    self._send_ireply(now, out)
                return

        out.accepted = True
        self.leader_epochs[sender] = max(self.leader_epochs.get(sender, 0), msg.epoch)
        self.last_seen_epoch = max(self.last_seen_epoch, msg.epoch)
        self.last_announcement_wire = wire
        self._last_wire_included = my_entry is not None
        self._arm(TimerKind.SILENCE, now + self.config.silence_threshold, out)

        if my_entry is None:
            self._note_absent(sender, now, out, just_replied)
            return
        self.absent_streak = 0

        if (self.session is not None and self.session_leader == sender
                and self.session.epoch == msg.epoch):
            return  # already keyed at this epoch

        assert matched_secret is not None and my_entry.blinded_response is not None
        leader_blind = recover_leader_blind(
            my_entry.blinded_response, matched_secret, self.params, self.counter)
        responses = [BlindedResponse(e.participant_id, e.blinded_response)
                     for e in msg.entries]
        key = compute_key_member(leader_blind, responses, self.params)
        try:
            derived = derive_session_key(key, msg.epoch, self.params)
        except DegenerateKey:
            # a correct leader never announces an identity key; treat as hostile
            out.accepted = False
            out.log.append(("reject", "degenerate_announcement", sender))
            return
        old_epoch = self.session.epoch if self.session else None
        self.session = SessionKey(key, msg.epoch, derived)
        self.session_leader = sender
        out.key_changes.append(KeyChange(
            self.node_id, sender, old_epoch, msg.epoch, key, derived))
        out.log.append(("key", sender, msg.epoch))

    def _on_contribution(self, msg: Message, now: int, out: FsmOutput) -> None:
        sender = msg.sender_id
        if self.mode is not Mode.LEADER:
            out.accepted = False
            out.log.append(("ignore", "not_leader", msg.kind.name, sender))
            return
        seq = msg.epoch
        if seq <= self.seen_seq.get(sender, -1):
            out.accepted = False
            out.log.append(("reject", "replay_seq", sender, seq))
            return
        entry = msg.entries[0]
        if entry.blinded_secret == 1:
            # a valid secret lies in [1, q-1], so its blind is never the
            # identity; folding one would cancel the freshness guarantee
            out.accepted = False
            out.log.append(("reject", "identity_contribution", sender))
            return
        self.seen_seq[sender] = seq
        out.accepted = True
        if self.blocked.get(sender) == entry.blinded_secret:
            out.log.append(("blocked_contribution", sender))
            return
        if self.blocked.pop(sender, None) is not None:
            # recovery from a degenerate-key exclusion must not wait for the
            # renewal period: fold the fresh value at the next beacon
            self._rejoin_pending = True

        rec = self.view.get(sender)
        is_new = rec is None
        changed = (is_new or rec.nonce != entry.nonce
                   or rec.blinded_secret != entry.blinded_secret)
        if changed:
            self._reg_counter += 1
            self.view[sender] = MemberRecord(
                entry.nonce, entry.blinded_secret, now, self._reg_counter)
            out.log.append(("register", sender, "new" if is_new else "update"))
            if self.session is not None and is_new and self.config.eager_rekey:
                self._rekey(now, out, reason="join")
            # otherwise: folded at formation, the next membership rekey, or
            # the leader's own renewal (deferred inclusion)
        else:
            rec.last_heard = now

    def _on_del(self, msg: Message, now: int, out: FsmOutput) -> None:
        sender = msg.sender_id
        if self.mode is not Mode.LEADER:
            out.accepted = False
            out.log.append(("ignore", "not_leader", "DEL", sender))
            return
        seq = msg.epoch
        if seq <= self.seen_seq.get(sender, -1):
            out.accepted = False
            out.log.append(("reject", "replay_seq", sender, seq))
            return
        rec = self.view.get(sender)
        if rec is None:
            self.seen_seq[sender] = seq
            out.accepted = True
            out.log.append(("del_unknown", sender))
            return
        if msg.sender_nonce != rec.nonce:
            out.accepted = False
            out.log.append(("reject", "del_nonce_mismatch", sender))
            return
        self.seen_seq[sender] = seq
        out.accepted = True
        del self.view[sender]
        out.log.append(("withdraw", sender))
        self._after_removal(now, out)

    def _after_removal(self, now: int, out: FsmOutput) -> None:
        if self.view:
            self._rekey(now, out, reason="removal")
        else:
            # group dissolved to just the leader: no session to share
            if self.session is not None:
                out.log.append(("dissolve",))
            self.session = None
            self.session_leader = None
            self._build_empty_announcement(out)

    # -- timers ----------------------------------------------------------------

    def _on_timer(self, kind: TimerKind, now: int, out: FsmOutput) -> None:
        if self.deadlines.get(kind) != now:
            return  # superseded deadline
        self.deadlines.pop(kind, None)  # keep the periodic base anchored
        if kind is TimerKind.SILENCE:
            self._on_silence(now, out)
        elif kind is TimerKind.BACKOFF:
            self._on_backoff(now, out)
        elif kind is TimerKind.BEACON:
            self._on_beacon(now, out)
        elif kind is TimerKind.REPLY:
            self._on_reply_tick(now, out)
        elif kind is TimerKind.RENEWAL:
            self._on_renewal(now, out)

    def _on_silence(self, now: int, out: FsmOutput) -> None:
        if self.mode is not Mode.MEMBER:
            return
        if self.leader_id is not None:
            out.log.append(("leader_lost", self.leader_id))
        self.leader_id = None
        self.last_announcement_wire = None
        self._disarm(TimerKind.REPLY)
        self.mode = Mode.CANDIDATE
        slot = self.rng.randint(1, self.config.backoff_window)
        self._arm(TimerKind.BACKOFF, now + slot * self.config.slot_trtd, out)
        out.log.append(("mode", "candidate", f"slot_{slot}"))

    def _on_backoff(self, now: int, out: FsmOutput) -> None:
        if self.mode is not Mode.CANDIDATE:
            return
        self.mode = Mode.LEADER
        self.leader_id = self.node_id
        self.leader_nonce = self._fresh_nonce()
        self.view = {}
        self.blocked = {}
        self.session = None
        self.session_leader = None
        out.log.append(("mode", "leader", "backoff_won"))
        self._build_empty_announcement(out)
        out.sends.append(self.current_announcement)
        self._arm_periodic(TimerKind.BEACON, self.config.period_t, now, out,
                           restart=True)

    def _build_empty_announcement(self, out: FsmOutput) -> None:
        msg = build_igroup(self.node_id, self.leader_nonce,
                           self.last_seen_epoch, [])
        self.current_announcement = self._sign_and_pack(msg, None)

    def _on_beacon(self, now: int, out: FsmOutput) -> None:
        if self.mode is not Mode.LEADER:
            return
        queued = len(out.sends)
        expired = [pid for pid, rec in self.view.items()
                   if now - rec.last_heard >= self.config.silence_threshold]
        if expired:
            for pid in expired:
                del self.view[pid]
            out.log.append(("expire", tuple(sorted(expired))))
            self._after_removal(now, out)
        elif self.session is None and self.view:
            # group formation: fold everything heard so far
            self._rekey(now, out, reason="formation")
        elif self._rejoin_pending and self.view:
            self._rekey(now, out, reason="rejoin")
        if len(out.sends) == queued:
            # nothing changed: repeat the previous announcement bit for bit
            out.sends.append(self.current_announcement)
        self._arm_periodic(TimerKind.BEACON, self.config.period_t, now, out)

    def _on_reply_tick(self, now: int, out: FsmOutput) -> None:
        if self.mode is Mode.MEMBER and self.leader_id is not None:
            self._send_ireply(now, out)
            self._arm_periodic(TimerKind.REPLY, self.config.period_t, now, out)

    def _on_renewal(self, now: int, out: FsmOutput) -> None:
        self._arm_periodic(TimerKind.RENEWAL, self.config.renew_p, now, out)
        if self.mode is Mode.LEADER:
            out.log.append(("renewal",))
            if self.view:
                self._rekey(now, out, reason="renewal")
            else:
                self.leader_nonce = self._fresh_nonce()
                self._build_empty_announcement(out)
        elif self.mode is Mode.MEMBER and self.leader_id is not None:
            out.log.append(("renewal",))
            self._fresh_contribution(now)
            # carried by the next periodic reply; the leader folds it at its
            # own next contribution change

    # -- leader rekey ------------------------------------------------------------

    def _rekey(self, now: int, out: FsmOutput, reason: str) -> None:
        """Resample the leader secret, fold the registered contributions, and
        broadcast the rebuilt announcement.

        If the key degenerates to the identity (1 + sum of member secrets
        divisible by the group order), the most recently registered
        contribution is excluded and blocklisted until that member sends a
        different one; this terminates with probability 1 because the member
        renews its contribution periodically.
        """
        assert self.mode is Mode.LEADER
        self._rejoin_pending = False
        while True:
            self.leader_secret = random_scalar(self.rng, self.params)
            self.leader_nonce = self._fresh_nonce()
            ordered = sorted(self.view.items(), key=lambda kv: kv[1].reg_index)
            contributions = [
                Contribution(pid, rec.nonce, rec.blinded_secret)
                for pid, rec in ordered
            ]
            try:
                key, responses = compute_key_leader(
                    self.leader_secret, contributions, self.params, self.counter)
                break
            except DegenerateKey:
                victim_id, victim = max(self.view.items(),
                                        key=lambda kv: kv[1].reg_index)
                del self.view[victim_id]
                self.blocked[victim_id] = victim.blinded_secret
                out.log.append(("degenerate_excluded", victim_id))
                if not self.view:
                    self.session = None
                    self.session_leader = None
                    self._build_empty_announcement(out)
                    out.sends.append(self.current_announcement)
                    return

        self.secret_log.append(SecretRecord(
            now, "leader", self.leader_secret, None, self.leader_nonce))
        epoch = self.last_seen_epoch + 1
        self.last_seen_epoch = epoch
        derived = derive_session_key(key, epoch, self.params)
        old_epoch = self.session.epoch if self.session else None
        self.session = SessionKey(key, epoch, derived)
        self.session_leader = self.node_id
        out.key_changes.append(KeyChange(
            self.node_id, self.node_id, old_epoch, epoch, key, derived))

        response_by_id = {r.participant_id: r.response for r in responses}
        entries = [
            GroupEntry(pid, rec.nonce, rec.blinded_secret, response_by_id[pid])
            for pid, rec in ordered if pid in self.view
        ]
        msg = build_igroup(self.node_id, self.leader_nonce, epoch, entries)
        self.current_announcement = self._sign_and_pack(msg, None)
        out.sends.append(self.current_announcement)
        out.log.append(("rekey", reason, epoch))

    # -- local leave ---------------------------------------------------------------

    def _on_leave(self, graceful: bool, now: int, out: FsmOutput) -> None:
        if (graceful and self.mode is Mode.MEMBER
                and self.leader_id is not None and self.contribution is not None):
            self.seq += 1
            msg = build_del(self.node_id, self.contribution.nonce, self.seq)
            out.sends.append(self._sign_and_pack(msg, self.leader_id))
        out.log.append(("leave", "graceful" if graceful else "crash"))
