"""Independent verification paths, used only by tests and the CLI.

The auditor recomputes every announced key directly in the exponent from the
ground-truth secrets (which the nodes log locally and never send), re-verifies
every message a node accepted, and scans outgoing wire bytes for secret
material.  It deliberately shares nothing with the leader/member computation
paths beyond the group primitives, so corrupting either path trips it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CountMismatch, MalformedMessage
from .gka_core import derive_session_key, oracle_key
from .group_arith import GroupParams, encode_element
from .messages import ANNOUNCEMENT_KINDS, MessageKind, decode, verify
from .simnet import Record, SimResult

_ANNOUNCEMENT_NAMES = {k.name for k in ANNOUNCEMENT_KINDS}
_CONTRIBUTION_NAMES = {MessageKind.IREPLY.name, MessageKind.JOIN.name}


@dataclass
class AuditReport:
    findings: list = field(default_factory=list)
    epochs_checked: int = 0
    accepts_checked: int = 0
    sends_scanned: int = 0

    @property
    def clean(self) -> bool:
        return not self.findings

    def add(self, kind: str, detail: str) -> None:
        self.findings.append((kind, detail))

    def render(self) -> str:
        lines = [
            f"audit: epochs={self.epochs_checked}"
            f" accepts={self.accepts_checked}"
            f" sends={self.sends_scanned}"
            f" findings={len(self.findings)}"
        ]
        lines += [f"FINDING {kind} {detail}" for kind, detail in self.findings]
        return "\n".join(lines) + "\n"


def _scalar_width(params: GroupParams) -> int:
    return (params.order.bit_length() + 7) // 8


def audit_transcript(result: SimResult, scan_secrets: bool | None = None) -> AuditReport:
    """Cross-check a finished run against ground truth.

    Checks, per announced epoch: the key every node derived equals the
    direct-exponent recomputation from the logged secrets, and is never the
    identity element.  Also: every accepted message re-verifies under the
    keyring, and no message field carries a secret's encoding.

    The secret scan compares raw bytes, so on a group whose element width
    equals the scalar width (the toy group: one byte each) equality is
    pigeonhole coincidence, not leakage.  By default the scan runs only when
    the widths differ; pass ``scan_secrets=True`` to force it.
    """
    params = result.params
    report = AuditReport()
    if scan_secrets is None:
        scan_secrets = _scalar_width(params) != params.element_width

    leader_secret_by_nonce: dict[tuple[int, bytes], int] = {}
    member_secret: dict[tuple[int, int, bytes], int] = {}
    for node_id, records in result.secrets.items():
        for rec in records:
            if rec.role == "leader":
                leader_secret_by_nonce[(node_id, rec.nonce)] = rec.secret
            else:
                member_secret[(node_id, rec.blinded, rec.nonce)] = rec.secret

    # --- reconstruct announced group compositions -------------------------
    sends = result.transcript.of_kind("SEND")
    composition: dict[tuple[int, int], tuple] = {}
    for rec in sends:
        if rec.get("kind") not in _ANNOUNCEMENT_NAMES:
            continue
        if int(rec.get("entries")) == 0:
            continue
        msg = decode(bytes.fromhex(rec.get("wire")), params)
        key = (msg.sender_id, msg.epoch)
        shape = tuple((e.participant_id, e.nonce, e.blinded_secret)
                      for e in msg.entries)
        previous = composition.get(key)
        if previous is not None:
            if previous[1] != shape:
                report.add("epoch_reuse",
                           f"leader={msg.sender_id} epoch={msg.epoch}")
            continue
        composition[key] = (msg, shape)

    expected: dict[tuple[int, int], bytes] = {}
    included: dict[tuple[int, int], set] = {}
    for (leader_id, epoch), (msg, shape) in composition.items():
        r_l = leader_secret_by_nonce.get((leader_id, msg.sender_nonce))
        if r_l is None:
            report.add("unknown_leader_secret",
                       f"leader={leader_id} epoch={epoch}")
            continue
        member_secrets = []
        ok = True
        for pid, nonce, blinded in shape:
            secret = member_secret.get((pid, blinded, nonce))
            if secret is None:
                report.add("unknown_contribution",
                           f"leader={leader_id} epoch={epoch} member={pid}")
                ok = False
                break
            member_secrets.append(secret)
        if not ok:
            continue
        key_element = oracle_key(r_l, member_secrets, params)
        if key_element == 1:
            report.add("identity_key", f"leader={leader_id} epoch={epoch}")
            continue
        expected[(leader_id, epoch)] = derive_session_key(key_element, epoch, params)
        included[(leader_id, epoch)] = {pid for pid, _, _ in shape} | {leader_id}
    report.epochs_checked = len(expected)

    # --- every derived key must match the oracle --------------------------
    for kev in result.metrics.key_events:
        slot = (kev.leader_id, kev.epoch)
        want = expected.get(slot)
        if want is None:
            report.add("unannounced_epoch",
                       f"node={kev.node_id} leader={kev.leader_id} epoch={kev.epoch}")
            continue
        if kev.node_id not in included[slot]:
            report.add("foreign_key",
                       f"node={kev.node_id} not in epoch {kev.epoch} group")
        if kev.derived != want:
            report.add("key_mismatch",
                       f"node={kev.node_id} leader={kev.leader_id} epoch={kev.epoch}")

    # --- every accepted message must re-verify ----------------------------
    for rec in result.transcript.of_kind("ACCEPT"):
        report.accepts_checked += 1
        wire = result.wire_by_id.get(int(rec.get("id")))
        if wire is None:
            report.add("accept_without_wire", f"id={rec.get('id')}")
            continue
        try:
            msg = decode(wire, params)
        except MalformedMessage as exc:
            report.add("accepted_malformed", f"id={rec.get('id')}: {exc}")
            continue
        if not verify(msg, result.keyring, params):
            report.add("accepted_unverified",
                       f"node={rec.node} id={rec.get('id')} kind={msg.kind.name}")

    # --- no protocol message may carry a secret's encoding ----------------
    width = _scalar_width(params)
    secret_encodings = {
        rec.secret.to_bytes(width, "big")
        for records in result.secrets.values() for rec in records
    }
    for rec in sends if scan_secrets else ():
        report.sends_scanned += 1
        msg = decode(bytes.fromhex(rec.get("wire")), params)
        fields = [msg.sender_nonce]
        for e in msg.entries:
            fields.append(e.nonce)
            fields.append(encode_element(e.blinded_secret, params))
            if e.blinded_response is not None:
                fields.append(encode_element(e.blinded_response, params))
        for data in fields:
            if len(data) == width and data in secret_encodings:
                report.add("secret_leak",
                           f"send id={rec.get('id')} field={data.hex()}")
    return report


@dataclass(frozen=True)
class CostRow:
    group_size: int
    member_expos: int
    leader_expos: int
    messages: int
    broadcasts: int
    rounds: int

    def render(self) -> str:
        return (f"m={self.group_size} expo/member={self.member_expos}"
                f" expo/leader={self.leader_expos} messages={self.messages}"
                f" broadcasts={self.broadcasts} rounds={self.rounds}")


def _establishment(result: SimResult) -> tuple[Record, int, int]:
    """The announcement that first carries entries, its sender, and epoch."""
    for rec in result.transcript.of_kind("SEND"):
        if rec.get("kind") in _ANNOUNCEMENT_NAMES and int(rec.get("entries")) > 0:
            msg = decode(bytes.fromhex(rec.get("wire")), result.params)
            return rec, msg.sender_id, msg.epoch
    raise CountMismatch("no keyed announcement in transcript")


def cost_table(result: SimResult, m: int) -> CostRow:
    """Measure one initial key establishment and check it against the
    expected cost row: 2 exponentiations per member, m for the leader,
    m protocol messages of which 1 broadcast, 2 causal rounds.

    Empty beacons are excluded (they are the group-discovery round), and
    periodic retransmissions of an unchanged contribution count once: the
    protocol message count is over distinct logical messages.
    """
    params = result.params
    establishing, leader_id, epoch = _establishment(result)
    t_end = establishing.time

    # distinct member contributions sent before the establishing broadcast
    contributions: dict[tuple, int] = {}
    for rec in result.transcript.of_kind("SEND"):
        if rec.time > t_end or rec.get("kind") not in _CONTRIBUTION_NAMES:
            continue
        msg = decode(bytes.fromhex(rec.get("wire")), params)
        entry = msg.entries[0]
        logical = (msg.sender_id, entry.nonce, entry.blinded_secret)
        if logical not in contributions:
            contributions[logical] = int(rec.get("id"))

    counted_replies = set(contributions.values())
    messages = len(counted_replies) + 1
    broadcasts = 1

    # causal rounds: longest dependency chain among the counted messages,
    # where a message depends on any counted message delivered to its sender
    # before it was sent
    delivered_at: dict[int, list[tuple[int, int]]] = {}
    for rec in result.transcript.of_kind("DELIVER"):
        delivered_at.setdefault(int(rec.get("id")), []).append((rec.time, rec.node))
    send_time = {int(r.get("id")): r.time for r in result.transcript.of_kind("SEND")}
    send_node = {int(r.get("id")): r.node for r in result.transcript.of_kind("SEND")}
    counted = counted_replies | {int(establishing.get("id"))}

    def depth(msg_id: int, memo: dict) -> int:
        if msg_id in memo:
            return memo[msg_id]
        best = 0
        for other in counted:
            if other == msg_id:
                continue
            for when, receiver in delivered_at.get(other, ()):
                if receiver == send_node[msg_id] and when <= send_time[msg_id]:
                    best = max(best, depth(other, memo))
                    break
        memo[msg_id] = best + 1
        return memo[msg_id]

    memo: dict[int, int] = {}
    rounds = max(depth(i, memo) for i in counted)

    # exponentiations up to the instant the last member derives the key
    key_times = [k.time for k in result.metrics.key_events
                 if k.leader_id == leader_id and k.epoch == epoch]
    t_conv = max(key_times) if key_times else t_end
    expos: dict[int, int] = {}
    for when, node_id, delta in result.metrics.exp_events:
        if when <= t_conv:
            expos[node_id] = expos.get(node_id, 0) + delta

    establishing_msg = decode(bytes.fromhex(establishing.get("wire")), params)
    member_ids = {e.participant_id for e in establishing_msg.entries}
    problems = []
    leader_expos = expos.get(leader_id, 0)
    if leader_expos != m:
        problems.append(f"leader expos {leader_expos} != {m}")
    member_expo_values = {expos.get(pid, 0) for pid in member_ids}
    if member_expo_values != {2}:
        problems.append(f"member expos {sorted(member_expo_values)} != 2")
    if len(member_ids) != m - 1:
        problems.append(f"group size {len(member_ids) + 1} != {m}")
    if messages != m:
        problems.append(f"messages {messages} != {m}")
    if rounds != 2:
        problems.append(f"rounds {rounds} != 2")
    if problems:
        raise CountMismatch("; ".join(problems))
    return CostRow(m, 2, leader_expos, messages, broadcasts, rounds)
