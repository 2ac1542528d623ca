"""Tampered-message corpus for the adversarial-rejection criterion.

Builds a live leader/member pair, then feeds each class of tampered wire to
the relevant node and records whether anything was accepted or changed.
"""

import random
from dataclasses import dataclass, replace

from agdh.group_arith import TOY
from agdh.messages import (
    GroupEntry,
    HmacKeyRing,
    build_del,
    build_igroup,
    build_ireply,
    encode_canonical,
    encode_signed,
    sign,
)
from agdh.node_fsm import MessageArrived, Node, NodeConfig, TimerFired, TimerKind

RING = HmacKeyRing.provision(range(1, 10), master="adversarial")


@dataclass
class Outcome:
    accepted: bool | None
    state_unchanged: bool
    key_changes: int
    sends: int


def _elect(node):
    node.start(0)
    out = node.handle(TimerFired(TimerKind.SILENCE),
                      node.deadlines[TimerKind.SILENCE])
    out = node.handle(TimerFired(TimerKind.BACKOFF),
                      node.deadlines[TimerKind.BACKOFF])
    return out.sends[0]


def build_pair():
    """Leader 1 with keyed members 2 and 3; returns nodes and live wires."""
    leader = Node(1, NodeConfig(), TOY, RING, random.Random("corpus/1"))
    member = Node(2, NodeConfig(), TOY, RING, random.Random("corpus/2"))
    other = Node(3, NodeConfig(), TOY, RING, random.Random("corpus/3"))
    empty = _elect(leader)
    now = leader.deadlines[TimerKind.BEACON] - 1_000_000
    member.start(0)
    other.start(0)
    reply2 = member.handle(MessageArrived(empty.wire), now).sends[0]
    reply3 = other.handle(MessageArrived(empty.wire), now + 1000).sends[0]
    leader.handle(MessageArrived(reply2.wire), now + 2000)
    leader.handle(MessageArrived(reply3.wire), now + 3000)
    out = leader.handle(TimerFired(TimerKind.BEACON),
                        leader.deadlines[TimerKind.BEACON])
    keyed = out.sends[0]
    t = keyed.message.epoch  # noqa: F841  (epoch 1)
    now = leader.deadlines[TimerKind.BEACON]
    member.handle(MessageArrived(keyed.wire), now + 1000)
    other.handle(MessageArrived(keyed.wire), now + 2000)
    assert leader.session and member.session and other.session
    assert member.session.derived == leader.session.derived
    return leader, member, other, empty, keyed, reply2, now + 10_000


def _flip(wire: bytes, offset: int) -> bytes:
    tampered = bytearray(wire)
    tampered[offset] ^= 0x01
    return bytes(tampered)


def run_corpus() -> dict[str, Outcome]:
    outcomes: dict[str, Outcome] = {}

    def probe(name, node, wire, now):
        digest = node.state_digest()
        out = node.handle(MessageArrived(wire), now)
        outcomes[name] = Outcome(
            accepted=out.accepted,
            state_unchanged=node.state_digest() == digest,
            key_changes=len(out.key_changes),
            sends=len(out.sends),
        )

    # --- flipped signature bytes -----------------------------------------
    leader, member, other, empty, keyed, reply2, now = build_pair()
    probe("igroup_sig_flip_first", member, _flip(keyed.wire, len(keyed.wire) - 32), now)
    probe("igroup_sig_flip_last", member, _flip(keyed.wire, len(keyed.wire) - 1), now)
    probe("ireply_sig_flip", leader, _flip(reply2.wire, len(reply2.wire) - 5), now)

    # --- payload bit flips break the signature ----------------------------
    probe("igroup_payload_flip", member, _flip(keyed.wire, 40), now)
    probe("ireply_payload_flip", leader, _flip(reply2.wire, 33), now)

    # --- wrong-sender signatures ------------------------------------------
    leader, member, other, empty, keyed, reply2, now = build_pair()
    msg = keyed.message
    forged = replace(msg, signature=RING.sign(5, encode_canonical(
        replace(msg, signature=b""), TOY)))
    probe("igroup_wrong_key", member, encode_signed(forged, TOY), now)
    fake_reply = build_ireply(4, bytes(16), 99,
                              GroupEntry(4, bytes(16), 16, None))
    forged_reply = replace(fake_reply, signature=RING.sign(
        5, encode_canonical(fake_reply, TOY)))
    probe("ireply_wrong_key", leader, encode_signed(forged_reply, TOY), now)

    # --- unknown sender ----------------------------------------------------
    stranger = build_ireply(99, bytes(16), 1, GroupEntry(99, bytes(16), 16, None))
    stranger = replace(stranger, signature=bytes(32))
    probe("unknown_sender", leader, encode_signed(stranger, TOY), now)

    # --- stale-epoch replays ------------------------------------------------
    leader, member, other, empty, keyed, reply2, now = build_pair()
    # advance the group one epoch via the leader's renewal
    out = leader.handle(TimerFired(TimerKind.RENEWAL),
                        leader.deadlines[TimerKind.RENEWAL])
    fresh = out.sends[0]
    member.handle(MessageArrived(fresh.wire), now)
    probe("stale_igroup_replay", member, keyed.wire, now + 1000)
    probe("stale_ireply_replay", leader, reply2.wire, now + 2000)

    # --- stale DEL replay ----------------------------------------------------
    leader, member, other, empty, keyed, reply2, now = build_pair()
    del_msg = sign(build_del(2, member.contribution.nonce, member.seq + 1),
                   RING, TOY)
    del_wire = encode_signed(del_msg, TOY)
    leader.handle(MessageArrived(del_wire), now)  # genuine withdrawal
    probe("del_replay", leader, del_wire, now + 1000)

    # --- wrong-nonce and wrong-value echoes (validly signed) -----------------
    leader, member, other, empty, keyed, reply2, now = build_pair()
    entries = list(keyed.message.entries)
    index = next(i for i, e in enumerate(entries) if e.participant_id == 2)
    bad_nonce = entries.copy()
    bad_nonce[index] = replace(entries[index], nonce=bytes(16))
    wrong_nonce = sign(build_igroup(1, keyed.message.sender_nonce,
                                    keyed.message.epoch + 1, bad_nonce),
                       RING, TOY)
    probe("wrong_nonce_echo", member, encode_signed(wrong_nonce, TOY), now)

    bad_value = entries.copy()
    substitute = 9 if entries[index].blinded_secret != 9 else 13
    bad_value[index] = replace(entries[index], blinded_secret=substitute)
    wrong_value = sign(build_igroup(1, keyed.message.sender_nonce,
                                    keyed.message.epoch + 1, bad_value),
                       RING, TOY)
    probe("wrong_blinded_echo", member, encode_signed(wrong_value, TOY), now)

    # --- structurally broken wires -------------------------------------------
    probe("truncated", member, keyed.wire[: len(keyed.wire) // 2], now)
    probe("unknown_kind", member, b"\x09" + keyed.wire[1:], now)

    return outcomes
