"""The eight protocol message kinds with canonical encoding and signatures.

Wire layout (big-endian throughout), signature excluded:

    [kind:1][sender_id:4][sender_nonce:16][epoch:8][entry_count:2][entries...]

and each entry:

    [id:4][nonce:16][has_response:1][blinded_secret:W][blinded_response:W]

where W is the parameter set's element width and the response field is
present only when has_response is 1.  The signed wire form appends
[sig_len:2][signature].  The encoding is injective over valid messages, so
signing the canonical bytes covers every field.

The ``epoch`` field carries the group key epoch on leader announcements and a
per-sender monotone send counter on member messages; either way a stale value
is detectable and replays can be rejected.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, replace
from enum import IntEnum

from .errors import MalformedMessage, ShapeViolation, UnknownParticipant
from .gka_core import NONCE_LEN
from .group_arith import GroupElement, GroupParams, decode_element, encode_element


class MessageKind(IntEnum):
    INIT = 0x01
    IREPLY = 0x02
    IGROUP = 0x03
    JOIN = 0x04
    JREPLY = 0x05
    JGROUP = 0x06
    DEL = 0x07
    DGROUP = 0x08


#: Leader announcements: carry the group composition, entries hold responses.
ANNOUNCEMENT_KINDS = frozenset(
    {MessageKind.INIT, MessageKind.IGROUP, MessageKind.JGROUP, MessageKind.DGROUP}
)
#: A single contribution travelling toward a leader.
CONTRIBUTION_KINDS = frozenset({MessageKind.IREPLY, MessageKind.JOIN})

_HEADER_LEN = 1 + 4 + 16 + 8 + 2
_MAX_ID = 2**32 - 1
_MAX_EPOCH = 2**64 - 1


@dataclass(frozen=True)
class GroupEntry:
    """One member's tuple inside a message: id, nonce, blinded secret, and,
    in announcements, the leader's blinded response."""

    participant_id: int
    nonce: bytes
    blinded_secret: GroupElement
    blinded_response: GroupElement | None = None


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender_id: int
    sender_nonce: bytes
    epoch: int
    entries: tuple[GroupEntry, ...] = ()
    signature: bytes = b""


class HmacKeyRing:
    """Per-participant long-term keys with signature create/verify.

    The default scheme is HMAC-SHA256 over the canonical bytes with one
    symmetric key per node: deterministic and fast, which is what protocol
    logic testing needs.  Any object with the same ``sign``/``verify``
    surface (e.g. a real asymmetric scheme) can replace it.
    """

    def __init__(self, keys: dict[int, bytes]):
        self._keys = dict(keys)

    @classmethod
    def provision(cls, ids, master: bytes | str = b"agdh-test-keyring") -> "HmacKeyRing":
        """Derive one long-term key per participant id from a master seed."""
        if isinstance(master, str):
            master = master.encode()
        keys = {
            pid: hashlib.sha256(master + b"/" + pid.to_bytes(4, "big")).digest()
            for pid in ids
        }
        return cls(keys)

    def known(self, participant_id: int) -> bool:
        return participant_id in self._keys

    def sign(self, sender_id: int, data: bytes) -> bytes:
        key = self._keys.get(sender_id)
        if key is None:
            raise UnknownParticipant(f"no key provisioned for {sender_id}")
        return hmac.new(key, data, hashlib.sha256).digest()

    def verify(self, sender_id: int, data: bytes, signature: bytes) -> bool:
        key = self._keys.get(sender_id)
        if key is None:
            return False
        expected = hmac.new(key, data, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)


def _check_fields(msg: Message, params: GroupParams) -> None:
    if not 0 <= msg.sender_id <= _MAX_ID:
        raise ShapeViolation("sender_id")
    if len(msg.sender_nonce) != NONCE_LEN:
        raise ShapeViolation("sender_nonce")
    if not 0 <= msg.epoch <= _MAX_EPOCH:
        raise ShapeViolation("epoch")
    if len(msg.entries) > 0xFFFF:
        raise ShapeViolation("entries")
    for i, e in enumerate(msg.entries):
        if not 0 <= e.participant_id <= _MAX_ID:
            raise ShapeViolation(f"entries[{i}].participant_id")
        if len(e.nonce) != NONCE_LEN:
            raise ShapeViolation(f"entries[{i}].nonce")


def encode_canonical(msg: Message, params: GroupParams) -> bytes:
    """Deterministic signature-less encoding; injective over valid messages."""
    _check_fields(msg, params)
    out = bytearray()
    out.append(int(msg.kind))
    out += msg.sender_id.to_bytes(4, "big")
    out += msg.sender_nonce
    out += msg.epoch.to_bytes(8, "big")
    out += len(msg.entries).to_bytes(2, "big")
    for e in msg.entries:
        out += e.participant_id.to_bytes(4, "big")
        out += e.nonce
        out.append(1 if e.blinded_response is not None else 0)
        out += encode_element(e.blinded_secret, params)
        if e.blinded_response is not None:
            out += encode_element(e.blinded_response, params)
    return bytes(out)


def encode_signed(msg: Message, params: GroupParams) -> bytes:
    """Full wire form: canonical bytes, 2-byte signature length, signature."""
    if len(msg.signature) > 0xFFFF:
        raise ShapeViolation("signature")
    return (encode_canonical(msg, params)
            + len(msg.signature).to_bytes(2, "big")
            + msg.signature)


def decode(data: bytes, params: GroupParams) -> Message:
    """Parse a signed wire message; validates lengths, kinds, and subgroup
    membership of every element.  Raises MalformedMessage on any defect."""
    view = memoryview(data)
    if len(view) < _HEADER_LEN:
        raise MalformedMessage("truncated header")
    try:
        kind = MessageKind(view[0])
    except ValueError:
        raise MalformedMessage(f"unknown kind byte {view[0]:#04x}") from None
    sender_id = int.from_bytes(view[1:5], "big")
    sender_nonce = bytes(view[5:21])
    epoch = int.from_bytes(view[21:29], "big")
    count = int.from_bytes(view[29:31], "big")
    width = params.element_width
    pos = _HEADER_LEN
    entries = []
    for _ in range(count):
        if len(view) < pos + 4 + NONCE_LEN + 1:
            raise MalformedMessage("truncated entry")
        pid = int.from_bytes(view[pos:pos + 4], "big")
        pos += 4
        nonce = bytes(view[pos:pos + NONCE_LEN])
        pos += NONCE_LEN
        has_response = view[pos]
        pos += 1
        if has_response not in (0, 1):
            raise MalformedMessage("bad has_response flag")
        need = width * (1 + has_response)
        if len(view) < pos + need:
            raise MalformedMessage("truncated entry elements")
        try:
            blinded = decode_element(bytes(view[pos:pos + width]), params)
            pos += width
            response = None
            if has_response:
                response = decode_element(bytes(view[pos:pos + width]), params)
                pos += width
        except Exception as exc:
            raise MalformedMessage(f"bad group element: {exc}") from None
        entries.append(GroupEntry(pid, nonce, blinded, response))
    if len(view) < pos + 2:
        raise MalformedMessage("truncated signature length")
    sig_len = int.from_bytes(view[pos:pos + 2], "big")
    pos += 2
    if len(view) != pos + sig_len:
        raise MalformedMessage("signature length mismatch")
    signature = bytes(view[pos:pos + sig_len])
    return Message(kind, sender_id, sender_nonce, epoch, tuple(entries), signature)


def sign(msg: Message, keyring, params: GroupParams) -> Message:
    """Return the message with its signature over the canonical bytes."""
    signature = keyring.sign(msg.sender_id, encode_canonical(msg, params))
    return replace(msg, signature=signature)


def verify(msg: Message, keyring, params: GroupParams) -> bool:
    """True iff the signature verifies under the claimed sender's key."""
    try:
        canonical = encode_canonical(msg, params)
    except ShapeViolation:
        return False
    return keyring.verify(msg.sender_id, canonical, msg.signature)


def validate_shape(msg: Message) -> Message:
    """Enforce the per-kind entry grammar; raises ShapeViolation."""
    kind = msg.kind
    if kind in (MessageKind.INIT, MessageKind.DEL):
        if msg.entries:
            raise ShapeViolation(f"{kind.name}.entries: must be empty")
    elif kind in CONTRIBUTION_KINDS:
        if len(msg.entries) != 1:
            raise ShapeViolation(f"{kind.name}.entries: exactly one expected")
        entry = msg.entries[0]
        if entry.blinded_response is not None:
            raise ShapeViolation(f"{kind.name}.entries[0].blinded_response")
        if entry.participant_id != msg.sender_id:
            raise ShapeViolation(f"{kind.name}.entries[0].participant_id")
    elif kind == MessageKind.JREPLY:
        for i, e in enumerate(msg.entries):
            if e.blinded_response is not None:
                raise ShapeViolation(f"JREPLY.entries[{i}].blinded_response")
    else:  # IGROUP, JGROUP, DGROUP
        seen: set[int] = set()
        for i, e in enumerate(msg.entries):
            if e.blinded_response is None:
                raise ShapeViolation(f"{kind.name}.entries[{i}].blinded_response")
            if e.participant_id == msg.sender_id:
                raise ShapeViolation(f"{kind.name}.entries[{i}].participant_id")
            if e.participant_id in seen:
                raise ShapeViolation(f"{kind.name}.entries[{i}]: duplicate id")
            seen.add(e.participant_id)
    return msg


def _build(kind: MessageKind, sender_id: int, sender_nonce: bytes, epoch: int,
           entries=()) -> Message:
    return validate_shape(
        Message(kind, sender_id, sender_nonce, epoch, tuple(entries))
    )


def build_init(sender_id: int, sender_nonce: bytes, epoch: int) -> Message:
    return _build(MessageKind.INIT, sender_id, sender_nonce, epoch)


def build_ireply(sender_id: int, sender_nonce: bytes, seq: int,
                 entry: GroupEntry) -> Message:
    return _build(MessageKind.IREPLY, sender_id, sender_nonce, seq, [entry])


def build_igroup(leader_id: int, leader_nonce: bytes, epoch: int,
                 entries) -> Message:
    return _build(MessageKind.IGROUP, leader_id, leader_nonce, epoch, entries)


def build_join(sender_id: int, sender_nonce: bytes, seq: int,
               entry: GroupEntry) -> Message:
    return _build(MessageKind.JOIN, sender_id, sender_nonce, seq, [entry])


def build_jreply(leader_id: int, leader_nonce: bytes, seq: int,
                 entries) -> Message:
    return _build(MessageKind.JREPLY, leader_id, leader_nonce, seq, entries)


def build_jgroup(leader_id: int, leader_nonce: bytes, epoch: int,
                 entries) -> Message:
    return _build(MessageKind.JGROUP, leader_id, leader_nonce, epoch, entries)


def build_del(sender_id: int, sender_nonce: bytes, seq: int) -> Message:
    return _build(MessageKind.DEL, sender_id, sender_nonce, seq)


def build_dgroup(leader_id: int, leader_nonce: bytes, epoch: int,
                 entries) -> Message:
    return _build(MessageKind.DGROUP, leader_id, leader_nonce, epoch, entries)
