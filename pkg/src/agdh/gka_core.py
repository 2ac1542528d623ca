"""Key-agreement mathematics: blinding, leader responses, recovery, and the
group key itself.

The scheme is asymmetric: each member pays two exponentiations (blind its
secret, recover the leader's blind), while the leader pays one per member
plus one for its own blind.  The shared key is

    key = g^(r_l) * prod(g^(r_i * r_l))  =  g^(r_l * (1 + sum(r_i)))

where r_l is the leader secret and r_i the member secrets.  ``oracle_key``
computes the right-hand side directly in the exponent and exists purely as an
independent check; the protocol paths never call it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import DegenerateKey, DuplicateParticipant, NotInSubgroup, ZeroScalar
from .group_arith import (
    ExpCounter,
    GroupElement,
    GroupParams,
    Scalar,
    encode_element,
    exp,
    is_element,
    mul,
    scalar_inverse,
)

NONCE_LEN = 16
DERIVED_KEY_LEN = 32


@dataclass(frozen=True)
class Contribution:
    """One participant's public share: identity, nonce, and blinded secret."""

    participant_id: int
    nonce: bytes
    blinded_secret: GroupElement


@dataclass(frozen=True)
class BlindedResponse:
    """The leader's reply for one member: its blinded secret raised to r_l."""

    participant_id: int
    response: GroupElement


@dataclass(frozen=True)
class SessionKey:
    """An established group key plus the symmetric key derived from it."""

    group_key: GroupElement
    epoch: int
    derived: bytes


def _check_secret(secret: Scalar, params: GroupParams) -> None:
    if not 1 <= secret <= params.order - 1:
        raise ZeroScalar(f"secret must lie in [1, q-1], got {secret}")


def blind(secret: Scalar, params: GroupParams,
          counter: ExpCounter | None = None) -> GroupElement:
    """g^secret; the public contribution hiding the secret."""
    _check_secret(secret, params)
    return exp(params.generator, secret, params, counter)


def respond(blinded_secret: GroupElement, leader_secret: Scalar,
            params: GroupParams, counter: ExpCounter | None = None) -> GroupElement:
    """Leader side: raise a member's blinded secret to the leader secret."""
    if not is_element(blinded_secret, params):
        raise NotInSubgroup(f"blinded secret {blinded_secret} not in subgroup")
    _check_secret(leader_secret, params)
    return exp(blinded_secret, leader_secret, params, counter)


def recover_leader_blind(response: GroupElement, own_secret: Scalar,
                         params: GroupParams,
                         counter: ExpCounter | None = None) -> GroupElement:
    """Member side: strip the own secret off the blinded response.

    (g^(r_i * r_l))^(r_i^-1) = g^(r_l).  One exponentiation plus one scalar
    inversion.
    """
    if not is_element(response, params):
        raise NotInSubgroup(f"response {response} not in subgroup")
    _check_secret(own_secret, params)
    return exp(response, scalar_inverse(own_secret, params), params, counter)


def _reject_duplicates(ids: list[int]) -> None:
    if len(set(ids)) != len(ids):
        seen: set[int] = set()
        for pid in ids:
            if pid in seen:
                raise DuplicateParticipant(f"participant {pid} appears twice")
            seen.add(pid)


def compute_key_member(leader_blind: GroupElement,
                       all_responses: list[BlindedResponse],
                       params: GroupParams) -> GroupElement:
    """Member side: multiply the recovered leader blind with every response.

    Multiplications only; with an empty response list the key is the leader
    blind itself (singleton group).
    """
    _reject_duplicates([r.participant_id for r in all_responses])
    key = leader_blind
    for r in all_responses:
        key = mul(key, r.response, params)
    return key


def compute_key_leader(leader_secret: Scalar,
                       contributions: list[Contribution],
                       params: GroupParams,
                       counter: ExpCounter | None = None,
                       ) -> tuple[GroupElement, list[BlindedResponse]]:
    """Leader side: respond to every contribution and fold the key.

    Costs exactly len(contributions) + 1 exponentiations (one per member plus
    the leader's own blind).  Raises DegenerateKey if the folded key is the
    identity element, which happens exactly when 1 + sum(r_i) = 0 mod q; the
    caller must drop a contribution and retry rather than ship an identity
    key.
    """
    _reject_duplicates([c.participant_id for c in contributions])
    leader_blind = blind(leader_secret, params, counter)
    responses = [
        BlindedResponse(c.participant_id,
                        respond(c.blinded_secret, leader_secret, params, counter))
        for c in contributions
    ]
    key = compute_key_member(leader_blind, responses, params)
    if key == 1:
        raise DegenerateKey("group key folded to the identity element")
    return key, responses


def oracle_key(leader_secret: Scalar, member_secrets: list[Scalar],
               params: GroupParams) -> GroupElement:
    """Reference computation in the exponent: g^(r_l * (1 + sum r_i)).

    Independent path used only by tests and the transcript auditor.
    """
    _check_secret(leader_secret, params)
    for s in member_secrets:
        _check_secret(s, params)
    exponent = leader_secret * (1 + sum(member_secrets)) % params.order
    return pow(params.generator, exponent, params.modulus)


def derive_session_key(key: GroupElement, epoch: int, params: GroupParams) -> bytes:
    """32-byte symmetric key: SHA-256 over encoded key element and epoch."""
    if key == 1:
        raise DegenerateKey("refusing to derive from the identity element")
    material = encode_element(key, params) + epoch.to_bytes(8, "big")
    return hashlib.sha256(material).digest()


@dataclass
class LeaderBatch:
    """Incremental leader-side key computation.

    Responses are produced as contributions arrive, so when the group
    announcement must go out no exponentiation remains: finalize is one
    multiplication (the pre-computed leader blind times the running product).
    """

    params: GroupParams
    leader_secret: Scalar
    leader_blind: GroupElement
    responses: list[BlindedResponse] = field(default_factory=list)
    running_product: GroupElement = 1
    _absorbed: set[int] = field(default_factory=set)


def batch_new(leader_secret: Scalar, params: GroupParams,
              counter: ExpCounter | None = None) -> LeaderBatch:
    """Start a batch; performs the leader's own blinding up front."""
    return LeaderBatch(
        params=params,
        leader_secret=leader_secret,
        leader_blind=blind(leader_secret, params, counter),
    )


def batch_absorb(batch: LeaderBatch, contribution: Contribution,
                 counter: ExpCounter | None = None) -> LeaderBatch:
    """Fold one contribution into the batch (one exponentiation, now)."""
    if contribution.participant_id in batch._absorbed:
        raise DuplicateParticipant(
            f"participant {contribution.participant_id} already absorbed"
        )
    response = respond(contribution.blinded_secret, batch.leader_secret,
                       batch.params, counter)
    batch._absorbed.add(contribution.participant_id)
    batch.responses.append(BlindedResponse(contribution.participant_id, response))
    batch.running_product = mul(batch.running_product, response, batch.params)
    return batch


def batch_finalize(batch: LeaderBatch) -> tuple[GroupElement, list[BlindedResponse]]:
    """Produce the key and response list; zero exponentiations left here."""
    key = mul(batch.leader_blind, batch.running_product, batch.params)
    if key == 1:
        raise DegenerateKey("group key folded to the identity element")
    return key, list(batch.responses)
