"""Private set union: two rounds of commutative exponentiation, then private hashing.

Each party runs ``run_psu`` with its own role; the two calls talk only
through a transport. The result is a sorted list of shared UIDs and, for
each party, the map from its own ids to UIDs. Neither side learns which of
its ids are in the intersection.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

from ..errors import CollisionError, ConsistencyError, ProtocolError
from .group import GroupParams, encode, exp_all, hash_to_group, random_exponent, shuffled
from .wire import Tag, decode_elements, encode_elements


@dataclass(frozen=True)
class PartySecrets:
    e1: int
    e2: int
    e3: int

    @classmethod
    def draw(cls, params: GroupParams, rng=None) -> "PartySecrets":
        return cls(*(random_exponent(params, rng) for _ in range(3)))

    def check(self, params: GroupParams):
        for e in (self.e1, self.e2, self.e3):
            if not 1 <= e <= params.q - 1:
                raise ValueError("exponents must lie in [1, q-1]")


@dataclass
class UidMap:
    uids: list  # sorted canonical encodings
    mapping: dict  # own id -> uid bytes

    def __len__(self):
        return len(self.uids)

    def position(self) -> dict:
        return {u: i for i, u in enumerate(self.uids)}


@dataclass
class Transcript:
    """Every message a party received, in order, as ``(tag name, elements)``."""

    received: list = field(default_factory=list)
    sent: list = field(default_factory=list)

    def messages(self, tag: Tag) -> list:
        return [els for name, els in self.received if name == tag.name]


class _Channel:
    def __init__(self, transport, params: GroupParams, transcript: Transcript | None):
        self.t, self.params, self.log = transport, params, transcript

    def send(self, tag: Tag, elements):
        if self.log is not None:
            self.log.sent.append((tag.name, list(elements)))
        self.t.send(tag, encode_elements(elements, self.params.width))

    def recv(self, expected: Tag):
        tag, payload = self.t.recv()
        if tag != expected:
            raise ProtocolError(f"expected {expected.name}, got {tag.name}")
        els = decode_elements(payload, self.params.width)
        if self.log is not None:
            self.log.received.append((tag.name, els))
        return els


def _hash_ids(own_ids, params: GroupParams, allow_collisions: bool):
    ids = list(own_ids)
    if not ids:
        raise ValueError("own id set is empty")
    if len(set(ids)) != len(ids):
        raise ValueError("own ids must be distinct")
    hashed = [hash_to_group(str(x) if not isinstance(x, bytes) else x, params) for x in ids]
    if not allow_collisions and len(set(hashed)) != len(hashed):
        raise CollisionError("distinct ids hash to the same group element")
    return ids, hashed


def run_psu(
    role: str,
    own_ids,
    params: GroupParams,
    transport,
    rng=None,
    *,
    secrets: PartySecrets | None = None,
    transcript: Transcript | None = None,
    allow_collisions: bool = False,
) -> UidMap:
    """Run one side of the protocol. ``role`` is ``"active"`` or ``"passive"``.

    ``rng`` (numpy Generator) drives exponents and shuffles; ``None`` uses the
    OS CSPRNG. ``allow_collisions`` lets tiny test groups proceed when two
    of the party's ids hash to the same element (they then share a UID).
    """
    if role not in ("active", "passive"):
        raise ValueError("role must be 'active' or 'passive'")
    ids, X = _hash_ids(own_ids, params, allow_collisions)
    sec = secrets or PartySecrets.draw(params, rng)
    sec.check(params)
    q, p = params.q, params.p
    ch = _Channel(transport, params, transcript)
    e23 = sec.e2 * sec.e3 % q

    if role == "active":
        ch.send(Tag.ROUND_1A, shuffled(exp_all(X, sec.e1, params), rng))
        a_s1t1 = ch.recv(Tag.ROUND_1B)
        p_t1 = ch.recv(Tag.ROUND_1C)
        if len(a_s1t1) != len(X):
            raise ConsistencyError("round 1b size differs from own set size")
        p_s1t1 = exp_all(p_t1, sec.e1, params)
        ch.send(Tag.ROUND_1D, shuffled(p_s1t1, rng))
        union = list(dict.fromkeys(a_s1t1 + p_s1t1))  # dedupe: the intersection appears twice
        ch.send(Tag.ROUND_2A, shuffled(exp_all(union, e23, params), rng))
        final = ch.recv(Tag.ROUND_2B)
        expected_size = len(union)
    else:
        a_s1 = ch.recv(Tag.ROUND_1A)
        ch.send(Tag.ROUND_1B, shuffled(exp_all(a_s1, sec.e1, params), rng))
        ch.send(Tag.ROUND_1C, shuffled(exp_all(X, sec.e1, params), rng))
        p_s1t1 = ch.recv(Tag.ROUND_1D)
        if len(p_s1t1) != len(X):
            raise ConsistencyError("round 1d size differs from own set size")
        u_s = ch.recv(Tag.ROUND_2A)
        final = shuffled(exp_all(u_s, e23, params), rng)
        ch.send(Tag.ROUND_2B, final)
        expected_size = len(u_s)

    uids = sorted(encode(x, params) for x in final)
    if len(set(uids)) != len(uids) or len(uids) != expected_size:
        raise ConsistencyError("final union has duplicates or the wrong size")
    uid_set = set(uids)

    def finish_own(req_tag, resp_tag, first_exp, last_exp):
        order = list(range(len(X)))
        if rng is not None:
            order = [int(i) for i in rng.permutation(len(X))]
        ch.send(req_tag, exp_all([X[i] for i in order], first_exp, params))
        resp = ch.recv(resp_tag)
        if len(resp) != len(order):
            raise ConsistencyError("private-hash response has the wrong length")
        mapping = {}
        for i, z in zip(order, exp_all(resp, last_exp, params)):
            uid = encode(z, params)
            if uid not in uid_set:
                raise ConsistencyError("private hash does not land in the union")
            mapping[ids[i]] = uid
        if not allow_collisions and len(set(mapping.values())) != len(mapping):
            raise CollisionError("two own ids received the same uid")
        return mapping

    def serve_peer(req_tag, resp_tag, exponent):
        req = ch.recv(req_tag)
        ch.send(resp_tag, exp_all(req, exponent, params))

    if role == "active":
        mapping = finish_own(Tag.HASH_REQ_A, Tag.HASH_RESP_A, sec.e2, sec.e1 * sec.e3 % q)
        serve_peer(Tag.HASH_REQ_P, Tag.HASH_RESP_P, sec.e1 * sec.e2 % q * sec.e3 % q)
        ch.send(Tag.DONE, [])
        ch.recv(Tag.DONE)
    else:
        serve_peer(Tag.HASH_REQ_A, Tag.HASH_RESP_A, sec.e1 * sec.e2 % q * sec.e3 % q)
        mapping = finish_own(Tag.HASH_REQ_P, Tag.HASH_RESP_P, sec.e2, sec.e1 * sec.e3 % q)
        ch.recv(Tag.DONE)
        ch.send(Tag.DONE, [])
    return UidMap(uids, mapping)


@dataclass
class PairRun:
    active: UidMap
    passive: UidMap
    transcript_active: Transcript
    transcript_passive: Transcript
    secrets_active: PartySecrets
    secrets_passive: PartySecrets


def run_pair(
    ids_active,
    ids_passive,
    params: GroupParams,
    rng_active=None,
    rng_passive=None,
    transports=None,
    allow_collisions: bool = False,
) -> PairRun:
    """Run both roles in two threads over a transport pair (in-process by default)."""
    from ..harness.transport import InProcessTransport

    t_a, t_p = transports or InProcessTransport.pair()
    sec_a = PartySecrets.draw(params, rng_active)
    sec_p = PartySecrets.draw(params, rng_passive)
    log_a, log_p = Transcript(), Transcript()
    out, errors = {}, []

    def side(role, ids, t, rng, sec, log):
        try:
            out[role] = run_psu(role, ids, params, t, rng, secrets=sec, transcript=log, allow_collisions=allow_collisions)
        except BaseException as err:  # surfaced in the caller's thread
            errors.append(err)
            t.close()

    th = threading.Thread(target=side, args=("passive", ids_passive, t_p, rng_passive, sec_p, log_p), daemon=True)
    th.start()
    side("active", ids_active, t_a, rng_active, sec_a, log_a)
    th.join()
    if errors:
        raise errors[0]
    return PairRun(out["active"], out["passive"], log_a, log_p, sec_a, sec_p)


def transcript_capture(run: PairRun) -> dict:
    """Per-party ordered logs of received messages."""
    return {"active": run.transcript_active.received, "passive": run.transcript_passive.received}


def pad_with_dummies(ids, k: int, rng=None) -> list:
    """Append ``k`` random dummy ids (optional size-hiding pre-step)."""
    import secrets as _secrets

    draw = (lambda: rng.bytes(16).hex()) if rng is not None else (lambda: _secrets.token_hex(16))
    return list(ids) + [f"dummy-{draw()}" for _ in range(k)]
