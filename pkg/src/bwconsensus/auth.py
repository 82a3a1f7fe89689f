"""Signed messages, certificates and the per-process filtering daemon.

Signatures come from a simulation-perfect backend: every process holds an
HMAC key derived from a per-run secret and only ever gets a :class:`Signer`
bound to its own id, so there is no API through which one process can produce
a signature that verifies for another.

Certificate rules (what each message must carry to be accepted):

========================  ==================================================
message                   certificate
========================  ==================================================
INIT(v)                   none
QUERY(1, est)             InitQuorum of n-t INITs; est is the value seen
                          >= n-2t times, or (if none) the sender's own INIT
                          attached as a nested ChainedEstimate
QUERY(r>1, est)           Filt2Quorum of n-t FILT2(r-1); est is its unique
                          non-bottom value, or (all bottom) the sender's own
                          QUERY(r-1, est) attached as a nested ChainedEstimate
RESPONSE(r, v), coord.    ChainedEstimate holding the adopted QUERY(r, v)
RESPONSE(r, v), other     none (value is never read)
RELAY(r, v)               CoordResponse holding the coordinator's RESPONSE(r, v)
RELAY(r, bottom)          ResponseQuorum of n-t RESPONSE(r, *)
FILT1(r, x)               RelayQuorum of n-t RELAY(r); x = single non-bottom
                          value if there is exactly one, else bottom
FILT2(r, x)               Filt1Quorum of n-t FILT1(r); x = v if unanimous v
DEC(r, v)                 DecQuorum of n-t FILT2(r) all carrying v
========================  ==================================================
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Optional

from .model import BOTTOM, SystemParams, Value, coordinator_of

PHASE3_FILTER = "phase3-filter"
MUTATIONS = frozenset({PHASE3_FILTER})


class MsgKind(enum.IntEnum):
    INIT = 1
    QUERY = 2
    RESPONSE = 3
    RELAY = 4
    FILT1 = 5
    FILT2 = 6
    DEC = 7


class CertKind(enum.IntEnum):
    InitQuorum = 1
    CoordResponse = 2
    ResponseQuorum = 3
    RelayQuorum = 4
    Filt1Quorum = 5
    Filt2Quorum = 6
    DecQuorum = 7
    ChainedEstimate = 8


# evidence kind and arity per certificate kind; None arity means n - t
_EVIDENCE_SHAPE: dict[CertKind, tuple[tuple[MsgKind, ...], Optional[int]]] = {
    CertKind.InitQuorum: ((MsgKind.INIT,), None),
    CertKind.CoordResponse: ((MsgKind.RESPONSE,), 1),
    CertKind.ResponseQuorum: ((MsgKind.RESPONSE,), None),
    CertKind.RelayQuorum: ((MsgKind.RELAY,), None),
    CertKind.Filt1Quorum: ((MsgKind.FILT1,), None),
    CertKind.Filt2Quorum: ((MsgKind.FILT2,), None),
    CertKind.DecQuorum: ((MsgKind.FILT2,), None),
    CertKind.ChainedEstimate: ((MsgKind.INIT, MsgKind.QUERY), 1),
}

_NO_CERT = bytes(32)
_BOTTOM_LEN = 0xFFFFFFFF


class MalformedEvidence(ValueError):
    pass


class Reject(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class Check:
    """Outcome of a validation: truthy on accept, otherwise carries a reason."""

    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.reason is None


ACCEPT = Check()


def encode_value(value: Value) -> bytes:
    if value is None:
        return struct.pack(">I", _BOTTOM_LEN)
    return struct.pack(">I", len(value)) + value


@dataclass(frozen=True, eq=False)
class Certificate:
    kind: CertKind
    evidence: tuple["SignedMessage", ...]
    nested: Optional["Certificate"] = None
    digest: bytes = field(init=False, repr=False)

    def __post_init__(self) -> None:
        h = hashlib.sha256()
        h.update(struct.pack(">BI", self.kind, len(self.evidence)))
        for msg in self.evidence:
            h.update(msg.mid)
        h.update(self.nested.digest if self.nested is not None else _NO_CERT)
        object.__setattr__(self, "digest", h.digest())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Certificate) and other.digest == self.digest

    def __hash__(self) -> int:
        return hash(self.digest)

    def __deepcopy__(self, memo):
        return self

    def values(self) -> list[Value]:
        return [m.value for m in self.evidence]


def canonical_body(kind: MsgKind, round_: int, sender: int, value: Value,
                   cert: Optional[Certificate]) -> bytes:
    return (
        struct.pack(">BII", kind, round_, sender)
        + encode_value(value)
        + (cert.digest if cert is not None else _NO_CERT)
    )


@dataclass(frozen=True, eq=False)
class SignedMessage:
    kind: MsgKind
    round: int
    sender: int
    value: Value
    cert: Optional[Certificate]
    signature: bytes
    body: bytes = field(init=False, repr=False)
    mid: bytes = field(init=False, repr=False)

    def __post_init__(self) -> None:
        body = canonical_body(self.kind, self.round, self.sender, self.value, self.cert)
        object.__setattr__(self, "body", body)
        object.__setattr__(self, "mid", hashlib.sha256(body + self.signature).digest())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SignedMessage) and other.mid == self.mid

    def __hash__(self) -> int:
        return hash(self.mid)

    def __deepcopy__(self, memo):
        return self

    @property
    def digest(self) -> str:
        return self.mid.hex()[:16]

    def __str__(self) -> str:
        from .model import format_value

        return f"{self.kind.name}(r={self.round}, p{self.sender}, {format_value(self.value)})"


def value_digest(value: Value) -> str:
    if value is None:
        return "BOTTOM"
    return hashlib.sha256(b"V" + value).hexdigest()[:16]


class KeyRing:
    """Holds every process's signing key; hands out one :class:`Signer` per id."""

    def __init__(self, n: int, secret: bytes = b"bwconsensus"):
        self.n = n
        self._keys = {
            pid: hashlib.sha256(secret + struct.pack(">I", pid)).digest()
            for pid in range(1, n + 1)
        }

    def signer(self, pid: int) -> "Signer":
        return Signer(pid, self._keys[pid])

    def verify(self, msg: SignedMessage) -> bool:
        key = self._keys.get(msg.sender)
        if key is None or not isinstance(msg.signature, bytes):
            return False
        expected = hmac.new(key, msg.body, hashlib.sha256).digest()
        return hmac.compare_digest(expected, msg.signature)


class Signer:
    __slots__ = ("pid", "_key")

    def __init__(self, pid: int, key: bytes):
        self.pid = pid
        self._key = key

    def __deepcopy__(self, memo):
        return self

    def sign(self, kind: MsgKind, round_: int, value: Value,
             cert: Optional[Certificate] = None) -> SignedMessage:
        body = canonical_body(kind, round_, self.pid, value, cert)
        signature = hmac.new(self._key, body, hashlib.sha256).digest()
        return SignedMessage(kind, round_, self.pid, value, cert, signature)


def phase2_value(values: Iterable[Value]) -> Value:
    """Single non-bottom value if there is exactly one, else bottom."""
    non_bottom = {v for v in values if v is not None}
    if len(non_bottom) == 1:
        return next(iter(non_bottom))
    return BOTTOM


def phase3_value(values: Iterable[Value]) -> Value:
    """``v`` when every value equals ``v``, else bottom."""
    distinct = set(values)
    if len(distinct) == 1:
        return next(iter(distinct))
    return BOTTOM


def init_value(values: Sequence[Value], threshold: int) -> Optional[bytes]:
    """The value occurring at least ``threshold`` times, if any."""
    if not values:
        return None
    # with n > 3t at most one value can reach n - 2t inside n - t samples
    value, count = Counter(values).most_common(1)[0]
    if count >= threshold and value is not None:
        return value
    return None


class Validator:
    """Stateless certificate rules plus a verdict cache keyed by message id.

    One validator may be shared by every process of a run: validity of a
    message does not depend on who receives it.
    """

    def __init__(self, params: SystemParams, keyring: KeyRing,
                 mutations: Iterable[str] = ()):
        self.params = params
        self.keyring = keyring
        self.mutations = frozenset(mutations)
        unknown = self.mutations - MUTATIONS
        if unknown:
            raise ValueError(f"unknown mutations: {sorted(unknown)}")
        self._cache: dict[bytes, Optional[str]] = {}

    def verify(self, msg: SignedMessage) -> bool:
        return self.keyring.verify(msg)

    def filt2_rule(self, values: Iterable[Value]) -> Value:
        if PHASE3_FILTER in self.mutations:
            return phase2_value(values)
        return phase3_value(values)

    def build_certificate(self, kind: CertKind, evidence: Iterable[SignedMessage],
                          nested: Optional[Certificate] = None) -> Certificate:
        """Assemble a certificate with evidence in canonical (sender) order."""
        ordered = tuple(sorted(evidence, key=lambda m: (m.sender, m.mid)))
        try:
            self._check_shape(kind, ordered)
        except Reject as exc:
            raise MalformedEvidence(exc.reason) from None
        return Certificate(kind, ordered, nested)

    def validate_certificate(self, cert: Optional[Certificate], value: Value,
                             round_: int, kind: CertKind,
                             sender: Optional[int] = None) -> Check:
        """Accept iff ``cert`` (of ``kind``) certifies ``value`` for ``round_``.

        ``sender`` is the certified message's sender; it matters only for
        chained estimates, which must be the sender's own earlier message.
        """
        try:
            if cert is None:
                raise Reject("missing-certificate")
            if cert.kind != kind:
                raise Reject("wrong-kind")
            self._check_cert(cert, value, round_, sender)
        except Reject as exc:
            return Check(exc.reason)
        return ACCEPT

    def validate_message(self, msg: SignedMessage) -> Check:
        """Signature, syntax and certificate check of one message (cached)."""
        key = msg.mid
        if key in self._cache:
            reason = self._cache[key]
        else:
            try:
                self._check_message(msg)
                reason = None
            except Reject as exc:
                reason = exc.reason
            self._cache[key] = reason
        return ACCEPT if reason is None else Check(reason)

    # -- internals ---------------------------------------------------------

    def _check_shape(self, kind: CertKind, evidence: Sequence[SignedMessage]) -> None:
        kinds, arity = _EVIDENCE_SHAPE[kind]
        if arity is None:
            arity = self.params.quorum
        if len(evidence) != arity:
            raise Reject("wrong-arity")
        senders = set()
        rounds = set()
        for m in evidence:
            if not isinstance(m, SignedMessage) or m.kind not in kinds:
                raise Reject("wrong-phase")
            if m.sender in senders:
                raise Reject("duplicate-sender")
            senders.add(m.sender)
            rounds.add(m.round)
        if len(rounds) > 1:
            raise Reject("wrong-round")

    def _evidence_ok(self, cert: Certificate, round_: int) -> None:
        self._check_shape(cert.kind, cert.evidence)
        for m in cert.evidence:
            if m.round != round_:
                raise Reject("wrong-round")
            check = self.validate_message(m)
            if not check:
                raise Reject(check.reason)

    def _chained(self, nested: Optional[Certificate], kind: MsgKind, round_: int,
                 value: Value, sender: Optional[int]) -> None:
        if nested is None or nested.kind != CertKind.ChainedEstimate:
            raise Reject("missing-chain")
        self._check_shape(CertKind.ChainedEstimate, nested.evidence)
        prior = nested.evidence[0]
        if prior.kind != kind:
            raise Reject("wrong-phase")
        if prior.round != round_:
            raise Reject("wrong-round")
        if sender is not None and prior.sender != sender:
            raise Reject("chain-sender-mismatch")
        if prior.value != value:
            raise Reject("value-mismatch")
        check = self.validate_message(prior)
        if not check:
            raise Reject(check.reason)

    def _check_cert(self, cert: Certificate, value: Value, round_: int,
                    sender: Optional[int]) -> None:
        kind = cert.kind
        params = self.params
        if kind == CertKind.InitQuorum:
            if round_ != 1 or value is None:
                raise Reject("wrong-round" if round_ != 1 else "value-mismatch")
            self._evidence_ok(cert, 0)
            winner = init_value(cert.values(), params.init_threshold)
            if winner is not None:
                if value != winner or cert.nested is not None:
                    raise Reject("value-mismatch")
            else:
                self._chained(cert.nested, MsgKind.INIT, 0, value, sender)
        elif kind == CertKind.Filt2Quorum:
            if round_ < 2 or value is None:
                raise Reject("wrong-round" if round_ < 2 else "value-mismatch")
            self._evidence_ok(cert, round_ - 1)
            non_bottom = {v for v in cert.values() if v is not None}
            if len(non_bottom) == 1:
                if value not in non_bottom or cert.nested is not None:
                    raise Reject("value-mismatch")
            elif len(non_bottom) > 1:
                # only reachable when the phase-3 filter is mutated away
                if value not in non_bottom:
                    raise Reject("value-mismatch")
            else:
                self._chained(cert.nested, MsgKind.QUERY, round_ - 1, value, sender)
        elif kind == CertKind.ChainedEstimate:
            # coordinator RESPONSE: carries the QUERY it adopted
            self._check_shape(kind, cert.evidence)
            query = cert.evidence[0]
            if query.kind != MsgKind.QUERY:
                raise Reject("wrong-phase")
            if query.round != round_:
                raise Reject("wrong-round")
            if query.value != value or value is None:
                raise Reject("value-mismatch")
            check = self.validate_message(query)
            if not check:
                raise Reject(check.reason)
        elif kind == CertKind.CoordResponse:
            self._evidence_ok(cert, round_)
            resp = cert.evidence[0]
            if resp.sender != coordinator_of(round_, params):
                raise Reject("not-coordinator")
            if value is None or resp.value != value:
                raise Reject("value-mismatch")
        elif kind == CertKind.ResponseQuorum:
            self._evidence_ok(cert, round_)
            if value is not None:
                raise Reject("value-mismatch")
        elif kind == CertKind.RelayQuorum:
            self._evidence_ok(cert, round_)
            if value != phase2_value(cert.values()):
                raise Reject("value-mismatch")
        elif kind == CertKind.Filt1Quorum:
            self._evidence_ok(cert, round_)
            if value != self.filt2_rule(cert.values()):
                raise Reject("value-mismatch")
        elif kind == CertKind.DecQuorum:
            self._evidence_ok(cert, round_)
            if value is None or any(v != value for v in cert.values()):
                raise Reject("value-mismatch")
        else:  # pragma: no cover
            raise Reject("unknown-certificate")

    def _check_message(self, msg: SignedMessage) -> None:
        if not isinstance(msg, SignedMessage):
            raise Reject("malformed")
        if not isinstance(msg.kind, MsgKind) or not isinstance(msg.round, int):
            raise Reject("malformed")
        if msg.value is not None and not isinstance(msg.value, bytes):
            raise Reject("malformed")
        if not 1 <= msg.sender <= self.params.n:
            raise Reject("malformed")
        if not self.verify(msg):
            raise Reject("bad-signature")
        kind, r, value, cert = msg.kind, msg.round, msg.value, msg.cert
        if kind == MsgKind.INIT:
            if r != 0 or cert is not None or value is None:
                raise Reject("malformed")
            return
        if r < 1:
            raise Reject("malformed")
        if kind == MsgKind.QUERY:
            expected = CertKind.InitQuorum if r == 1 else CertKind.Filt2Quorum
        elif kind == MsgKind.RESPONSE:
            if msg.sender != coordinator_of(r, self.params):
                if cert is not None:
                    raise Reject("malformed")
                return
            expected = CertKind.ChainedEstimate
        elif kind == MsgKind.RELAY:
            expected = CertKind.ResponseQuorum if value is None else CertKind.CoordResponse
        elif kind == MsgKind.FILT1:
            expected = CertKind.RelayQuorum
        elif kind == MsgKind.FILT2:
            expected = CertKind.Filt1Quorum
        else:
            expected = CertKind.DecQuorum
        check = self.validate_certificate(cert, value, r, expected, msg.sender)
        if not check:
            raise Reject("bad-certificate" if check.reason in _CERT_CONTENT else check.reason)


# reasons describing certificate content rather than the message itself
_CERT_CONTENT = frozenset({
    "missing-certificate", "wrong-kind", "wrong-arity", "wrong-phase", "wrong-round",
    "value-mismatch", "duplicate-sender", "missing-chain", "chain-sender-mismatch",
    "not-coordinator",
})

# phase messages older than the receiver's round are useless to it
_ROUND_BOUND = frozenset({MsgKind.RESPONSE, MsgKind.RELAY, MsgKind.FILT1, MsgKind.FILT2})


class Daemon:
    """Per-process message filter sitting in front of the engine."""

    def __init__(self, validator: Validator):
        self.validator = validator
        self._seen: set[tuple[int, MsgKind, int]] = set()

    def filter(self, msg: SignedMessage, current_round: int = 0) -> Check:
        if not isinstance(msg, SignedMessage):
            return Check("malformed")
        if not self.validator.verify(msg):
            return Check("bad-signature")
        if msg.kind in _ROUND_BOUND and msg.round < current_round:
            return Check("stale-round")
        if msg.kind == MsgKind.RESPONSE and msg.round > current_round:
            # nobody correct answers a query that was not sent yet
            return Check("premature")
        key = (msg.sender, msg.kind, msg.round)
        if key in self._seen:
            return Check("duplicate")
        check = self.validator.validate_message(msg)
        if not check:
            return check
        self._seen.add(key)
        return ACCEPT

    def fingerprint(self) -> tuple:
        return tuple(sorted((s, int(k), r) for s, k, r in self._seen))

    def clone(self) -> "Daemon":
        twin = Daemon(self.validator)
        twin._seen = set(self._seen)
        return twin
