"""Per-process consensus automaton.

The engine is a deterministic step function: ``start`` and ``step(event)``
return the actions to perform (sends, timer operations, decision). It never
does I/O and never reads simulated time; timers are opaque handles.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .auth import (
    Certificate, CertKind, Check, Daemon, MsgKind, SignedMessage,
    Signer, Validator, init_value, phase2_value, phase3_value,
)
from .model import BOTTOM, SystemParams, Value, ValueSet, collect_values, coordinator_of


class Phase(enum.IntEnum):
    INIT_WAIT = 0
    PHASE1 = 1
    PHASE2 = 2
    PHASE3 = 3
    PHASE4 = 4
    DECIDED = 5
    HALTED = 6


# events

@dataclass(frozen=True)
class Start:
    value: bytes


@dataclass(frozen=True)
class MessageDelivery:
    message: SignedMessage


@dataclass(frozen=True)
class TimerExpiry:
    handle: int


Event = Union[Start, MessageDelivery, TimerExpiry]


# actions

@dataclass(frozen=True)
class Send:
    dest: Optional[int]  # None broadcasts to every process, self included
    message: SignedMessage
    extra_delay: float = 0.0


@dataclass(frozen=True)
class SetTimer:
    duration: float
    handle: int
    coordinator: int


@dataclass(frozen=True)
class DisableTimer:
    handle: int


@dataclass(frozen=True)
class Decide:
    value: bytes
    round: int


@dataclass(frozen=True)
class Halt:
    reason: str


Action = Union[Send, SetTimer, DisableTimer, Decide, Halt]


def resolve_init(collected: ValueSet, own_value: bytes, params: SystemParams) -> bytes:
    winner = init_value(collected.values(), params.init_threshold)
    return own_value if winner is None else winner


def resolve_phase2(collected: ValueSet) -> Value:
    return phase2_value(collected.values())


def resolve_phase3(collected: ValueSet) -> Value:
    return phase3_value(collected.values())


@dataclass
class EngineState:
    me: int
    params: SystemParams
    round: int = 0
    phase: Phase = Phase.INIT_WAIT
    initial: Optional[bytes] = None
    est: Optional[bytes] = None
    est_cert: Optional[Certificate] = None
    aux: Value = BOTTOM
    aux_cert: Optional[Certificate] = None
    delta: dict[int, float] = field(default_factory=dict)
    timer_fired: bool = False
    timer_active: bool = False
    c_est: dict[int, SignedMessage] = field(default_factory=dict)
    decided: Optional[bytes] = None
    decision_round: Optional[int] = None
    own_init: Optional[SignedMessage] = None
    last_query: Optional[SignedMessage] = None
    collected: Optional[ValueSet] = None
    inbox: dict[tuple[MsgKind, int], dict[int, SignedMessage]] = field(default_factory=dict)

    def responses(self, round_: int) -> dict[int, SignedMessage]:
        return self.inbox.get((MsgKind.RESPONSE, round_), {})


_PRUNABLE = (MsgKind.RESPONSE, MsgKind.RELAY, MsgKind.FILT1, MsgKind.FILT2)


class Engine:
    """One correct process running the protocol."""

    def __init__(self, me: int, params: SystemParams, signer: Signer,
                 validator: Validator, max_rounds: Optional[int] = None):
        if signer.pid != me:
            raise ValueError("signer bound to another process")
        self.state = EngineState(me, params, delta={p: 1 for p in params.processes})
        self.signer = signer
        self.validator = validator
        self.daemon = Daemon(validator)
        self.max_rounds = max_rounds

    @property
    def me(self) -> int:
        return self.state.me

    @property
    def params(self) -> SystemParams:
        return self.state.params

    def start(self, initial_value: bytes) -> list[Action]:
        if initial_value is None:
            raise ValueError("bottom cannot be proposed")
        self.state.initial = initial_value
        init = self.signer.sign(MsgKind.INIT, 0, initial_value)
        self.state.own_init = init
        return [Send(None, init)]

    def admit(self, msg: SignedMessage) -> Check:
        return self.daemon.filter(msg, self.state.round)

    def deliver(self, msg: SignedMessage) -> tuple[Check, list[Action]]:
        """Daemon filter followed by ``step`` for accepted messages."""
        check = self.admit(msg)
        if not check:
            return check, []
        return check, self.step(MessageDelivery(msg))

    def step(self, event: Event) -> list[Action]:
        st = self.state
        if isinstance(event, Start):
            return self.start(event.value)
        if st.phase == Phase.DECIDED:
            return []
        actions: list[Action] = []
        if isinstance(event, TimerExpiry):
            if st.phase == Phase.PHASE1 and event.handle == st.round and st.timer_active:
                st.timer_fired = True
                st.timer_active = False
        else:
            msg = event.message
            if msg.kind == MsgKind.DEC:
                return self.handle_dec(msg)
            if st.phase == Phase.HALTED:
                return []
            if msg.kind == MsgKind.QUERY:
                actions.extend(self.respond_to_query(msg))
            else:
                if msg.kind in _PRUNABLE and msg.round < st.round:
                    return actions
                box = st.inbox.setdefault((msg.kind, msg.round), {})
                box.setdefault(msg.sender, msg)
        if st.phase != Phase.HALTED:
            actions.extend(self._advance())
        return actions

    # -- T2 / T3 ------------------------------------------------------------

    def respond_to_query(self, query: SignedMessage) -> list[Action]:
        st = self.state
        if st.phase == Phase.DECIDED:
            return []
        r = query.round
        if coordinator_of(r, st.params) == st.me:
            adopted = st.c_est.setdefault(r, query)
            cert = Certificate(CertKind.ChainedEstimate, (adopted,))
            reply = self._sign(MsgKind.RESPONSE, r, adopted.value, cert)
        else:
            reply = self._sign(MsgKind.RESPONSE, r, st.est if st.est is not None else st.initial)
        return [Send(query.sender, reply)]

    def handle_dec(self, dec: SignedMessage) -> list[Action]:
        st = self.state
        if st.phase == Phase.DECIDED:
            return []
        relay = self._sign(MsgKind.DEC, dec.round, dec.value, dec.cert)
        return [Send(None, relay), *self._decide(dec.value, dec.round)]

    # -- T1 -----------------------------------------------------------------

    def _advance(self) -> list[Action]:
        st = self.state
        actions: list[Action] = []
        progressed = True
        while progressed:
            progressed = False
            if st.phase == Phase.INIT_WAIT:
                if st.own_init is None:
                    break
                inits = st.inbox.get((MsgKind.INIT, 0), {})
                if len(inits) >= st.params.quorum:
                    self._finish_init(inits)
                    actions.extend(self.begin_round())
                    progressed = True
            elif st.phase == Phase.PHASE1:
                step = self.resolve_phase1()
                if step:
                    actions.extend(step)
                    progressed = True
            elif st.phase in (Phase.PHASE2, Phase.PHASE3, Phase.PHASE4):
                kind = _COLLECTED_KIND[st.phase]
                box = st.inbox.get((kind, st.round), {})
                if len(box) >= st.params.quorum:
                    collected = collect_values(box.values(), st.params.quorum)
                    st.collected = collected
                    if st.phase == Phase.PHASE2:
                        actions.extend(self._after_phase2(collected))
                    elif st.phase == Phase.PHASE3:
                        actions.extend(self._after_phase3(collected))
                    else:
                        actions.extend(self.resolve_phase4(collected))
                    progressed = st.phase not in (Phase.DECIDED, Phase.HALTED)
        return actions

    def _finish_init(self, inits: dict[int, SignedMessage]) -> None:
        st = self.state
        collected = collect_values(inits.values(), st.params.quorum)
        st.est = resolve_init(collected, st.initial, st.params)
        chain = None
        if init_value(collected.values(), st.params.init_threshold) is None:
            chain = Certificate(CertKind.ChainedEstimate, (st.own_init,))
        st.est_cert = self.validator.build_certificate(
            CertKind.InitQuorum, collected.messages, chain)

    def begin_round(self) -> list[Action]:
        st = self.state
        if self.max_rounds is not None and st.round + 1 > self.max_rounds:
            st.phase = Phase.HALTED
            return [Halt("round-budget-exhausted")]
        st.round += 1
        for key in [k for k in st.inbox if k[0] in _PRUNABLE and k[1] < st.round]:
            del st.inbox[key]
        c = coordinator_of(st.round, st.params)
        query = self._sign(MsgKind.QUERY, st.round, st.est, st.est_cert)
        st.last_query = query
        st.phase = Phase.PHASE1
        st.timer_fired = False
        st.timer_active = True
        st.aux, st.aux_cert, st.collected = BOTTOM, None, None
        return [Send(None, query), SetTimer(st.delta[c], st.round, c)]

    def resolve_phase1(self) -> list[Action]:
        """Evaluate the wait guard; return the phase-exit actions or ``[]``."""
        st = self.state
        c = coordinator_of(st.round, st.params)
        responses = st.responses(st.round)
        from_coord = responses.get(c)
        if from_coord is not None:
            st.aux = from_coord.value
            st.aux_cert = Certificate(CertKind.CoordResponse, (from_coord,))
        elif st.timer_fired and len(responses) >= st.params.quorum:
            quorum = collect_values(responses.values(), st.params.quorum)
            st.aux = BOTTOM
            st.aux_cert = self.validator.build_certificate(
                CertKind.ResponseQuorum, quorum.messages)
        else:
            return []
        actions: list[Action] = []
        if st.timer_fired:
            st.delta[c] += 1
        else:
            st.timer_active = False
            actions.append(DisableTimer(st.round))
        st.phase = Phase.PHASE2
        actions.append(Send(None, self._sign(MsgKind.RELAY, st.round, st.aux, st.aux_cert)))
        return actions

    def _after_phase2(self, collected: ValueSet) -> list[Action]:
        st = self.state
        st.aux = resolve_phase2(collected)
        st.aux_cert = self.validator.build_certificate(CertKind.RelayQuorum, collected.messages)
        st.phase = Phase.PHASE3
        return [Send(None, self._sign(MsgKind.FILT1, st.round, st.aux, st.aux_cert))]

    def _after_phase3(self, collected: ValueSet) -> list[Action]:
        st = self.state
        st.aux = self.validator.filt2_rule(collected.values())
        st.aux_cert = self.validator.build_certificate(CertKind.Filt1Quorum, collected.messages)
        st.phase = Phase.PHASE4
        return [Send(None, self._sign(MsgKind.FILT2, st.round, st.aux, st.aux_cert))]

    def resolve_phase4(self, collected: ValueSet) -> list[Action]:
        st = self.state
        values = collected.values()
        non_bottom = sorted({v for v in values if v is not None})
        if len(non_bottom) == 1 and BOTTOM not in values:
            v = non_bottom[0]
            cert = self.validator.build_certificate(CertKind.DecQuorum, collected.messages)
            dec = self._sign(MsgKind.DEC, st.round, v, cert)
            return [Send(None, dec), *self._decide(v, st.round)]
        if non_bottom:
            st.est = non_bottom[0]
            st.est_cert = self.validator.build_certificate(CertKind.Filt2Quorum, collected.messages)
        else:
            chain = Certificate(CertKind.ChainedEstimate, (st.last_query,))
            st.est_cert = self.validator.build_certificate(
                CertKind.Filt2Quorum, collected.messages, chain)
        return self.begin_round()

    def _decide(self, value: bytes, round_: int) -> list[Action]:
        st = self.state
        st.decided = value
        st.decision_round = round_
        st.phase = Phase.DECIDED
        st.timer_active = False
        st.inbox.clear()
        return [Decide(value, round_)]

    def _sign(self, kind: MsgKind, round_: int, value: Value,
              cert: Optional[Certificate] = None) -> SignedMessage:
        msg = self.signer.sign(kind, round_, value, cert)
        check = self.validator.validate_message(msg)
        if not check:
            raise AssertionError(f"engine produced an invalid {msg}: {check.reason}")
        return msg

    def clone(self) -> "Engine":
        """Independent copy sharing only immutable messages and the signer."""
        st = self.state
        twin = Engine.__new__(Engine)
        twin.state = replace(st, delta=dict(st.delta), c_est=dict(st.c_est),
                             inbox={k: dict(box) for k, box in st.inbox.items()})
        twin.signer = self.signer
        twin.validator = self.validator
        twin.daemon = self.daemon.clone()
        twin.max_rounds = self.max_rounds
        return twin

    def fingerprint(self) -> tuple:
        """Canonical, order-insensitive summary of the state (for exploration)."""
        st = self.state
        inbox = tuple(sorted(
            (int(k), r, tuple(sorted((s, m.mid) for s, m in box.items())))
            for (k, r), box in st.inbox.items()
        ))
        return (
            st.round, int(st.phase), st.est, st.est_cert.digest if st.est_cert else None,
            st.aux, tuple(sorted(st.delta.items())), st.timer_fired, st.timer_active,
            tuple(sorted((r, q.mid) for r, q in st.c_est.items())), st.decided, inbox,
            self.daemon.fingerprint(),
        )


_COLLECTED_KIND = {
    Phase.PHASE2: MsgKind.RELAY,
    Phase.PHASE3: MsgKind.FILT1,
    Phase.PHASE4: MsgKind.FILT2,
}
