"""Byzantine behaviours.

Every strategy is confined to its own :class:`~bwconsensus.auth.Signer`; the
only way it can "speak for" another process is to emit bytes with a bogus
signature, which every correct daemon discards.
"""

from __future__ import annotations

import itertools
import random
import re
from dataclasses import dataclass, field
from typing import Any, Optional

from .auth import (
    Certificate, CertKind, MalformedEvidence, MsgKind, SignedMessage, Signer,
    Validator, init_value, phase2_value,
)
from .engine import Action, Engine, Send, TimerExpiry
from .model import BOTTOM, SystemParams, Value, coordinator_of

STRATEGIES = (
    "Crash", "Mute", "SilentCoordinator", "Equivocator", "Delayer",
    "InvalidSpammer", "CertifiedBothValues",
)


@dataclass(frozen=True)
class StrategySpec:
    name: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.name!r}")

    def __str__(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.name}({inner})"

    @classmethod
    def parse(cls, text: str) -> "StrategySpec":
        """Parse ``Name`` / ``Name(3)`` / ``Name(key=value, ...)``."""
        m = re.fullmatch(r"\s*(\w+)\s*(?:\((.*)\))?\s*", text)
        if not m:
            raise ValueError(f"bad strategy syntax: {text!r}")
        name = next((s for s in STRATEGIES if s.lower() == m.group(1).lower()), m.group(1))
        params: dict[str, Any] = {}
        args = (m.group(2) or "").strip()
        if args:
            for i, part in enumerate(a.strip() for a in args.split(",")):
                key, sep, raw = part.partition("=")
                if not sep:
                    key, raw = _POSITIONAL.get(name, "arg"), part
                    if i:
                        raise ValueError(f"only one positional argument allowed: {text!r}")
                params[key.strip()] = _coerce(raw.strip())
        return cls(name, params)


_POSITIONAL = {"Crash": "at", "Delayer": "extra", "InvalidSpammer": "rate"}


def _coerce(raw: str) -> Any:
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    return raw


class ByzantineProcess:
    """Interface the simulator drives for a faulty process."""

    def __init__(self, pid: int, params: SystemParams, signer: Signer,
                 validator: Validator, rng: random.Random, initial: bytes,
                 spec: StrategySpec):
        self.pid = pid
        self.params = params
        self.signer = signer
        self.validator = validator
        self.rng = rng
        self.initial = initial
        self.spec = spec

    def start(self) -> list[Action]:
        return []

    def on_message(self, msg: SignedMessage) -> list[Action]:
        return []

    def on_timer(self, handle: int) -> list[Action]:
        return []


class _EngineBacked(ByzantineProcess):
    """Runs the honest engine and post-processes what it emits."""

    def __init__(self, *args, max_rounds: Optional[int] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.engine = Engine(self.pid, self.params, self.signer, self.validator, max_rounds)
        self.steps = 0

    def start(self) -> list[Action]:
        return self._filter(self.engine.start(self.initial))

    def on_message(self, msg: SignedMessage) -> list[Action]:
        _, actions = self.engine.deliver(msg)
        return self._filter(actions)

    def on_timer(self, handle: int) -> list[Action]:
        return self._filter(self.engine.step(TimerExpiry(handle)))

    def _filter(self, actions: list[Action]) -> list[Action]:
        self.steps += 1
        return [a for a in (self.rewrite(a) for a in actions) if a is not None]

    def rewrite(self, action: Action) -> Optional[Action]:
        return action


class Crash(_EngineBacked):
    """Honest for the first ``at`` steps, silent forever after (``at=0``: never speaks)."""

    def rewrite(self, action):
        return action if self.steps <= self.spec.params.get("at", 0) else None


class Mute(_EngineBacked):
    """Follows the protocol but never answers a QUERY."""

    def rewrite(self, action):
        if isinstance(action, Send) and action.message.kind == MsgKind.RESPONSE:
            return None
        return action


class SilentCoordinator(_EngineBacked):
    """Never answers queries of the rounds it coordinates."""

    def rewrite(self, action):
        if (isinstance(action, Send) and action.message.kind == MsgKind.RESPONSE
                and coordinator_of(action.message.round, self.params) == self.pid):
            return None
        return action


class Delayer(_EngineBacked):
    """Honest content, but every send is stretched by ``extra`` time units."""

    def rewrite(self, action):
        if isinstance(action, Send):
            extra = float(self.spec.params.get("extra", 5.0))
            return Send(action.dest, action.message, action.extra_delay + extra)
        return action


class InvalidSpammer(_EngineBacked):
    """Honest engine plus up to ``rate`` junk messages per step (``cap`` overall)."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.spammed = 0
        self.last: Optional[SignedMessage] = None

    def _filter(self, actions):
        out = super()._filter(actions)
        for a in out:
            if isinstance(a, Send):
                self.last = a.message
        rate = int(self.spec.params.get("rate", 2))
        cap = int(self.spec.params.get("cap", 60))
        for _ in range(rate):
            if self.spammed >= cap:
                break
            self.spammed += 1
            out.append(Send(self.rng.randint(1, self.params.n), self._junk()))
        return out

    def _junk(self) -> SignedMessage:
        rng = self.rng
        r = max(self.engine.state.round, 1)
        value = b"junk-%d" % rng.randint(0, 3)
        choice = rng.randrange(5)
        if choice == 0:
            # claims another sender; signature bytes are made up
            victim = rng.choice([p for p in self.params.processes if p != self.pid] or [self.pid])
            return SignedMessage(MsgKind.FILT2, r, victim, value, None, rng.randbytes(32))
        if choice == 1:
            return self.signer.sign(rng.choice([MsgKind.RELAY, MsgKind.FILT1, MsgKind.FILT2]), r, value)
        if choice == 2 and self.engine.state.est_cert is not None:
            return self.signer.sign(MsgKind.QUERY, r + 3, value, self.engine.state.est_cert)
        if choice == 3 and self.last is not None:
            return self.last
        return self.signer.sign(MsgKind.DEC, r, value)


class _Certifying(ByzantineProcess):
    """Sends any value it can certify, splitting recipients between options.

    Recipients are split in two groups; when a phase admits two certifiable
    values, each group gets a different one. The pool keeps every distinct
    value each sender has signed, so equivocating peers widen the options.
    """

    equivocate_init = False
    split_coordinator = False
    hold_second = False  # wait for a second value before serving group 2
    max_combos = 256

    def __init__(self, *args, max_rounds: Optional[int] = None, **kwargs):
        super().__init__(*args, **kwargs)
        others = [p for p in self.params.processes if p != self.pid]
        half = (len(others) + 1) // 2
        self.groups = (tuple(others[:half]), tuple(others[half:]))
        self.max_rounds = max_rounds
        self.pool: dict[tuple[MsgKind, int], dict[int, dict[Value, SignedMessage]]] = {}
        # (kind, round) -> per-group value already sent (None = not yet)
        self.served: dict[tuple[MsgKind, int], list[Optional[tuple[Value]]]] = {}
        self.adopted: dict[int, list[SignedMessage]] = {}
        self.own_queries: dict[int, SignedMessage] = {}
        self._looked: dict[tuple[MsgKind, int], int] = {}

    def start(self) -> list[Action]:
        actions: list[Action] = []
        if self.equivocate_init:
            alt = self.initial + b"'"
            for group, value in zip(self.groups, (self.initial, alt)):
                msg = self.signer.sign(MsgKind.INIT, 0, value)
                self._remember(msg)
                actions += [Send(p, msg) for p in group]
        else:
            msg = self.signer.sign(MsgKind.INIT, 0, self.initial)
            self._remember(msg)
            actions.append(Send(None, msg))
        return actions

    def on_message(self, msg: SignedMessage) -> list[Action]:
        if not self.validator.validate_message(msg):
            return []
        self._remember(msg)
        actions: list[Action] = []
        if msg.kind == MsgKind.QUERY:
            actions += self._respond(msg)
        actions += self._progress()
        return actions

    def _remember(self, msg: SignedMessage) -> None:
        per_sender = self.pool.setdefault((msg.kind, msg.round), {}).setdefault(msg.sender, {})
        per_sender.setdefault(msg.value, msg)

    def _respond(self, query: SignedMessage) -> list[Action]:
        r = query.round
        if coordinator_of(r, self.params) != self.pid:
            reply = self.signer.sign(MsgKind.RESPONSE, r, self.initial)
            return [Send(query.sender, reply)]
        adopted = self.adopted.setdefault(r, [])
        if not adopted or (self.split_coordinator and len(adopted) < 2
                           and all(q.value != query.value for q in adopted)):
            adopted.append(query)
        pick = adopted[-1] if query.sender in self.groups[1] else adopted[0]
        reply = self.signer.sign(MsgKind.RESPONSE, r, pick.value,
                                 Certificate(CertKind.ChainedEstimate, (pick,)))
        self._remember(reply)
        return [Send(query.sender, reply)]

    # -- certification search ------------------------------------------------

    def _combos(self, kind: MsgKind, round_: int):
        box = self.pool.get((kind, round_), {})
        q = self.params.quorum
        if len(box) < q:
            return
        count = 0
        for senders in itertools.combinations(sorted(box), q):
            choices = [sorted(box[s].values(), key=lambda m: m.mid) for s in senders]
            for combo in itertools.product(*choices):
                yield combo
                count += 1
                if count >= self.max_combos:
                    return

    def _options(self, kind: MsgKind, round_: int) -> dict[Value, Certificate]:
        """Certifiable values for our own ``kind`` message of ``round_``."""
        v = self.validator
        options: dict[Value, Certificate] = {}
        try:
            if kind == MsgKind.QUERY and round_ == 1:
                for combo in self._combos(MsgKind.INIT, 0):
                    winner = init_value([m.value for m in combo], self.params.init_threshold)
                    if winner is not None:
                        options.setdefault(winner, v.build_certificate(CertKind.InitQuorum, combo))
                    else:
                        own = self.pool[(MsgKind.INIT, 0)].get(self.pid, {})
                        for init in own.values():
                            chain = Certificate(CertKind.ChainedEstimate, (init,))
                            options.setdefault(init.value, v.build_certificate(
                                CertKind.InitQuorum, combo, chain))
            elif kind == MsgKind.QUERY:
                for combo in self._combos(MsgKind.FILT2, round_ - 1):
                    non_bottom = {m.value for m in combo if m.value is not None}
                    if len(non_bottom) == 1:
                        options.setdefault(non_bottom.pop(), v.build_certificate(
                            CertKind.Filt2Quorum, combo))
                    elif not non_bottom and round_ - 1 in self.own_queries:
                        prior = self.own_queries[round_ - 1]
                        chain = Certificate(CertKind.ChainedEstimate, (prior,))
                        options.setdefault(prior.value, v.build_certificate(
                            CertKind.Filt2Quorum, combo, chain))
            elif kind == MsgKind.RELAY:
                c = coordinator_of(round_, self.params)
                for resp in self.pool.get((MsgKind.RESPONSE, round_), {}).get(c, {}).values():
                    if resp.cert is not None:
                        options.setdefault(resp.value, Certificate(CertKind.CoordResponse, (resp,)))
                for combo in self._combos(MsgKind.RESPONSE, round_):
                    options.setdefault(BOTTOM, v.build_certificate(CertKind.ResponseQuorum, combo))
                    break
            else:
                source, cert_kind, rule = {
                    MsgKind.FILT1: (MsgKind.RELAY, CertKind.RelayQuorum, phase2_value),
                    MsgKind.FILT2: (MsgKind.FILT1, CertKind.Filt1Quorum, v.filt2_rule),
                    MsgKind.DEC: (MsgKind.FILT2, CertKind.DecQuorum, None),
                }[kind]
                for combo in self._combos(source, round_):
                    values = [m.value for m in combo]
                    if rule is None:
                        if values[0] is None or len(set(values)) != 1:
                            continue
                        value = values[0]
                    else:
                        value = rule(values)
                    options.setdefault(value, v.build_certificate(cert_kind, combo))
        except MalformedEvidence:  # pragma: no cover - combos are shaped by construction
            pass
        return {val: cert for val, cert in options.items()
                if v.validate_message(self.signer.sign(kind, round_, val, cert))}

    def _progress(self) -> list[Action]:
        actions: list[Action] = []
        rounds = sorted({r for (_, r) in self.pool if r >= 1} | {1})
        for r in rounds:
            if self.max_rounds is not None and r > self.max_rounds:
                break
            for kind in (MsgKind.QUERY, MsgKind.RELAY, MsgKind.FILT1, MsgKind.FILT2, MsgKind.DEC):
                actions += self._serve(kind, r)
        return actions

    def _serve(self, kind: MsgKind, round_: int) -> list[Action]:
        served = self.served.setdefault((kind, round_), [None, None])
        if all(s is not None for s in served):
            return []
        source = _SOURCE[kind](round_)
        size = sum(len(vals) for vals in self.pool.get(source, {}).values())
        if self._looked.get((kind, round_)) == size:
            return []
        self._looked[(kind, round_)] = size
        options = self._options(kind, round_)
        if not options:
            return []
        # concrete values before bottom: splitting two real values does the most harm
        ordered = sorted(options, key=lambda val: (val is None, val or b""))
        used = {s[0] for s in served if s is not None}
        fresh = [val for val in ordered if val not in used]
        actions: list[Action] = []
        for g in (0, 1):
            if served[g] is not None:
                continue
            if fresh:
                value = fresh.pop(0)
            elif self.hold_second and g == 1 and len(self.pool.get(source, {})) < self.params.n:
                continue
            elif used:
                # only one certifiable value exists: the second group gets it too
                value = next(iter(used))
            else:
                continue
            used.add(value)
            served[g] = (value,)
            msg = self.signer.sign(kind, round_, value, options[value])
            self._remember(msg)
            if kind == MsgKind.QUERY:
                self.own_queries.setdefault(round_, msg)
                # our own query goes to ourselves as well
                actions += self._respond(msg)
            actions += [Send(p, msg) for p in self.groups[g]]
        return actions


_SOURCE = {
    MsgKind.QUERY: lambda r: (MsgKind.INIT, 0) if r == 1 else (MsgKind.FILT2, r - 1),
    MsgKind.RELAY: lambda r: (MsgKind.RESPONSE, r),
    MsgKind.FILT1: lambda r: (MsgKind.RELAY, r),
    MsgKind.FILT2: lambda r: (MsgKind.FILT1, r),
    MsgKind.DEC: lambda r: (MsgKind.FILT2, r),
}


class Equivocator(_Certifying):
    """Signs two different INIT values and splits every phase it can."""

    equivocate_init = True


class CertifiedBothValues(_Certifying):
    """As coordinator, answers the two groups with two different certified values."""

    split_coordinator = True
    hold_second = True


_CLASSES = {
    "Crash": Crash,
    "Mute": Mute,
    "SilentCoordinator": SilentCoordinator,
    "Equivocator": Equivocator,
    "Delayer": Delayer,
    "InvalidSpammer": InvalidSpammer,
    "CertifiedBothValues": CertifiedBothValues,
}


def make_byzantine(pid: int, params: SystemParams, signer: Signer, validator: Validator,
                   rng: random.Random, initial: bytes, spec: StrategySpec,
                   max_rounds: Optional[int] = None) -> ByzantineProcess:
    cls = _CLASSES[spec.name]
    return cls(pid, params, signer, validator, rng, initial, spec, max_rounds=max_rounds)
