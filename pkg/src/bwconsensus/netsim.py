"""Deterministic discrete-event network.

Links are reliable. Each link is asynchronous, eventually timely or
eventually winning:

* asynchronous: delay drawn from the scenario's base range, whose upper end
  may drift upwards with simulated time;
* timely: after its stabilization time every delay lies in ``(min, delta]``;
* winning: delays are asynchronous, but after stabilization the scheduler
  reorders response deliveries so the pivot's answer to each query of the
  link's target is among the first ``n - t`` responses delivered.

Processes compute in zero simulated time. Simultaneous events are ordered by
(time, priority, scheduling sequence number), so a run is a pure function of
the scenario and its seed.
"""

from __future__ import annotations

import enum
import heapq
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from .adversary import ByzantineProcess, StrategySpec, make_byzantine
from .auth import KeyRing, MsgKind, Validator, value_digest
from .engine import (
    Decide, DisableTimer, Engine, Halt, MessageDelivery, Phase, Send, SetTimer,
    TimerExpiry,
)
from .model import SystemParams
from .trace import NA, Trace


class ScenarioError(ValueError):
    pass


class LinkClass(enum.Enum):
    ASYNC = "async"
    TIMELY = "timely"
    WINNING = "winning"


@dataclass(frozen=True)
class LinkModel:
    cls: LinkClass = LinkClass.ASYNC
    delta: Optional[float] = None  # timely bound, used only by TIMELY
    tau: float = 0.0  # stabilization time
    min_delay: float = 0.0

    def __post_init__(self) -> None:
        if self.cls == LinkClass.TIMELY:
            if self.delta is None or self.delta <= 0:
                raise ScenarioError("timely links need a positive delta")
            if not 0 <= self.min_delay <= self.delta:
                raise ScenarioError("timely link needs 0 <= min_delay <= delta")
        if self.tau < 0:
            raise ScenarioError("stabilization time must be non-negative")

    def stable_at(self, now: float) -> bool:
        return now >= self.tau


@dataclass(frozen=True)
class DelayRange:
    """Base delay distribution: uniform on ``[lo, hi * (1 + drift * now)]``."""

    lo: float = 0.1
    hi: float = 2.0
    drift: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.lo <= self.hi or self.drift < 0:
            raise ScenarioError(f"bad delay range {self}")

    def sample(self, now: float, rng: random.Random) -> float:
        hi = self.hi * (1.0 + self.drift * now)
        return rng.uniform(self.lo, hi)


@dataclass(frozen=True)
class BWAssignment:
    pivot: int
    Y: frozenset[int] = frozenset()  # timely in both directions
    Z: frozenset[int] = frozenset()  # pivot's responses win

    @property
    def x(self) -> int:
        return len(self.Y) + len(self.Z)


@dataclass
class Scenario:
    params: SystemParams
    initial_values: dict[int, bytes]
    byzantine: dict[int, StrategySpec] = field(default_factory=dict)
    links: dict[tuple[int, int], LinkModel] = field(default_factory=dict)
    default_link: LinkModel = field(default_factory=LinkModel)
    bw: Optional[BWAssignment] = None
    seed: int = 0
    max_rounds: int = 20
    base_delay: DelayRange = field(default_factory=DelayRange)
    mutations: frozenset[str] = frozenset()
    name: str = "scenario"

    def link(self, src: int, dst: int) -> LinkModel:
        return self.links.get((src, dst), self.default_link)

    @property
    def correct(self) -> list[int]:
        return [p for p in self.params.processes if p not in self.byzantine]

    @property
    def stabilization(self) -> float:
        """Latest stabilization time among the links the BW assignment relies on."""
        if self.bw is None:
            return 0.0
        b = self.bw
        taus = [self.link(b.pivot, y).tau for y in b.Y] + [self.link(y, b.pivot).tau for y in b.Y]
        taus += [self.link(b.pivot, z).tau for z in b.Z]
        return max(taus, default=0.0)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def validate(self) -> "Scenario":
        p = self.params
        for pid in p.processes:
            if pid not in self.initial_values:
                raise ScenarioError(f"missing initial value for p{pid}")
            if not isinstance(self.initial_values[pid], bytes):
                raise ScenarioError(f"initial value of p{pid} must be bytes")
        extra = set(self.initial_values) - set(p.processes)
        if extra:
            raise ScenarioError(f"initial values for unknown processes {sorted(extra)}")
        for pid in self.byzantine:
            p.check_pid(pid)
        if len(self.byzantine) > p.t:
            raise ScenarioError(f"{len(self.byzantine)} Byzantine processes exceed t={p.t}")
        for (a, b) in self.links:
            p.check_pid(a)
            p.check_pid(b)
        if self.max_rounds < 1:
            raise ScenarioError("max_rounds must be positive")
        if self.bw is not None:
            b = self.bw
            p.check_pid(b.pivot)
            if b.Y & b.Z:
                raise ScenarioError("Y and Z must be disjoint")
            if b.pivot in b.Y | b.Z:
                raise ScenarioError("pivot cannot be its own neighbour")
            if b.x != 2 * p.t:
                raise ScenarioError(f"|Y|+|Z| must equal 2t={2 * p.t}, got {b.x}")
            if b.pivot in self.byzantine:
                raise ScenarioError("the pivot must be correct")
            for y in b.Y:
                p.check_pid(y)
                if (self.link(b.pivot, y).cls != LinkClass.TIMELY
                        or self.link(y, b.pivot).cls != LinkClass.TIMELY):
                    raise ScenarioError(f"pivot <-> p{y} must be timely in both directions")
            for z in b.Z:
                p.check_pid(z)
                if self.link(b.pivot, z).cls != LinkClass.WINNING:
                    raise ScenarioError(f"pivot -> p{z} must be winning")
        return self


def schedule_delivery(send_time: float, link: LinkModel, rng: random.Random,
                      base: DelayRange, self_send: bool = False) -> float:
    """Delivery time of a message sent at ``send_time`` over ``link``."""
    if self_send:
        return send_time
    if link.cls == LinkClass.TIMELY and link.stable_at(send_time):
        span = link.delta - link.min_delay
        return send_time + link.min_delay + span * (1.0 - rng.random())
    return send_time + base.sample(send_time, rng)


@dataclass
class QueryContext:
    """Response bookkeeping for one (querier, round) query."""

    querier: int
    round: int
    issued_at: float
    quorum: int
    pivot: Optional[int] = None
    enforce: bool = False
    responders: list[int] = field(default_factory=list)
    pivot_delivered: bool = False
    pivot_inflight: Optional[list] = None
    held: list = field(default_factory=list)

    def winning(self) -> list[int]:
        return self.responders[: self.quorum]

    def losing(self) -> list[int]:
        return self.responders[self.quorum:]

    def record(self, responder: int) -> None:
        if responder not in self.responders:
            self.responders.append(responder)
        if responder == self.pivot:
            self.pivot_delivered = True


DELIVER, PIVOT_FIRST, HOLD = "deliver", "pivot-first", "hold"


def enforce_winning(ctx: QueryContext, responder: int) -> str:
    """How to treat a response about to be delivered for ``ctx``.

    ``deliver`` keeps the order; ``pivot-first`` means the pivot's in-flight
    response must be delivered before this one; ``hold`` defers this response
    until the pivot's response (not yet sent) has been delivered.
    """
    if not ctx.enforce or ctx.pivot_delivered or responder == ctx.pivot:
        return DELIVER
    if responder in ctx.responders or len(ctx.responders) < ctx.quorum - 1:
        return DELIVER
    return PIVOT_FIRST if ctx.pivot_inflight is not None else HOLD


_PRIO_PULLED, _PRIO_NORMAL = 0, 1


class Simulation:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None,
                 max_events: int = 500_000):
        scenario.validate()
        self.scenario = scenario
        self.params = scenario.params
        self.seed = scenario.seed if seed is None else seed
        self.rng = random.Random(self.seed)
        self.keyring = KeyRing(self.params.n, b"bwconsensus/%d" % self.seed)
        self.validator = Validator(self.params, self.keyring, scenario.mutations)
        self.max_events = max_events
        self.now = 0.0
        self._queue: list = []
        self._seq = 0
        self.engines: dict[int, Engine] = {}
        self.byzantine: dict[int, ByzantineProcess] = {}
        for pid in self.params.processes:
            signer = self.keyring.signer(pid)
            if pid in scenario.byzantine:
                self.byzantine[pid] = make_byzantine(
                    pid, self.params, signer, self.validator,
                    random.Random(f"{self.seed}/{pid}"), scenario.initial_values[pid],
                    scenario.byzantine[pid], max_rounds=scenario.max_rounds)
            else:
                self.engines[pid] = Engine(pid, self.params, signer, self.validator,
                                           scenario.max_rounds)
        self.queries: dict[tuple[int, int], QueryContext] = {}
        self.timers: set[tuple[int, int]] = set()
        self.emitted: dict[int, set[bytes]] = {p: set() for p in self.engines}
        self.forgeries = 0
        self.events = 0
        self.trace = Trace(
            n=self.params.n, t=self.params.t, byzantine=frozenset(scenario.byzantine),
            proposals={p: value_digest(v) for p, v in sorted(scenario.initial_values.items())},
            stabilization=scenario.stabilization, bw=scenario.bw is not None,
            seed=self.seed, max_rounds=scenario.max_rounds,
        )

    # -- queue -----------------------------------------------------------

    def _push(self, time: float, payload: tuple, prio: int = _PRIO_NORMAL) -> list:
        self._seq += 1
        entry = [time, prio, self._seq, payload, True]
        heapq.heappush(self._queue, entry)
        return entry

    def _pop(self):
        while self._queue:
            entry = heapq.heappop(self._queue)
            if entry[4]:
                return entry
        return None

    # -- running ---------------------------------------------------------

    def run(self) -> Trace:
        for pid in self.params.processes:
            self._push(0.0, ("start", pid))
        while True:
            entry = self._pop()
            if entry is None:
                if self._release_all_held():
                    continue
                break
            self.events += 1
            if self.events > self.max_events:
                self.trace.end = "event-cap"
                return self.trace
            self.now = entry[0]
            self._dispatch(entry[3])
        self.trace.end = self._end_reason()
        return self.trace

    def _end_reason(self) -> str:
        phases = [e.state.phase for e in self.engines.values()]
        if all(ph == Phase.DECIDED for ph in phases):
            return "all-decided"
        if any(ph == Phase.HALTED for ph in phases):
            return "round-budget-exhausted"
        return "quiescent"

    def _dispatch(self, payload: tuple) -> None:
        tag = payload[0]
        if tag == "start":
            pid = payload[1]
            if pid in self.engines:
                actions = self.engines[pid].start(self.scenario.initial_values[pid])
            else:
                actions = self.byzantine[pid].start()
            self._apply(pid, actions)
        elif tag == "timer":
            _, pid, handle = payload
            if (pid, handle) not in self.timers:
                return
            self.timers.discard((pid, handle))
            node = self.engines.get(pid)
            round_ = handle
            self.trace.add(self.now, "TimerFire", pid, None, round_, "PHASE1", NA, NA)
            if node is not None:
                self._apply(pid, node.step(TimerExpiry(handle)))
            else:
                self._apply(pid, self.byzantine[pid].on_timer(handle))
        else:
            self._deliver(payload)

    def _deliver(self, payload: tuple) -> None:
        _, src, dst, msg, = payload
        ctx = None
        if msg.kind == MsgKind.RESPONSE:
            ctx = self.queries.get((dst, msg.round))
            if ctx is not None:
                verdict = enforce_winning(ctx, msg.sender)
                if verdict == PIVOT_FIRST:
                    inflight = ctx.pivot_inflight
                    inflight[4] = False
                    ctx.pivot_inflight = self._push(self.now, inflight[3], _PRIO_PULLED)
                    self._push(self.now, payload)
                    return
                if verdict == HOLD:
                    ctx.held.append(payload)
                    return
        rec_round = msg.round if msg.kind != MsgKind.INIT else 0
        if dst in self.engines:
            engine = self.engines[dst]
            check = engine.admit(msg)
            if not check:
                if ctx is not None and msg.sender == ctx.pivot:
                    self._count_response(ctx, msg.sender)
                self.trace.add(self.now, "Discard", dst, src, rec_round, msg.kind.name,
                               msg.digest, value_digest(msg.value))
                return
            if msg.sender in self.emitted and msg.mid not in self.emitted[msg.sender]:
                self.forgeries += 1
            self.trace.add(self.now, "Deliver", dst, src, rec_round, msg.kind.name,
                           msg.digest, value_digest(msg.value))
            if ctx is not None:
                self._count_response(ctx, msg.sender)
            self._apply(dst, engine.step(MessageDelivery(msg)))
        else:
            self.trace.add(self.now, "Deliver", dst, src, rec_round, msg.kind.name,
                           msg.digest, value_digest(msg.value))
            if ctx is not None:
                self._count_response(ctx, msg.sender)
            self._apply(dst, self.byzantine[dst].on_message(msg))

    def _count_response(self, ctx: QueryContext, responder: int) -> None:
        ctx.record(responder)
        if responder == ctx.pivot and ctx.held:
            for held in ctx.held:
                self._push(self.now, held)
            ctx.held.clear()

    def _release_all_held(self) -> bool:
        released = False
        for ctx in self.queries.values():
            if ctx.held:
                for held in ctx.held:
                    self._push(self.now, held)
                ctx.held.clear()
                released = True
        return released

    def register_query(self, round_: int, querier: int) -> Optional[QueryContext]:
        """Open response bookkeeping for ``querier``'s round query (once)."""
        key = (querier, round_)
        if key in self.queries:
            return None
        bw = self.scenario.bw
        ctx = QueryContext(querier, round_, self.now, self.params.quorum)
        if bw is not None:
            ctx.pivot = bw.pivot
            link = self.scenario.link(bw.pivot, querier)
            ctx.enforce = (querier in bw.Z and querier in self.engines
                           and link.cls == LinkClass.WINNING and link.stable_at(self.now))
        self.queries[key] = ctx
        return ctx

    def _apply(self, pid: int, actions: list) -> None:
        is_byz = pid in self.byzantine
        for action in actions:
            if isinstance(action, Send):
                self._send(pid, action, is_byz)
            elif isinstance(action, SetTimer):
                self.timers.add((pid, action.handle))
                self._push(self.now + action.duration, ("timer", pid, action.handle))
                self.trace.add(self.now, "TimerSet", pid, action.coordinator, action.handle,
                               "PHASE1", NA, NA)
            elif isinstance(action, DisableTimer):
                self.timers.discard((pid, action.handle))
            elif isinstance(action, Decide):
                self.trace.add(self.now, "Decide", pid, None, action.round, "DECIDED",
                               NA, value_digest(action.value))
            elif isinstance(action, Halt):
                pass

    def _send(self, pid: int, action: Send, is_byz: bool) -> None:
        msg = action.message
        if not is_byz:
            self.emitted[pid].add(msg.mid)
        if msg.kind == MsgKind.QUERY and msg.sender == pid:
            self.register_query(msg.round, pid)
        dests = self.params.processes if action.dest is None else (action.dest,)
        rec_round = msg.round if msg.kind != MsgKind.INIT else 0
        extra = action.extra_delay if is_byz else 0.0
        bw = self.scenario.bw
        for dst in dests:
            self.trace.add(self.now, "Send", pid, dst, rec_round, msg.kind.name,
                           msg.digest, value_digest(msg.value))
            link = self.scenario.link(pid, dst)
            at = schedule_delivery(self.now, link, self.rng, self.scenario.base_delay,
                                   self_send=dst == pid) + extra
            entry = self._push(at, ("deliver", pid, dst, msg))
            if (bw is not None and pid == bw.pivot and msg.kind == MsgKind.RESPONSE):
                ctx = self.queries.get((dst, msg.round))
                if ctx is not None and ctx.enforce and not ctx.pivot_delivered:
                    ctx.pivot_inflight = entry

    # -- inspection ------------------------------------------------------

    def decisions(self) -> dict[int, Optional[bytes]]:
        return {p: e.state.decided for p, e in self.engines.items()}

    def decision_rounds(self) -> dict[int, Optional[int]]:
        return {p: e.state.decision_round for p, e in self.engines.items()}


def run(scenario: Scenario, seed: Optional[int] = None) -> Trace:
    return Simulation(scenario, seed).run()

