"""Bounded exhaustive enumeration of delivery schedules.

Time is abstracted away: at every point any pending message may be delivered
next and any armed round timer may fire.  Self-addressed messages are
delivered immediately, as in the simulator.  States are deduplicated on a
canonical key (engine fingerprints, pending multiset, armed timers and the
safety-relevant observations made so far), so the search walks a DAG while the
number of distinct schedules is counted over all of its paths.

A query reaches the processes that do not coordinate its round immediately;
their replies only count towards the querier's quorum, so what gets enumerated
is the order in which those replies (and the round timer) reach the querier.
The round coordinator's receipt of queries stays an explored event, since the
first query it sees fixes the estimate it hands out.

Other deliveries are lazy: a message is only handed to its receiver once the
receiver can act on it (its current phase collects that kind, or it is a query
or a decision).  An engine merely buffers anything else, so delivering it early or at
the moment it becomes useful yields the same local behaviour; what is still
enumerated is every order in which each collector consumes its phase messages
and every position of the round timer among the responses to each query.

Interleavings of different processes are not enumerated, since events at
distinct processes commute.  The lowest-numbered process that can act either
takes one of its available events now or defers; a deferring process must next
take an event that is not available yet, so every per-process sequence of
receptions and timeouts is still reached exactly once.
"""

from __future__ import annotations

import sys
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .auth import KeyRing, MsgKind, SignedMessage, Validator, value_digest
from .checkers import Verdict, safety_verdicts
from .engine import (Decide, DisableTimer, Engine, MessageDelivery, Phase, Send, SetTimer,
                     TimerExpiry)
from .model import coordinator_of
from .netsim import Scenario, ScenarioError
from .trace import NA, Trace

EXPLORABLE = ("Crash",)

_PHASE_OF = {
    MsgKind.INIT: Phase.INIT_WAIT,
    MsgKind.RESPONSE: Phase.PHASE1,
    MsgKind.RELAY: Phase.PHASE2,
    MsgKind.FILT1: Phase.PHASE3,
    MsgKind.FILT2: Phase.PHASE4,
}


def wanted(engine: Engine, msg: SignedMessage) -> bool:
    """Whether delivering ``msg`` now can do more than buffer or discard it."""
    st = engine.state
    if st.decided is not None:
        return False
    if msg.kind in (MsgKind.QUERY, MsgKind.DEC):
        return True
    return st.phase == _PHASE_OF[msg.kind] and (msg.kind == MsgKind.INIT or msg.round == st.round)


class StateSpaceExceeded(RuntimeError):
    def __init__(self, states: int, schedules: int):
        super().__init__(f"state budget exceeded after {states} states")
        self.states = states
        self.schedules = schedules


@dataclass
class ExplorationReport:
    states: int = 0
    leaves: int = 0
    schedules: int = 0
    violations: list[Verdict] = field(default_factory=list)
    witnesses: list[Trace] = field(default_factory=list)
    outcomes: set = field(default_factory=set)  # see outcome_of

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class _Node:
    engines: dict[int, Engine]
    pending: Counter  # (dst, msg) -> multiplicity
    timers: frozenset
    facts: frozenset
    deferred: frozenset = frozenset()  # events a deferring process may not take next
    owned: set = field(default_factory=set, compare=False, repr=False)

    def key(self) -> tuple:
        return (
            self.deferred,
            tuple(e.fingerprint() for _, e in sorted(self.engines.items())),
            tuple(sorted((d, m.mid, c) for (d, m), c in self.pending.items())),
            self.timers,
            self.facts,
        )


class Explorer:
    def __init__(self, scenario: Scenario, max_rounds: Optional[int] = None,
                 depth: Optional[int] = None, max_states: int = 2_000_000):
        scenario.validate()
        for pid, spec in scenario.byzantine.items():
            if spec.name not in EXPLORABLE:
                raise ScenarioError(f"exhaustive mode supports only {EXPLORABLE}, p{pid} is {spec}")
        crash_late = [p for p, s in scenario.byzantine.items() if s.params.get("at", 0) != 0]
        if crash_late:
            raise ScenarioError("exhaustive mode requires Crash(0)")
        self.scenario = scenario
        self.params = scenario.params
        self.max_rounds = scenario.max_rounds if max_rounds is None else max_rounds
        self.depth = depth
        self.max_states = max_states
        keyring = KeyRing(self.params.n, b"bwconsensus/explore")
        self.validator = Validator(self.params, keyring, scenario.mutations)
        self.signers = {p: keyring.signer(p) for p in self.params.processes}
        self.correct = [p for p in self.params.processes if p not in scenario.byzantine]
        self._memo: dict = {}
        self.report = ExplorationReport()

    # -- transitions ------------------------------------------------------

    @staticmethod
    def _copy(node: _Node, pid: int) -> _Node:
        deferred = frozenset(d for d in node.deferred if d[0] != pid)
        return _Node(dict(node.engines), Counter(node.pending), node.timers, node.facts, deferred)

    @staticmethod
    def _own(node: _Node, pid: int) -> Engine:
        # engines are shared between nodes until first written
        if pid not in node.owned:
            node.engines[pid] = node.engines[pid].clone()
            node.owned.add(pid)
        return node.engines[pid]

    def _apply(self, node: _Node, pid: int, actions: list, facts: set, timers: set) -> None:
        local: list[tuple[int, SignedMessage]] = []
        instant: list[tuple[int, SignedMessage]] = []
        for action in actions:
            if isinstance(action, Send):
                msg = action.message
                if msg.kind == MsgKind.QUERY and msg.sender == pid:
                    facts.add(("Send", pid, msg.round, "QUERY", value_digest(msg.value)))
                dests = self.params.processes if action.dest is None else (action.dest,)
                for dst in dests:
                    if dst == pid:
                        local.append((dst, msg))
                    elif dst not in node.engines:
                        continue
                    elif (msg.kind == MsgKind.QUERY
                          and coordinator_of(msg.round, self.params) != dst):
                        instant.append((dst, msg))
                    else:
                        node.pending[(dst, msg)] += 1
            elif isinstance(action, SetTimer):
                timers.add((pid, action.handle))
            elif isinstance(action, DisableTimer):
                timers.discard((pid, action.handle))
            elif isinstance(action, Decide):
                facts.add(("Decide", pid, action.round, "DECIDED", value_digest(action.value)))
        for dst, msg in local + instant:
            self._deliver(node, dst, msg, facts, timers)

    def _deliver(self, node: _Node, dst: int, msg: SignedMessage, facts: set, timers: set) -> None:
        engine = self._own(node, dst)
        if not engine.admit(msg):
            return
        if msg.kind == MsgKind.FILT2:
            facts.add(("Deliver", dst, msg.round, "FILT2", value_digest(msg.value)))
        self._apply(node, dst, engine.step(MessageDelivery(msg)), facts, timers)

    def initial(self) -> _Node:
        engines = {p: Engine(p, self.params, self.signers[p], self.validator, self.max_rounds)
                   for p in self.correct}
        node = _Node(engines, Counter(), frozenset(), frozenset(), owned=set(engines))
        facts: set = set()
        timers: set = set()
        for p in self.correct:
            self._apply(node, p, engines[p].start(self.scenario.initial_values[p]), facts, timers)
        node.facts, node.timers = frozenset(facts), frozenset(timers)
        return node

    def events(self, node: _Node) -> list[tuple]:
        out = [("deliver", d, m) for (d, m) in sorted(node.pending, key=lambda e: (e[0], e[1].mid))
               if wanted(node.engines[d], m)]
        out += [("timer", p, h) for p, h in sorted(node.timers)]
        return out

    @staticmethod
    def _event_id(event: tuple) -> tuple:
        tag, pid, arg = event
        return (pid, tag, arg.mid if tag == "deliver" else arg)

    def _choices(self, node: _Node, evs: list[tuple]) -> tuple[list[tuple], Optional[_Node]]:
        """Events of the process that moves next, plus the node where it defers instead."""
        free = [e for e in evs if self._event_id(e) not in node.deferred]
        if not free:
            return [], None
        mover = min(e[1] for e in free)
        mine = [e for e in free if e[1] == mover]
        if all(e[1] == mover for e in free):
            return mine, None  # nobody else can act, so waiting cannot pay off
        later = _Node(node.engines, node.pending, node.timers, node.facts,
                      node.deferred | {self._event_id(e) for e in mine})
        return mine, later

    def successor(self, node: _Node, event: tuple) -> _Node:
        tag, pid, arg = event
        nxt = self._copy(node, pid)
        facts, timers = set(nxt.facts), set(nxt.timers)
        if tag == "deliver":
            nxt.pending[(pid, arg)] -= 1
            if not nxt.pending[(pid, arg)]:
                del nxt.pending[(pid, arg)]
            self._deliver(nxt, pid, arg, facts, timers)
        else:
            timers.discard((pid, arg))
            self._apply(nxt, pid, self._own(nxt, pid).step(TimerExpiry(arg)), facts, timers)
        nxt.facts, nxt.timers = frozenset(facts), frozenset(timers)
        return nxt

    # -- search -----------------------------------------------------------

    def _leaf(self, node: _Node) -> None:
        self.report.leaves += 1
        self.report.outcomes.add(outcome_of(node.facts))
        trace = self.facts_trace(node.facts)
        bad = [v for v in safety_verdicts(trace) if v.failed]
        if bad:
            self.report.violations.extend(bad)
            if len(self.report.witnesses) < 10:
                self.report.witnesses.append(trace)

    def facts_trace(self, facts: frozenset) -> Trace:
        scn = self.scenario
        trace = Trace(
            n=self.params.n, t=self.params.t, byzantine=frozenset(scn.byzantine),
            proposals={p: value_digest(v) for p, v in sorted(scn.initial_values.items())},
            seed=0, max_rounds=self.max_rounds, end="explored",
        )
        order = {"Send": 0, "Deliver": 1, "Decide": 2}
        for kind, pid, round_, phase, value in sorted(facts, key=lambda f: (f[2], order[f[0]], f[1], f[4])):
            trace.add(0.0, kind, pid, None, round_, phase, NA, value)
        return trace

    def _visit(self, node: _Node, depth_left: Optional[int]) -> int:
        key = (node.key(), depth_left)
        known = self._memo.get(key)
        if known is not None:
            return known
        self.report.states += 1
        if self.report.states > self.max_states:
            raise StateSpaceExceeded(self.report.states, self.report.schedules)
        evs = self.events(node) if depth_left != 0 else []
        if not evs:
            self._leaf(node)
            count = 1
        else:
            mine, later = self._choices(node, evs)
            nd = None if depth_left is None else depth_left - 1
            count = sum(self._visit(self.successor(node, ev), nd) for ev in mine)
            if later is not None:
                count += self._visit(later, depth_left)
        self._memo[key] = count
        return count

    def run(self) -> ExplorationReport:
        limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(limit, 20_000))
        try:
            self.report.schedules = self._visit(self.initial(), self.depth)
        finally:
            sys.setrecursionlimit(limit)
            self._memo.clear()
        return self.report


def outcome_of(facts) -> frozenset:
    """Queries issued and decisions taken, the part comparable across schedulers."""
    return frozenset(f[:5] for f in facts if f[0] in ("Send", "Decide"))


def trace_outcome(trace: Trace) -> frozenset:
    correct = set(trace.correct)
    return outcome_of(
        (r.kind, r.actor, r.round, r.phase, r.value) for r in trace.records
        if r.actor in correct and (r.kind == "Decide" or (r.kind == "Send" and r.phase == "QUERY"))
    )


def explore_exhaustive(scenario: Scenario, max_rounds: Optional[int] = None,
                       depth: Optional[int] = None, max_states: int = 2_000_000) -> ExplorationReport:
    """Enumerate every delivery/timer interleaving of ``scenario`` within the bounds."""
    return Explorer(scenario, max_rounds, depth, max_states).run()


__all__ = ["ExplorationReport", "Explorer", "StateSpaceExceeded",
           "explore_exhaustive", "outcome_of", "trace_outcome"]
