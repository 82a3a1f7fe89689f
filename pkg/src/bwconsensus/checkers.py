"""Post-hoc verification of run traces.

All checkers are pure functions of a :class:`~bwconsensus.trace.Trace`.
Which processes are correct is read from the trace metadata (the scenario's
Byzantine set), never inferred from behaviour.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .trace import Trace

PASS, FAIL, VACUOUS, NOT_APPLICABLE, INCONCLUSIVE = (
    "pass", "fail", "vacuous-pass", "not-applicable", "inconclusive")


@dataclass(frozen=True)
class Verdict:
    property: str
    status: str
    position: Optional[int] = None  # index into trace.records of the witness
    explanation: str = ""

    @property
    def failed(self) -> bool:
        return self.status == FAIL

    def to_line(self) -> str:
        pos = "-" if self.position is None else str(self.position)
        return f"{self.property}\t{self.status}\t{pos}\t{self.explanation}"


def _correct_decisions(trace: Trace):
    correct = set(trace.correct)
    for i, rec in enumerate(trace.records):
        if rec.kind == "Decide" and rec.actor in correct:
            yield i, rec


def check_agreement(trace: Trace) -> Verdict:
    first = None
    for i, rec in _correct_decisions(trace):
        if first is None:
            first = rec
        elif rec.value != first.value:
            return Verdict("agreement", FAIL, i,
                           f"p{rec.actor} decided {rec.value}, p{first.actor} decided {first.value}")
    return Verdict("agreement", PASS, explanation="no conflicting decisions")


def check_validity(trace: Trace) -> Verdict:
    proposals = {trace.proposals.get(p) for p in trace.correct}
    if len(proposals) != 1 or None in proposals:
        return Verdict("validity", NOT_APPLICABLE, explanation="correct proposals differ")
    common = proposals.pop()
    for i, rec in _correct_decisions(trace):
        if rec.value != common:
            return Verdict("validity", FAIL, i,
                           f"p{rec.actor} decided {rec.value}, everyone proposed {common}")
    return Verdict("validity", PASS, explanation=f"all decisions equal {common}")


def stabilization_round(trace: Trace) -> int:
    """Highest round any correct process had started by the stabilization time."""
    correct = set(trace.correct)
    highest = 0
    for rec in trace.records:
        if rec.time > trace.stabilization:
            break
        if rec.kind == "Send" and rec.phase == "QUERY" and rec.actor in correct:
            highest = max(highest, rec.round)
    return highest


def check_termination(trace: Trace, round_budget: Optional[int] = None) -> Verdict:
    """Every correct process decides (within ``round_budget`` rounds after stabilization)."""
    if not trace.bw:
        return Verdict("termination", INCONCLUSIVE,
                       explanation="no BW assignment: termination is not guaranteed")
    decided: dict[int, tuple[int, int]] = {}
    for i, rec in _correct_decisions(trace):
        decided.setdefault(rec.actor, (i, rec.round))
    missing = [p for p in trace.correct if p not in decided]
    if missing:
        return Verdict("termination", FAIL, len(trace.records) - 1 if trace.records else None,
                       f"undecided correct processes {missing} (run ended: {trace.end})")
    if round_budget is not None:
        start = stabilization_round(trace)
        for p, (i, r) in sorted(decided.items()):
            if r - start > round_budget:
                return Verdict("termination", FAIL, i,
                               f"p{p} decided in round {r}, more than {round_budget} "
                               f"rounds after round {start}")
    return Verdict("termination", PASS, explanation="every correct process decided")


def check_unique_certified(trace: Trace) -> Verdict:
    """At most one non-bottom value among accepted FILT2 messages of each round."""
    correct = set(trace.correct)
    seen: dict[int, str] = {}
    for i, rec in enumerate(trace.records):
        if (rec.kind == "Deliver" and rec.phase == "FILT2" and rec.actor in correct
                and rec.value != "BOTTOM"):
            prior = seen.setdefault(rec.round, rec.value)
            if prior != rec.value:
                return Verdict("unique-certified", FAIL, i,
                               f"round {rec.round} FILT2 carries {prior} and {rec.value}")
    return Verdict("unique-certified", PASS,
                   explanation=f"{len(seen)} round(s) with a certified value")


def check_round_handoff(trace: Trace) -> Verdict:
    """After a correct decision in round r, later queries and decisions carry its value."""
    decisions = list(_correct_decisions(trace))
    if not decisions:
        return Verdict("round-handoff", VACUOUS, explanation="no correct decision")
    _, first = min(decisions, key=lambda d: (d[1].round, d[0]))
    r, v = first.round, first.value
    correct = set(trace.correct)
    later_queries = 0
    for i, rec in enumerate(trace.records):
        if rec.kind == "Send" and rec.phase == "QUERY" and rec.actor in correct and rec.round > r:
            later_queries += 1
            if rec.value != v:
                return Verdict("round-handoff", FAIL, i,
                               f"p{rec.actor} queried round {rec.round} with {rec.value}, "
                               f"{v} was decided in round {r}")
    for i, rec in decisions:
        if rec.value != v:
            return Verdict("round-handoff", FAIL, i, f"p{rec.actor} decided {rec.value} != {v}")
    if later_queries == 0:
        return Verdict("round-handoff", VACUOUS, explanation=f"nobody entered round {r + 1}")
    return Verdict("round-handoff", PASS,
                   explanation=f"{later_queries} later-round queries carry the round-{r} value")


def check_timely(trace: Trace, delta: float, links: set[tuple[int, int]]) -> Verdict:
    """Post-stabilization deliveries on ``links`` take at most ``delta``."""
    sent: dict[tuple[int, int, str], float] = {}
    for i, rec in enumerate(trace.records):
        if rec.kind == "Send":
            sent.setdefault((rec.actor, rec.peer, rec.msg), rec.time)
        elif rec.kind in ("Deliver", "Discard") and (rec.peer, rec.actor) in links:
            at = sent.get((rec.peer, rec.actor, rec.msg))
            if at is not None and at >= trace.stabilization and rec.time - at > delta + 1e-9:
                return Verdict("timely", FAIL, i, f"p{rec.peer}->p{rec.actor} took {rec.time - at}")
    return Verdict("timely", PASS)


def check_reliability(trace: Trace) -> Verdict:
    """Every Send to a correct process is delivered (or discarded) exactly once."""
    correct = set(trace.correct)
    pending: Counter = Counter()
    for i, rec in enumerate(trace.records):
        if rec.kind == "Send" and rec.peer in correct:
            pending[(rec.actor, rec.peer, rec.msg)] += 1
        elif rec.kind in ("Deliver", "Discard") and rec.actor in correct:
            key = (rec.peer, rec.actor, rec.msg)
            if pending[key] <= 0:
                return Verdict("reliability", FAIL, i, "delivery without a matching send")
            pending[key] -= 1
    lost = sum(c for c in pending.values() if c > 0)
    if lost and trace.end not in ("event-cap",):
        return Verdict("reliability", FAIL, None, f"{lost} sends never delivered")
    return Verdict("reliability", PASS)


SAFETY_CHECKS = (check_agreement, check_validity, check_unique_certified, check_round_handoff)


def safety_verdicts(trace: Trace) -> list[Verdict]:
    return [check(trace) for check in SAFETY_CHECKS]


def all_verdicts(trace: Trace, round_budget: Optional[int] = None) -> list[Verdict]:
    return safety_verdicts(trace) + [check_termination(trace, round_budget)]


# -- complexity ----------------------------------------------------------------

STEP_KINDS = ("INIT", "QUERY", "RESPONSE", "RELAY", "FILT1", "FILT2")


def _predecessor(kind: str, round_: int) -> Optional[tuple[str, int]]:
    if kind == "INIT":
        return None
    if kind == "QUERY":
        return ("INIT", 0) if round_ == 1 else ("FILT2", round_ - 1)
    if kind == "DEC":
        return ("FILT2", round_)
    return {"RESPONSE": "QUERY", "RELAY": "RESPONSE", "FILT1": "RELAY",
            "FILT2": "FILT1"}[kind], round_


@dataclass
class Complexity:
    steps: Optional[int]  # phase-chain steps to the first correct decision
    hops: Optional[int]  # Lamport message-hop depth of that decision
    decision_round: Optional[int]
    messages: dict[tuple[str, int], int] = field(default_factory=dict)  # correct sends per step
    per_process: dict[int, int] = field(default_factory=dict)  # decider -> steps

    def per_step(self, n_rounds: int = 1) -> list[tuple[str, int, int]]:
        out = [("INIT", 0, self.messages.get(("INIT", 0), 0))]
        for r in range(1, n_rounds + 1):
            out += [(k, r, self.messages.get((k, r), 0)) for k in STEP_KINDS[1:]]
        return out


def measure_complexity(trace: Trace) -> Complexity:
    """Communication steps and per-step message counts.

    A message's step is one more than the highest step among messages of its
    predecessor phase (INIT -> QUERY -> RESPONSE -> RELAY -> FILT1 -> FILT2 ->
    next QUERY) delivered to its sender before it was sent; INIT is step 1.
    A phase-4 decision inherits the step of the FILT2 messages it was based on.
    """
    correct = set(trace.correct)
    step_of: dict[tuple[int, str], int] = {}
    hop_of: dict[tuple[int, str], int] = {}
    delivered: dict[int, dict[tuple[str, int], int]] = defaultdict(dict)
    clock: dict[int, int] = defaultdict(int)
    dec_step: dict[int, int] = {}
    messages: Counter = Counter()
    first: Optional[tuple[int, int, int]] = None
    per_process: dict[int, int] = {}
    for rec in trace.records:
        if rec.kind == "Send":
            key = (rec.actor, rec.msg)
            if key not in step_of:
                pred = _predecessor(rec.phase, rec.round or 0)
                base = delivered[rec.actor].get(pred, 0) if pred else 0
                if rec.phase == "DEC":
                    base = max(base, dec_step.get(rec.actor, 0) - 1)
                step_of[key] = base + 1
                hop_of[key] = clock[rec.actor] + 1
            if rec.actor in correct and rec.phase in STEP_KINDS:
                messages[(rec.phase, rec.round or 0)] += 1
        elif rec.kind == "Deliver":
            key = (rec.peer, rec.msg)
            s = step_of.get(key, 1)
            slot = (rec.phase, rec.round or 0)
            if s > delivered[rec.actor].get(slot, 0):
                delivered[rec.actor][slot] = s
            if rec.peer != rec.actor:  # local delivery is not a network hop
                clock[rec.actor] = max(clock[rec.actor], hop_of.get(key, 1))
            if rec.phase == "DEC":
                dec_step[rec.actor] = max(dec_step.get(rec.actor, 0), s + 1)
        elif rec.kind == "Decide" and rec.actor in correct:
            s = delivered[rec.actor].get(("FILT2", rec.round))
            if s is None or rec.actor in dec_step:
                s = dec_step.get(rec.actor, s)
            per_process.setdefault(rec.actor, s)
            if first is None:
                first = (s, clock[rec.actor], rec.round)
    if first is None:
        return Complexity(None, None, None, dict(messages), per_process)
    return Complexity(first[0], first[1], first[2], dict(messages), per_process)
