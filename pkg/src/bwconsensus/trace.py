"""Line-delimited run traces.

One record per line, tab separated::

    time  kind  actor  peer  round  phase  message-digest  value-digest

``#``-prefixed lines carry run metadata; the final ``# end`` line marks a
complete file, so a truncated trace is detected on read.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Union

HEADER = "# bwtrace 1"
KINDS = ("Send", "Deliver", "Discard", "TimerSet", "TimerFire", "Decide")
NA = "-"


class MalformedTrace(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class TraceRecord(NamedTuple):
    time: float
    kind: str
    actor: int
    peer: Optional[int]
    round: Optional[int]
    phase: str
    msg: str
    value: str

    def to_line(self) -> str:
        return "\t".join((
            f"{self.time:.6f}", self.kind, str(self.actor),
            NA if self.peer is None else str(self.peer),
            NA if self.round is None else str(self.round),
            self.phase, self.msg, self.value,
        ))


@dataclass
class Trace:
    n: int
    t: int
    byzantine: frozenset[int] = frozenset()
    proposals: dict[int, str] = field(default_factory=dict)  # pid -> value digest
    stabilization: float = 0.0
    bw: bool = False
    seed: int = 0
    max_rounds: Optional[int] = None
    end: str = "incomplete"
    records: list[TraceRecord] = field(default_factory=list)

    @property
    def correct(self) -> list[int]:
        return [p for p in range(1, self.n + 1) if p not in self.byzantine]

    def add(self, *fields) -> None:
        self.records.append(TraceRecord(*fields))

    def lines(self) -> list[str]:
        out = [
            HEADER,
            f"# n={self.n}",
            f"# t={self.t}",
            "# byzantine=" + (",".join(map(str, sorted(self.byzantine))) or NA),
            f"# stabilization={self.stabilization!r}",
            f"# bw={int(self.bw)}",
            f"# seed={self.seed}",
            f"# max_rounds={NA if self.max_rounds is None else self.max_rounds}",
        ]
        out += [f"# proposal.{p}={d}" for p, d in sorted(self.proposals.items())]
        out += [r.to_line() for r in self.records]
        out.append(f"# end reason={self.end} records={len(self.records)}")
        return out

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _opt_int(text: str) -> Optional[int]:
    return None if text == NA else int(text)


def parse_trace(lines: Iterable[str]) -> Trace:
    meta: dict[str, str] = {}
    proposals: dict[int, str] = {}
    records: list[TraceRecord] = []
    end: Optional[dict[str, str]] = None
    lineno = 0
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if lineno == 1:
            if line != HEADER:
                raise MalformedTrace(1, "missing header")
            continue
        if not line:
            continue
        if end is not None:
            raise MalformedTrace(lineno, "content after end marker")
        if line.startswith("# end"):
            end = dict(part.split("=", 1) for part in line[5:].split())
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                raise MalformedTrace(lineno, "bad metadata line")
            if key.startswith("proposal."):
                proposals[int(key.split(".", 1)[1])] = value
            else:
                meta[key] = value
            continue
        parts = line.split("\t")
        if len(parts) != 8:
            raise MalformedTrace(lineno, f"expected 8 fields, got {len(parts)}")
        try:
            rec = TraceRecord(
                float(parts[0]), parts[1], int(parts[2]), _opt_int(parts[3]),
                _opt_int(parts[4]), parts[5], parts[6], parts[7],
            )
        except ValueError as exc:
            raise MalformedTrace(lineno, str(exc)) from None
        if rec.kind not in KINDS:
            raise MalformedTrace(lineno, f"unknown record kind {rec.kind!r}")
        if records and rec.time < records[-1].time:
            raise MalformedTrace(lineno, "time goes backwards")
        records.append(rec)
    if lineno == 0:
        raise MalformedTrace(0, "empty trace")
    if end is None:
        raise MalformedTrace(lineno, "truncated: no end marker")
    if int(end.get("records", -1)) != len(records):
        raise MalformedTrace(lineno, "record count mismatch")
    try:
        byz = meta.get("byzantine", NA)
        return Trace(
            n=int(meta["n"]),
            t=int(meta["t"]),
            byzantine=frozenset() if byz == NA else frozenset(map(int, byz.split(","))),
            proposals=proposals,
            stabilization=float(meta.get("stabilization", "0")),
            bw=meta.get("bw", "0") == "1",
            seed=int(meta.get("seed", "0")),
            max_rounds=_opt_int(meta.get("max_rounds", NA)),
            end=end.get("reason", "incomplete"),
            records=records,
        )
    except (KeyError, ValueError) as exc:
        raise MalformedTrace(lineno, f"bad metadata: {exc}") from None


def read_trace(path: Union[str, Path]) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)
