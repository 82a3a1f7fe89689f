"""Identifiers, thresholds, round arithmetic and quorum collection.

Process ids are plain ints in ``[1, n]``. Values are ``bytes``; ``BOTTOM``
(``None``) is the non-proposable default and can never collide with a payload.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from typing import Optional

Value = Optional[bytes]
BOTTOM: Value = None


class ResilienceError(ValueError):
    """Raised when ``n <= 3t`` (or ``n <= 1``)."""


class InsufficientMessages(Exception):
    """Fewer distinct senders than the quorum requires; keep waiting."""


@dataclass(frozen=True)
class SystemParams:
    n: int
    t: int

    def __post_init__(self) -> None:
        if self.n <= 1:
            raise ResilienceError(f"need n > 1, got n={self.n}")
        if self.t < 0:
            raise ResilienceError(f"t must be non-negative, got t={self.t}")
        if self.n <= 3 * self.t:
            raise ResilienceError(
                f"resilience violation: n={self.n} must exceed 3t={3 * self.t}"
            )

    @property
    def quorum(self) -> int:
        return self.n - self.t

    @property
    def init_threshold(self) -> int:
        return self.n - 2 * self.t

    @property
    def processes(self) -> range:
        return range(1, self.n + 1)

    def check_pid(self, pid: int) -> int:
        if not 1 <= pid <= self.n:
            raise ValueError(f"process id {pid} outside [1, {self.n}]")
        return pid


def quorum_thresholds(n: int, t: int) -> tuple[int, int]:
    """Return ``(n - t, n - 2t)``; rejects ``n <= 3t``."""
    params = SystemParams(n, t)
    return params.quorum, params.init_threshold


def coordinator_of(round_: int, params: SystemParams) -> int:
    if round_ < 1:
        raise ValueError(f"rounds are 1-based, got {round_}")
    return (round_ - 1) % params.n + 1


def is_bottom(value: Value) -> bool:
    return value is None


def format_value(value: Value) -> str:
    if value is None:
        return "⊥"
    try:
        return value.decode()
    except UnicodeDecodeError:
        return value.hex()


class ValueSet:
    """First-quorum collection of one phase: sender -> value, in delivery order."""

    __slots__ = ("_entries", "messages")

    def __init__(self, entries: dict[int, Value], messages: tuple = ()):
        self._entries = dict(entries)
        self.messages = messages

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries.items())

    def __getitem__(self, sender: int) -> Value:
        return self._entries[sender]

    def __eq__(self, other: object) -> bool:
        if isinstance(other, ValueSet):
            return self._entries == other._entries
        if isinstance(other, dict):
            return self._entries == other
        return NotImplemented

    def __repr__(self) -> str:
        inner = ", ".join(f"p{s}:{format_value(v)}" for s, v in self._entries.items())
        return f"ValueSet({{{inner}}})"

    @property
    def senders(self) -> list[int]:
        return list(self._entries)

    def values(self) -> list[Value]:
        return list(self._entries.values())

    def distinct(self) -> set[Value]:
        return set(self._entries.values())

    def non_bottom(self) -> set[bytes]:
        return {v for v in self._entries.values() if v is not None}


def collect_values(messages: Iterable, quorum: int, kind=None, round_=None) -> ValueSet:
    """Keep the first ``quorum`` distinct-sender messages, in the given order.

    Messages from a sender already collected are dropped, as are messages whose
    kind or round differ from the expected ones (when given).
    """
    entries: dict[int, Value] = {}
    kept = []
    for msg in messages:
        if kind is not None and msg.kind != kind:
            continue
        if round_ is not None and msg.round != round_:
            continue
        if msg.sender in entries:
            continue
        entries[msg.sender] = msg.value
        kept.append(msg)
        if len(entries) == quorum:
            return ValueSet(entries, tuple(kept))
    raise InsufficientMessages(f"{len(entries)} distinct senders, need {quorum}")
