"""Bounded dynamic-resolution histogram of inter-packet gaps.

Each flow keeps at most ``capacity`` modes, each summarising a cluster of gaps
as (min, max, count, sum). A new gap is counted into the first mode it lies
within or near (ascending order), stretching that mode's edge if needed and
merging with the neighbour the stretched edge now crowds. Gaps near no mode
open a new mode while capacity remains and are otherwise discarded.

Proximity ``epsilon`` is ``max(eps_floor_ns, eps_frac * gap)`` so a single
configuration serves both microsecond and millisecond gap scales; set
``eps_frac=0`` for a purely absolute tolerance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, NamedTuple

DEFAULT_CAPACITY = 10
DEFAULT_EPS_FLOOR_NS = 5_000
DEFAULT_EPS_FRAC = 0.2


class Outcome(enum.Enum):
    COUNTED_EXISTING = "counted"
    EXTENDED_BELOW = "extended-below"
    EXTENDED_ABOVE = "extended-above"
    MERGED = "merged"
    NEW_MODE = "new"
    DISCARDED = "discarded"


@dataclass
class Mode:
    min: int
    max: int
    count: int
    sum: int
    ibg_candidate: bool = False

    def mean(self) -> float:
        return self.sum / self.count

    def as_tuple(self) -> tuple:
        return (self.min, self.max, self.count, self.sum, self.ibg_candidate)


class ModeSummary(NamedTuple):
    mean_ns: float
    count: int
    candidate: bool


@dataclass
class ModeHistogram:
    capacity: int = DEFAULT_CAPACITY
    eps_floor_ns: int = DEFAULT_EPS_FLOOR_NS
    eps_frac: float = DEFAULT_EPS_FRAC
    modes: List[Mode] = field(default_factory=list)
    discarded: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        if self.eps_floor_ns < 0 or self.eps_frac < 0:
            raise ValueError("epsilon knobs must be non-negative")

    def epsilon(self, gap: int) -> float:
        return max(self.eps_floor_ns, self.eps_frac * gap)

    @property
    def total(self) -> int:
        return sum(m.count for m in self.modes) + self.discarded

    def update(self, gap: int, candidate: bool = False) -> Outcome:
        if gap < 0:
            raise ValueError(f"negative gap {gap}")
        eps = self.epsilon(gap)
        modes = self.modes
        for i, m in enumerate(modes):
            left, right = m.min, m.max
            if left - eps <= gap <= right + eps:
                m.count += 1
                m.sum += gap
                m.ibg_candidate = m.ibg_candidate or candidate
                if gap <= left:
                    m.min = gap
                    merged = i > 0 and self._consider_merge(i - 1, eps)
                    if merged:
                        return Outcome.MERGED
                    return Outcome.EXTENDED_BELOW if gap < left else Outcome.COUNTED_EXISTING
                if gap >= right:
                    m.max = gap
                    if i + 1 < len(modes) and self._consider_merge(i, eps):
                        return Outcome.MERGED
                    return Outcome.EXTENDED_ABOVE if gap > right else Outcome.COUNTED_EXISTING
                return Outcome.COUNTED_EXISTING
            if gap < left:
                # modes are ascending; nothing further can be proximal
                break
        if len(modes) < self.capacity:
            self._insert(Mode(gap, gap, 1, gap, candidate))
            return Outcome.NEW_MODE
        self.discarded += 1
        return Outcome.DISCARDED

    def _consider_merge(self, i: int, eps: float) -> bool:
        a, b = self.modes[i], self.modes[i + 1]
        if b.min - a.max > eps:
            return False
        self.modes[i] = Mode(a.min, max(a.max, b.max), a.count + b.count, a.sum + b.sum,
                             a.ibg_candidate or b.ibg_candidate)
        del self.modes[i + 1]
        return True

    def _insert(self, mode: Mode) -> None:
        i = 0
        while i < len(self.modes) and self.modes[i].min < mode.min:
            i += 1
        self.modes.insert(i, mode)

    def snapshot(self) -> List[ModeSummary]:
        return [ModeSummary(m.mean(), m.count, m.ibg_candidate) for m in self.modes]

    def reset(self) -> None:
        self.modes.clear()
        self.discarded = 0


def update_modes(hist: ModeHistogram, gap: int, candidate: bool = False) -> Outcome:
    return hist.update(gap, candidate)


def snapshot(hist: ModeHistogram) -> List[ModeSummary]:
    return hist.snapshot()


def reset(hist: ModeHistogram) -> None:
    hist.reset()
