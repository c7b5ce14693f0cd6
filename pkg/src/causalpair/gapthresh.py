"""Fixed-threshold batch detector.

A packet that arrives more than ``delta`` after its predecessor starts a new
batch; the time between successive batch starts is one latency sample. Used as
a baseline and as the ``prominent-gap`` rung of the ablation ladder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, Optional

from .ingest import FlowKey, PacketObservation


class ContractViolation(ValueError):
    """Caller broke an ordering precondition (e.g. a timestamp went backwards)."""


@dataclass
class BatchTrackerState:
    time_last_batch: int = 0
    time_last_pkt: int = 0
    initialized: bool = False


@dataclass(frozen=True)
class LatencySample:
    flow: Optional[FlowKey]
    value_ns: int
    emitted_at_ns: int


def observe(state: BatchTrackerState, now: int, delta: int,
            flow: Optional[FlowKey] = None) -> Optional[LatencySample]:
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not state.initialized:
        state.time_last_batch = state.time_last_pkt = now
        state.initialized = True
        return None
    if now < state.time_last_pkt:
        raise ContractViolation(f"packet at {now} precedes previous packet at {state.time_last_pkt}")
    sample = None
    # strict '>': a gap of exactly delta stays inside the batch
    if now - state.time_last_pkt > delta:
        sample = LatencySample(flow, now - state.time_last_batch, now)
        state.time_last_batch = now
    state.time_last_pkt = now
    return sample


def run_fixed_threshold(observations: Iterable[PacketObservation], delta: int,
                        skip_pure_acks: bool = False) -> Iterator[LatencySample]:
    """Drive one tracker per flow over a time-ordered observation stream."""
    states: Dict[FlowKey, BatchTrackerState] = {}
    for o in observations:
        if skip_pure_acks and o.is_pure_ack:
            continue
        st = states.get(o.flow)
        if st is None:
            st = states[o.flow] = BatchTrackerState()
        s = observe(st, o.timestamp_ns, delta, o.flow)
        if s is not None:
            yield s
