"""Per-flow response-latency estimation from the forward packet stream.

Every data packet contributes the gap since the previous data packet to the
flow's mode histogram. At each epoch boundary the histogram is de-noised
(modes at retransmission-timeout scale and beyond are dropped), the
inter-batch gap mode is chosen, and the average latency is reported as the
proportional mode sum

    sum over modes m with mean(m) <= mean(ibg) of count(m) / count(ibg) * mean(m)

i.e. every gap that precedes one inter-batch gap, on average, plus the
inter-batch gap itself.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence

from .gapthresh import ContractViolation
from .ingest import FlowKey, PacketObservation
from .modehist import (DEFAULT_CAPACITY, DEFAULT_EPS_FLOOR_NS, DEFAULT_EPS_FRAC, Mode,
                       ModeHistogram, ModeSummary)

MS = 1_000_000
US = 1_000
# gaps are stored as u32 nanoseconds; longer idle gaps clamp here (they are
# far above any sane rto floor and are de-noised regardless)
GAP_CLAMP_NS = 2**32 - 1


@dataclass
class EstimatorConfig:
    epoch_ns: int = 100 * MS
    rto_floor_ns: int = 200 * MS
    idle_floor_ns: int = 1000 * MS
    ack_coalescing: bool = True
    mtu_marking: bool = True
    modes: int = DEFAULT_CAPACITY
    eps_floor_ns: int = DEFAULT_EPS_FLOOR_NS
    eps_frac: float = DEFAULT_EPS_FRAC

    def __post_init__(self):
        if self.epoch_ns <= 0:
            raise ValueError("epoch_ns must be positive")
        if self.rto_floor_ns > self.idle_floor_ns:
            raise ValueError("rto_floor_ns must not exceed idle_floor_ns")

    def new_histogram(self) -> ModeHistogram:
        return ModeHistogram(self.modes, self.eps_floor_ns, self.eps_frac)


@dataclass(frozen=True)
class EpochEstimate:
    flow: FlowKey
    epoch_start_ns: int
    epoch_end_ns: int
    estimate_ns: Optional[float]
    modes: tuple
    gaps_observed: int
    gaps_discarded: int
    partial: bool = False

    def to_json(self) -> dict:
        return {
            "flow": str(self.flow),
            "epoch_start_ns": self.epoch_start_ns,
            "epoch_end_ns": self.epoch_end_ns,
            "estimate_ns": self.estimate_ns,
            "modes": [{"mean_ns": m.mean_ns, "count": m.count, "candidate": m.candidate}
                      for m in self.modes],
            "gaps_observed": self.gaps_observed,
            "gaps_discarded": self.gaps_discarded,
            "partial": self.partial,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EpochEstimate":
        return cls(
            flow=FlowKey.label(obj["flow"]),
            epoch_start_ns=int(obj["epoch_start_ns"]),
            epoch_end_ns=int(obj["epoch_end_ns"]),
            estimate_ns=obj["estimate_ns"],
            modes=tuple(ModeSummary(m["mean_ns"], m["count"], m["candidate"])
                        for m in obj["modes"]),
            gaps_observed=int(obj["gaps_observed"]),
            gaps_discarded=int(obj["gaps_discarded"]),
            partial=bool(obj.get("partial", False)),
        )


def denoise(modes: Sequence[ModeSummary], cfg: EstimatorConfig) -> List[ModeSummary]:
    """Drop modes at or above the retransmission-timeout floor (RTOs and idle periods)."""
    return [m for m in modes if m.mean_ns < cfg.rto_floor_ns]


def proportional_mode_sum(modes: Sequence[ModeSummary]) -> Optional[float]:
    if not modes:
        return None
    candidates = [m for m in modes if m.candidate]
    ibg = max(candidates or modes, key=lambda m: m.mean_ns)
    total = 0.0
    for m in modes:
        if m.mean_ns <= ibg.mean_ns:
            total += m.count * m.mean_ns
    return total / ibg.count


class FlowEstimator:
    """Streaming estimator state for one flow."""

    _HEADER = struct.Struct("<qqIIBBH")
    _MODE = struct.Struct("<IIIQ")

    def __init__(self, flow: FlowKey, cfg: Optional[EstimatorConfig] = None):
        self.flow = flow
        self.cfg = cfg or EstimatorConfig()
        self.hist = self.cfg.new_histogram()
        self.last_data_pkt_ns: Optional[int] = None
        self.last_pkt_was_full_mtu = False
        self.epoch_start_ns: Optional[int] = None
        self.samples_in_epoch = 0
        self._last_seen_ns: Optional[int] = None

    def on_packet(self, obs: PacketObservation) -> Optional[EpochEstimate]:
        now = obs.timestamp_ns
        if self._last_seen_ns is not None and now < self._last_seen_ns:
            raise ContractViolation(
                f"flow {self.flow}: timestamp {now} precedes {self._last_seen_ns}")
        self._last_seen_ns = now
        cfg = self.cfg

        emitted = None
        if self.epoch_start_ns is None:
            self.epoch_start_ns = now
        elif now - self.epoch_start_ns >= cfg.epoch_ns:
            emitted = self.end_epoch(self.epoch_start_ns + cfg.epoch_ns)
            skipped = (now - self.epoch_start_ns) // cfg.epoch_ns
            self.epoch_start_ns += skipped * cfg.epoch_ns

        if cfg.ack_coalescing and obs.is_pure_ack:
            return emitted
        if self.last_data_pkt_ns is not None:
            gap = min(now - self.last_data_pkt_ns, GAP_CLAMP_NS)
            candidate = (not cfg.mtu_marking) or (not self.last_pkt_was_full_mtu)
            self.hist.update(gap, candidate)
            self.samples_in_epoch += 1
        self.last_data_pkt_ns = now
        self.last_pkt_was_full_mtu = obs.is_full_mtu
        return emitted

    def end_epoch(self, now: int, partial: bool = False) -> EpochEstimate:
        snap = self.hist.snapshot()
        est = EpochEstimate(
            flow=self.flow,
            epoch_start_ns=self.epoch_start_ns if self.epoch_start_ns is not None else now,
            epoch_end_ns=now,
            estimate_ns=proportional_mode_sum(denoise(snap, self.cfg)),
            modes=tuple(snap),
            gaps_observed=self.samples_in_epoch,
            gaps_discarded=self.hist.discarded,
            partial=partial,
        )
        self.hist.reset()
        self.samples_in_epoch = 0
        return est

    def finish(self) -> Optional[EpochEstimate]:
        """Flush the open epoch at flow termination (flagged partial)."""
        if self.epoch_start_ns is None:
            return None
        end = self._last_seen_ns if self._last_seen_ns is not None else self.epoch_start_ns
        est = self.end_epoch(end, partial=True)
        self.epoch_start_ns = None
        return est

    def to_bytes(self) -> bytes:
        """Compact per-flow state: 28-byte header plus 20 bytes per mode."""
        flags = (1 if self.last_data_pkt_ns is not None else 0) \
            | (2 if self.last_pkt_was_full_mtu else 0) \
            | (4 if self.epoch_start_ns is not None else 0)
        cand = 0
        for i, m in enumerate(self.hist.modes):
            if m.ibg_candidate:
                cand |= 1 << i
        parts = [self._HEADER.pack(
            self.last_data_pkt_ns if self.last_data_pkt_ns is not None else -1,
            self.epoch_start_ns if self.epoch_start_ns is not None else -1,
            self.hist.discarded, self.samples_in_epoch,
            len(self.hist.modes), flags, cand)]
        parts += [self._MODE.pack(m.min, m.max, m.count, m.sum) for m in self.hist.modes]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, flow: FlowKey, data: bytes,
                   cfg: Optional[EstimatorConfig] = None) -> "FlowEstimator":
        fe = cls(flow, cfg)
        last, start, discarded, samples, n, flags, cand = cls._HEADER.unpack_from(data)
        fe.last_data_pkt_ns = last if flags & 1 else None
        fe.last_pkt_was_full_mtu = bool(flags & 2)
        fe.epoch_start_ns = start if flags & 4 else None
        fe._last_seen_ns = fe.last_data_pkt_ns
        fe.hist.discarded = discarded
        fe.samples_in_epoch = samples
        off = cls._HEADER.size
        for i in range(n):
            lo, hi, count, total = cls._MODE.unpack_from(data, off)
            fe.hist.modes.append(Mode(lo, hi, count, total, bool(cand >> i & 1)))
            off += cls._MODE.size
        return fe


def estimate_stream(observations: Iterable[PacketObservation],
                    cfg: Optional[EstimatorConfig] = None,
                    flush: bool = True) -> Iterator[EpochEstimate]:
    """Run one :class:`FlowEstimator` per flow over a time-ordered stream."""
    cfg = cfg or EstimatorConfig()
    flows: Dict[FlowKey, FlowEstimator] = {}
    for o in observations:
        fe = flows.get(o.flow)
        if fe is None:
            fe = flows[o.flow] = FlowEstimator(o.flow, cfg)
        est = fe.on_packet(o)
        if est is not None:
            yield est
    if flush:
        for fe in flows.values():
            est = fe.finish()
            if est is not None:
                yield est
