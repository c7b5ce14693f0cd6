"""Latency-aware weight controller for a weighted layer-4 load balancer.

Each interval the controller:

* takes weight from servers above the high watermark (``alpha_high`` times the
  lowest server latency), each donor giving ``shift_fraction`` of its weight
  scaled by its share of the donors' total latency;
* hands the pool out in equal shares, capped per server, to servers below the
  low watermark whose freshness is at least that of every donor; whatever
  cannot be placed goes back to the donors pro rata;
* with no donors and latencies steady for ``k_stable_intervals`` intervals,
  nudges every eligible weight ``equalize_step`` of the way toward their mean.

Freshness is requests seen in the last interval per active connection at the
end of the interval; a server with no active connections has no freshness and
cannot receive weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple


@dataclass
class ControllerConfig:
    alpha_high: float = 1.5
    alpha_low: float = 1.2
    k_stable_intervals: int = 3
    shift_fraction: float = 0.2
    increment_cap: float = 0.1
    equalize_step: float = 0.1
    stability_tolerance: float = 0.05

    def __post_init__(self):
        if not 1.0 < self.alpha_low < self.alpha_high:
            raise ValueError("need 1 < alpha_low < alpha_high")
        for name in ("shift_fraction", "increment_cap", "equalize_step", "stability_tolerance"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.k_stable_intervals < 1:
            raise ValueError("k_stable_intervals must be at least 1")


@dataclass
class ServerStats:
    server_id: int
    avg_latency_ns: Optional[float]
    requests_last_interval: int
    active_connections: int
    weight: float
    # no estimate arrived this interval: latency is carried over, weight is frozen
    stale: bool = False

    @property
    def freshness(self) -> Optional[float]:
        if self.stale:
            return None
        return freshness(self.requests_last_interval, self.active_connections)


def freshness(requests_last_interval: int, active_connections: int) -> Optional[float]:
    """Requests per active connection; ``None`` marks a server ineligible for weight."""
    if active_connections <= 0:
        return None
    return requests_last_interval / active_connections


@dataclass
class Decision:
    weights: List[float]
    low_watermark: Optional[float] = None
    high_watermark: Optional[float] = None
    donors: List[int] = field(default_factory=list)
    receivers: List[int] = field(default_factory=list)
    equalized: bool = False

    def to_json(self, interval: int) -> dict:
        return {"interval": interval,
                "watermarks": {"low": self.low_watermark, "high": self.high_watermark},
                "donors": self.donors, "receivers": self.receivers,
                "equalized": self.equalized, "weights": self.weights}


def classify(latencies: Dict[int, float], cfg: ControllerConfig) -> Tuple[List[int], List[int]]:
    """Donor (high) and candidate receiver (low) server ids, by relative watermark."""
    if not latencies:
        return [], []
    l_min = min(latencies.values())
    high = sorted(s for s, lat in latencies.items() if lat > cfg.alpha_high * l_min)
    low = sorted(s for s, lat in latencies.items() if lat < cfg.alpha_low * l_min)
    return high, low


def update_weights(stats: Sequence[ServerStats], cfg: ControllerConfig,
                   stable_intervals: int = 0) -> Decision:
    weights = [s.weight for s in stats]
    total = math.fsum(weights)
    defined = {i: s.avg_latency_ns for i, s in enumerate(stats)
               if s.avg_latency_ns is not None and s.avg_latency_ns > 0}
    if len(stats) < 2 or len(defined) < 2 or total <= 0:
        return Decision(weights)

    l_min = min(defined.values())
    dec = Decision(list(weights), cfg.alpha_low * l_min, cfg.alpha_high * l_min)
    high, low = classify(defined, cfg)
    new = dec.weights

    if high:
        high_lat = math.fsum(defined[i] for i in high)
        given = {i: cfg.shift_fraction * weights[i] * defined[i] / high_lat for i in high}
        pool = math.fsum(given.values())
        bar = max((stats[i].freshness or 0.0) for i in high)
        receivers = [i for i in low
                     if stats[i].freshness is not None and stats[i].freshness >= bar]
        dec.donors = high
        if pool > 0 and receivers:
            share = min(pool / len(receivers), cfg.increment_cap * total)
            placed = share * len(receivers)
            residual = pool - placed
            for i in high:
                new[i] -= given[i] - residual * given[i] / pool
            for i in receivers:
                new[i] += share
            dec.receivers = receivers
    elif stable_intervals >= cfg.k_stable_intervals:
        # ineligible servers keep their weight; the rest drift toward their mean
        eligible = [i for i, s in enumerate(stats) if s.freshness is not None]
        if len(eligible) >= 2:
            target = math.fsum(weights[i] for i in eligible) / len(eligible)
            for i in eligible:
                new[i] += cfg.equalize_step * (target - new[i])
            dec.receivers = [i for i in eligible if new[i] > weights[i]]
            dec.equalized = True

    for i, w in enumerate(new):
        if w < 0:
            new[i] = 0.0
    # float drift goes to the heaviest server whose weight moved up
    drift = total - math.fsum(new)
    if drift:
        movers = [i for i in range(len(new)) if new[i] > weights[i]] or \
            [i for i in range(len(new)) if new[i] != weights[i]]
        if movers:
            j = max(movers, key=lambda i: new[i])
            new[j] = max(0.0, new[j] + drift)
    return dec


class WeightController:
    """Stateful wrapper tracking the stability history between intervals."""

    def __init__(self, n_servers: int, cfg: Optional[ControllerConfig] = None,
                 total_weight: float = 1.0):
        if n_servers < 1:
            raise ValueError("need at least one server")
        self.cfg = cfg or ControllerConfig()
        self.weights = [total_weight / n_servers] * n_servers
        self.stable_intervals = 0
        self._prev: Optional[List[Optional[float]]] = None
        self.interval = 0

    def _update_stability(self, latencies: List[Optional[float]]) -> None:
        prev = self._prev
        self._prev = latencies
        if prev is None:
            self.stable_intervals = 0
            return
        changes = [abs(a - b) / b for a, b in zip(latencies, prev)
                   if a is not None and b is not None and b > 0]
        if changes and max(changes) < self.cfg.stability_tolerance:
            self.stable_intervals += 1
        else:
            self.stable_intervals = 0

    def step(self, latencies: Sequence[Optional[float]], requests: Sequence[int],
             active: Sequence[int], stale: Optional[Sequence[bool]] = None) -> Decision:
        self._update_stability(list(latencies))
        stale = stale or [False] * len(self.weights)
        stats = [ServerStats(i, latencies[i], requests[i], active[i], self.weights[i], stale[i])
                 for i in range(len(self.weights))]
        dec = update_weights(stats, self.cfg, self.stable_intervals)
        total = math.fsum(self.weights)
        if any(w < 0 or not math.isfinite(w) for w in dec.weights) or \
                abs(math.fsum(dec.weights) - total) > 1e-9 * max(total, 1.0):
            raise RuntimeError(f"interval {self.interval}: invalid weights {dec.weights}")
        self.weights = dec.weights
        self.interval += 1
        return dec
