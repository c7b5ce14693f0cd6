"""Star-topology load-balancing experiment with direct server return.

Client sessions arrive as a Poisson process, each a connection that issues a
fixed number of requests with one in flight at a time. Each new connection is
placed on a server with probability proportional to the current weights; the
connection then sticks to that server. The vantage point sees only the
forward packets, runs one flow estimator per connection and, every controller
interval, feeds per-server averages of the fresh epoch estimates to
:class:`~causalpair.lbctl.WeightController`.

Each trial runs two arms on the same seed (identical session arrivals,
request sizes, think times and per-request service draws): uniform weights and
latency-aware weights. The reported figure is the relative reduction in p99
req-to-res from the uniform arm to the aware arm.
"""

from __future__ import annotations

import bisect
import collections
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dists import Dist, const, uniform
from .estimator import EstimatorConfig, FlowEstimator
from .lbctl import ControllerConfig, WeightController
from .simcore import MS, US, NetworkSpec, ServerSpec, Simulation, WorkloadSpec

log = logging.getLogger(__name__)


def default_servers() -> List[ServerSpec]:
    """Three servers at 1ms mean service and one at 2ms, four workers each."""
    fast = ServerSpec(service_time=uniform(0.5 * MS, 1.5 * MS), workers=4)
    slow = ServerSpec(service_time=uniform(1.0 * MS, 3.0 * MS), workers=4)
    return [fast, fast, fast, slow]


@dataclass
class LbExperimentSpec:
    servers: List[ServerSpec] = field(default_factory=default_servers)
    # 65% of the default pool's 14000 rps
    offered_loads: Sequence[float] = (9100.0,)
    controller: Optional[ControllerConfig] = field(default_factory=ControllerConfig)
    duration_ns: int = 20_000 * MS
    warmup_ns: int = 2_000 * MS
    interval_ns: int = 500 * MS
    # per-server latency is the mean over this many most recent intervals of estimates
    latency_window: int = 1
    # flow-end partial epochs carry few gaps and skew high; evaluation drops them too
    use_partial_epochs: bool = False
    # "mean" or "median" of the window's flow estimates
    latency_aggregate: str = "mean"
    # long sessions: short ones end in partial epochs and leave few complete estimates
    requests_per_connection: int = 500
    think_time: Dist = field(default_factory=lambda: Dist("exp", (20 * US,)))
    request_size: Dist = field(default_factory=lambda: const(200))
    response_size: Dist = field(default_factory=lambda: const(1000))
    network: NetworkSpec = field(default_factory=lambda: NetworkSpec(ack_every=0))
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    seed: int = 0
    trials: int = 5

    @property
    def num_servers(self) -> int:
        return len(self.servers)

    def validate(self) -> None:
        if self.num_servers < 2:
            raise ValueError("need at least two servers")
        if not self.offered_loads or any(x <= 0 for x in self.offered_loads):
            raise ValueError("offered loads must be positive")
        if self.latency_aggregate not in ("mean", "median"):
            raise ValueError(f"unknown latency_aggregate {self.latency_aggregate!r}")
        if self.latency_window < 1:
            raise ValueError("latency_window must be at least 1")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")

    def capacity_rps(self) -> float:
        """Aggregate service capacity in requests/s; unlimited workers count as one."""
        return sum((s.workers or 1) * 1e9 / s.service_time.mean() for s in self.servers)


@dataclass
class ArmResult:
    p99_ns: float
    mean_ns: float
    requests: int
    weights: List[dict]


def _pick(weights: Sequence[float], u: float) -> int:
    total = math.fsum(weights)
    cum = list(itertools.accumulate(w / total for w in weights))
    return min(bisect.bisect_right(cum, u), len(weights) - 1)


def run_arm(spec: LbExperimentSpec, rps: float, seed: int, aware: bool) -> ArmResult:
    n = spec.num_servers
    ctl = WeightController(n, spec.controller) if aware and spec.controller else None
    weights = [1.0 / n] * n

    wl = WorkloadSpec(num_connections=1, pipeline_depth=1, request_size=spec.request_size,
                      response_size=spec.response_size, think_time=spec.think_time,
                      duration_ns=spec.duration_ns,
                      requests_per_connection=spec.requests_per_connection, seed=seed)
    conn_server: Dict[int, int] = {}
    estimators: Dict[int, FlowEstimator] = {}
    active = [0] * n
    requests = [0] * n
    fresh: List[List[float]] = [[] for _ in range(n)]
    window: List[collections.deque] = [collections.deque(maxlen=spec.latency_window)
                                       for _ in range(n)]
    last_latency: List[Optional[float]] = [None] * n
    trace: List[dict] = []

    def on_open(t, cid, server):
        conn_server[cid] = server
        active[server] += 1

    def collect(cid, est):
        if est is not None and est.estimate_ns is not None and \
                (spec.use_partial_epochs or not est.partial):
            fresh[conn_server[cid]].append(est.estimate_ns)

    def on_close(t, cid, server):
        active[server] -= 1
        fe = estimators.pop(cid, None)
        if fe is not None:
            collect(cid, fe.finish())

    def on_packet(obs, meta):
        cid = meta.conn_id
        if not obs.is_pure_ack:
            requests[conn_server[cid]] += 1
        fe = estimators.get(cid)
        if fe is None:
            fe = estimators[cid] = FlowEstimator(obs.flow, spec.estimator)
        collect(cid, fe.on_packet(obs))

    agg = np.median if spec.latency_aggregate == "median" else np.mean

    def tick(t):
        nonlocal weights
        stale = [not f for f in fresh]
        for i in range(n):
            if fresh[i]:
                window[i].append(list(fresh[i]))
                last_latency[i] = float(agg([x for batch in window[i] for x in batch]))
        if ctl is not None:
            dec = ctl.step(last_latency, requests, active, stale)
            weights = dec.weights
            entry = dec.to_json(ctl.interval - 1)
        else:
            entry = {"interval": len(trace), "weights": list(weights)}
        entry["t_ns"] = t
        entry["latency_ns"] = list(last_latency)
        trace.append(entry)
        for i in range(n):
            fresh[i].clear()
            requests[i] = 0

    sim = Simulation(wl, spec.network, spec.servers, assign=lambda cid, u: _pick(weights, u),
                     on_packet=on_packet, on_open=on_open, on_close=on_close)
    arrivals = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    rate_per_ns = rps / spec.requests_per_connection / 1e9
    t = 0.0
    while True:
        t += arrivals.exponential(1.0 / rate_per_ns)
        if t >= spec.duration_ns:
            break
        sim.at(int(t), lambda now: sim.open_connection(now))
    sim.every(spec.interval_ns, tick)
    result = sim.run()

    lat = [r.req_to_res_ns for r in result.truth if r.req_sent_ns >= spec.warmup_ns]
    if not lat:
        raise RuntimeError("no requests after warmup; lengthen the run")
    return ArmResult(float(np.percentile(lat, 99)), float(np.mean(lat)), len(lat), trace)


def run_lb_experiment(spec: LbExperimentSpec) -> dict:
    spec.validate()
    loads = []
    series = []
    for rps in spec.offered_loads:
        uni, aware, red = [], [], []
        for trial in range(spec.trials):
            seed = spec.seed + 1000 * trial
            a = run_arm(spec, rps, seed, aware=False)
            b = run_arm(spec, rps, seed, aware=True)
            uni.append(a.p99_ns)
            aware.append(b.p99_ns)
            red.append(100.0 * (a.p99_ns - b.p99_ns) / a.p99_ns)
            series.append({"rps": rps, "trial": trial, "weights": b.weights})
            log.info("rps=%s trial=%d p99 uniform=%.0f aware=%.0f", rps, trial, a.p99_ns, b.p99_ns)
        loads.append({
            "rps": rps,
            "utilization": rps / spec.capacity_rps(),
            "p99_uniform_ns": float(np.mean(uni)),
            "p99_aware_ns": float(np.mean(aware)),
            "reduction_pct": float(np.mean(red)),
            "reduction_pct_min": float(np.min(red)),
            "reduction_pct_max": float(np.max(red)),
            "trials": [{"p99_uniform_ns": u, "p99_aware_ns": w, "reduction_pct": r}
                       for u, w, r in zip(uni, aware, red)],
        })
    return {"loads": loads, "weights_timeseries": series}
