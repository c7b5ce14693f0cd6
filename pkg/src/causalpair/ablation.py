"""Ladder of successively coarser latency approximations.

Each arm compares one approximation against the next finer one, on the same
simulated traffic:

``req_to_req``
    req-to-req against req-to-res, per request, from ground truth.
``prominent_gap``
    fixed-threshold batch samples (threshold = 0.6 x the connection's mean
    true req-to-res) against the req-to-req of the causal pair ending at the
    request that opened the batch.
``estimator``
    full epoch estimate against the mean of the fixed-threshold samples that
    fell inside the same epoch.

Pages are as wide as a few pipeline-fulls (``page_width`` x depth objects at
most), so that deeper pipelines see proportionally more objects sent one at a
time as slots free up. With a fixed page size a shallow pipeline would instead
need the most rounds per page and fare worst.

Relative errors use the baseline-minus-technique convention with the finer
approximation as the baseline.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence

import numpy as np

from .dists import Dist, uniform
from .estimator import EstimatorConfig, estimate_stream
from .evaluation import rel_error_pct
from .gapthresh import BatchTrackerState, observe
from .simcore import MS, US, NetworkSpec, ServerSpec, SimResult, WorkloadSpec, run_sim

ARMS = ("req_to_req", "prominent_gap", "estimator")
DELTA_FRACTION = 0.6


def default_workload() -> WorkloadSpec:
    return WorkloadSpec(
        num_connections=1,
        response_size=Dist("lognormal", (6_000.0, 1.0, 200_000.0)),
        think_time=uniform(0, 40 * US),
        duration_ns=10_000 * MS,
    )


@dataclass
class AblationSpec:
    workload: WorkloadSpec = field(default_factory=default_workload)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    server: ServerSpec = field(default_factory=lambda: ServerSpec(service_time=uniform(0.8 * MS, 1.2 * MS)))
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    depths: Sequence[int] = (4, 8, 16)
    delta_fraction: float = DELTA_FRACTION
    # children per page ~ uniform_int(1, page_width * depth); 0 keeps workload.fanout
    page_width: float = 3.0

    def validate(self) -> None:
        if not self.depths or any(d < 1 for d in self.depths):
            raise ValueError("depths must be positive")
        if not 0 < self.delta_fraction:
            raise ValueError("delta_fraction must be positive")
        if self.page_width < 0:
            raise ValueError("page_width must be non-negative")

    def workload_for(self, depth: int) -> WorkloadSpec:
        wl = replace(self.workload, pipeline_depth=depth)
        if self.page_width > 0:
            wl = replace(wl, fanout=Dist("uniform_int", (1.0, float(max(1, round(self.page_width * depth))))))
        return wl


def req_to_req_errors(result: SimResult) -> List[float]:
    return [rel_error_pct(r.req_to_res_ns, r.req_to_req_ns) for r in result.truth
            if r.req_to_req_ns is not None and r.req_to_res_ns > 0]


@dataclass
class _GapSample:
    conn_id: int
    value_ns: int
    emitted_at_ns: int
    baseline_ns: float


def prominent_gap_samples(result: SimResult, delta_fraction: float = DELTA_FRACTION,
                          skip_pure_acks: bool = True) -> List[_GapSample]:
    """Fixed-threshold samples per connection, each paired with its req-to-req baseline.

    A sample ends at the packet that opens a new batch. Its baseline is the
    causal pair ending at that same request: the req-to-req of the request
    whose response triggered it. Samples opened by a packet that no response
    triggered (a session's first request, a retransmission) are dropped.
    """
    truth = {(r.conn_id, r.req_id): r for r in result.truth}
    parent = {(r.conn_id, r.triggered_req_sent_ns): r for r in result.truth
              if r.triggered_req_sent_ns is not None}
    res_by_conn: Dict[int, List[int]] = {}
    for r in result.truth:
        res_by_conn.setdefault(r.conn_id, []).append(r.req_to_res_ns)
    delta = {cid: max(1, int(delta_fraction * float(np.mean(v)))) for cid, v in res_by_conn.items()}

    states: Dict[int, BatchTrackerState] = {}
    out: List[_GapSample] = []
    for obs, meta in zip(result.observations, result.meta):
        if skip_pure_acks and obs.is_pure_ack:
            continue
        cid = meta.conn_id
        if cid not in delta:
            continue
        st = states.setdefault(cid, BatchTrackerState())
        s = observe(st, obs.timestamp_ns, delta[cid])
        if s is None:
            continue
        req = truth.get((cid, meta.req_id))
        trig = parent.get((cid, req.req_sent_ns)) if req is not None else None
        if trig is not None and trig.req_to_req_ns:
            out.append(_GapSample(cid, s.value_ns, s.emitted_at_ns, float(trig.req_to_req_ns)))
    return out


def prominent_gap_errors(samples: Sequence[_GapSample]) -> List[float]:
    return [rel_error_pct(s.baseline_ns, s.value_ns) for s in samples]


def estimator_errors(result: SimResult, samples: Sequence[_GapSample],
                     cfg: EstimatorConfig) -> List[float]:
    by_conn: Dict[int, List[_GapSample]] = {}
    for s in samples:
        by_conn.setdefault(s.conn_id, []).append(s)
    out = []
    for est in estimate_stream(result.observations, cfg):
        if est.partial or est.estimate_ns is None:
            continue
        cid = int(str(est.flow)[1:])
        inside = [s.value_ns for s in by_conn.get(cid, ())
                  if est.epoch_start_ns <= s.emitted_at_ns < est.epoch_end_ns]
        if inside:
            out.append(rel_error_pct(float(np.mean(inside)), est.estimate_ns))
    return out


def run_depth(spec: AblationSpec, depth: int) -> Dict[str, List[float]]:
    result = run_sim(spec.workload_for(depth), spec.network, spec.server)
    samples = prominent_gap_samples(result, spec.delta_fraction)
    return {
        "req_to_req": req_to_req_errors(result),
        "prominent_gap": prominent_gap_errors(samples),
        "estimator": estimator_errors(result, samples, spec.estimator),
    }


def run_ablation(spec: AblationSpec) -> Dict[str, Dict[int, List[float]]]:
    """Relative errors keyed by arm, then by pipeline depth."""
    spec.validate()
    out: Dict[str, Dict[int, List[float]]] = {arm: {} for arm in ARMS}
    for d in spec.depths:
        for arm, errs in run_depth(spec, d).items():
            out[arm][d] = errs
    return out


def p95_abs(errors: Sequence[float]) -> float:
    if not errors:
        return float("nan")
    return float(np.percentile(np.abs(errors), 95))


def summary_rows(results: Dict[str, Dict[int, List[float]]]) -> List[dict]:
    rows = []
    for arm, per_depth in results.items():
        for d, errs in sorted(per_depth.items()):
            a = np.abs(errs) if errs else np.array([np.nan])
            rows.append({"arm": arm, "depth": d, "n": len(errs),
                         "median_abs_rel_error_pct": float(np.median(a)),
                         "p95_abs_rel_error_pct": p95_abs(errs)})
    return rows


def cdf_csv(results: Dict[str, Dict[int, List[float]]], points: int = 101) -> str:
    """Empirical CDF of relative error per (arm, depth) as CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "depth", "cdf", "rel_error_pct"])
    qs = np.linspace(0, 100, points)
    for arm, per_depth in results.items():
        for d, errs in sorted(per_depth.items()):
            if not errs:
                continue
            for q, v in zip(qs, np.percentile(errs, qs)):
                w.writerow([arm, d, f"{q / 100:.2f}", f"{v:.6g}"])
    return buf.getvalue()
