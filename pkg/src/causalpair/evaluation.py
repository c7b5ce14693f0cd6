"""Compare epoch estimates against simulator ground truth.

Errors follow the baseline-minus-technique convention: absolute error is
``baseline - estimate`` and relative error is that over the baseline, in
percent. An overestimate therefore shows up as a negative error.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .estimator import EpochEstimate
from .simcore import GroundTruthRecord, flow_conn


@dataclass(frozen=True)
class EpochError:
    flow: str
    epoch_start_ns: int
    epoch_end_ns: int
    estimate_ns: float
    truth_req_to_res_ns: float
    truth_req_to_req_ns: Optional[float]
    n_truth: int

    @property
    def abs_error_ns(self) -> float:
        return self.truth_req_to_res_ns - self.estimate_ns

    @property
    def rel_error_pct(self) -> float:
        return 100.0 * self.abs_error_ns / self.truth_req_to_res_ns

    @property
    def rel_error_vs_req_to_req_pct(self) -> Optional[float]:
        if not self.truth_req_to_req_ns:
            return None
        return 100.0 * (self.truth_req_to_req_ns - self.estimate_ns) / self.truth_req_to_req_ns


def abs_error(baseline: float, technique: float) -> float:
    return baseline - technique


def rel_error_pct(baseline: float, technique: float) -> float:
    return 100.0 * (baseline - technique) / baseline


def summarize(values: Sequence[float]) -> Dict[str, float]:
    if len(values) == 0:
        return {"n": 0}
    arr = np.asarray(values, dtype=float)
    p5, p10, p50, p90, p95 = np.percentile(arr, [5, 10, 50, 90, 95])
    return {"n": int(arr.size), "median": float(p50), "p5": float(p5), "p95": float(p95),
            "p10": float(p10), "p90": float(p90), "mean": float(arr.mean())}


@dataclass
class ErrorReport:
    epochs: List[EpochError] = field(default_factory=list)
    excluded_no_truth: int = 0
    excluded_no_estimate: int = 0
    excluded_partial: int = 0

    def rel_errors(self) -> List[float]:
        return [e.rel_error_pct for e in self.epochs]

    def median_abs_rel_error(self) -> float:
        if not self.epochs:
            return float("nan")
        return float(np.median(np.abs(self.rel_errors())))

    def fraction_within(self, pct: float) -> float:
        if not self.epochs:
            return float("nan")
        return float(np.mean(np.abs(self.rel_errors()) <= pct))

    def summary(self) -> dict:
        abs_err = [e.abs_error_ns for e in self.epochs]
        rel = self.rel_errors()
        rel_rr = [x for x in (e.rel_error_vs_req_to_req_pct for e in self.epochs) if x is not None]
        return {
            "epochs": len(self.epochs),
            "excluded_no_truth": self.excluded_no_truth,
            "excluded_no_estimate": self.excluded_no_estimate,
            "excluded_partial": self.excluded_partial,
            "abs_error_ns": summarize(abs_err),
            "rel_error_pct": summarize(rel),
            "abs_rel_error_pct": summarize([abs(x) for x in rel]),
            "rel_error_vs_req_to_req_pct": summarize(rel_rr),
            "within_15pct": self.fraction_within(15.0),
        }


def evaluate(estimates: Iterable[EpochEstimate], truth: Iterable[GroundTruthRecord],
             include_partial: bool = False) -> ErrorReport:
    """Pair each epoch estimate with the truth records whose request was sent in the epoch."""
    by_conn: Dict[int, List[GroundTruthRecord]] = {}
    for r in truth:
        by_conn.setdefault(r.conn_id, []).append(r)
    sent: Dict[int, List[int]] = {}
    for cid, recs in by_conn.items():
        recs.sort(key=lambda r: r.req_sent_ns)
        sent[cid] = [r.req_sent_ns for r in recs]

    report = ErrorReport()
    for est in estimates:
        if est.partial and not include_partial:
            report.excluded_partial += 1
            continue
        if est.estimate_ns is None:
            report.excluded_no_estimate += 1
            continue
        cid = flow_conn(est.flow)
        recs = by_conn.get(cid) if cid is not None else None
        if not recs:
            report.excluded_no_truth += 1
            continue
        lo = bisect.bisect_left(sent[cid], est.epoch_start_ns)
        hi = bisect.bisect_left(sent[cid], est.epoch_end_ns)
        window = recs[lo:hi]
        if not window:
            report.excluded_no_truth += 1
            continue
        res = float(np.mean([r.req_to_res_ns for r in window]))
        rr = [r.req_to_req_ns for r in window if r.req_to_req_ns is not None]
        report.epochs.append(EpochError(str(est.flow), est.epoch_start_ns, est.epoch_end_ns,
                                        float(est.estimate_ns), res,
                                        float(np.mean(rr)) if rr else None, len(window)))
    return report
