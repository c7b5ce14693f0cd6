import pytest

from causalpair.estimator import EpochEstimate
from causalpair.evaluation import abs_error, evaluate, rel_error_pct, summarize
from causalpair.simcore import GroundTruthRecord, conn_flow


def est(start, end, value, conn=0, partial=False):
    return EpochEstimate(conn_flow(conn), start, end, value, (), 1, 0, partial)


def rec(req_id, sent, done, trig=None, conn=0):
    return GroundTruthRecord(conn, req_id, sent, done, trig)


def test_sign_convention():
    assert abs_error(100, 110) == -10
    assert rel_error_pct(100, 110) == -10.0


def test_overestimate_is_negative():
    truth = [rec(0, 10, 110, 115), rec(1, 115, 205, 210)]
    rep = evaluate([est(0, 200, 110.0)], truth)
    (e,) = rep.epochs
    # truth mean (100 + 90) / 2 = 95
    assert e.truth_req_to_res_ns == 95.0
    assert e.abs_error_ns == -15.0
    assert e.rel_error_pct == pytest.approx(-15.0 / 95 * 100)
    # req-to-req baseline: (105 + 95) / 2
    assert e.truth_req_to_req_ns == 100.0
    assert e.rel_error_vs_req_to_req_pct == pytest.approx(-10.0)


def test_exact_estimate_is_zero_error():
    rep = evaluate([est(0, 100, 50.0)], [rec(0, 0, 50), rec(1, 60, 110)])
    assert rep.epochs[0].rel_error_pct == 0.0


def test_disjoint_ranges_give_empty_report():
    rep = evaluate([est(1_000, 2_000, 5.0)], [rec(0, 0, 50)])
    assert rep.epochs == [] and rep.excluded_no_truth == 1
    assert rep.summary()["rel_error_pct"] == {"n": 0}


def test_exclusions_counted():
    truth = [rec(0, 0, 50)]
    ests = [est(0, 100, 40.0, partial=True), est(0, 100, None), est(0, 100, 50.0, conn=7)]
    rep = evaluate(ests, truth)
    assert (rep.excluded_partial, rep.excluded_no_estimate, rep.excluded_no_truth) == (1, 1, 1)
    rep = evaluate(ests[:1], truth, include_partial=True)
    assert len(rep.epochs) == 1


def test_epoch_window_is_half_open():
    truth = [rec(0, 100, 150), rec(1, 200, 260)]
    rep = evaluate([est(100, 200, 50.0)], truth)
    assert rep.epochs[0].n_truth == 1


def test_summary_percentiles():
    s = summarize(list(range(101)))
    assert (s["median"], s["p5"], s["p95"], s["p10"], s["p90"]) == (50, 5, 95, 10, 90)


def test_report_median_and_fraction():
    truth = [rec(i, 100 * i, 100 * i + 50) for i in range(4)]
    ests = [est(100 * i, 100 * i + 100, v) for i, v in enumerate([50.0, 55.0, 40.0, 100.0])]
    rep = evaluate(ests, truth)
    assert rep.rel_errors() == [0.0, -10.0, 20.0, -100.0]
    assert rep.median_abs_rel_error() == 15.0
    assert rep.fraction_within(15.0) == 0.5
