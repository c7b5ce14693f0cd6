import csv
import io
from dataclasses import replace

import pytest

from causalpair.ablation import (AblationSpec, cdf_csv, p95_abs, prominent_gap_samples, run_ablation,
                                 run_depth, summary_rows)
from causalpair.dists import const
from causalpair.simcore import MS, run_sim


def quick(**kw):
    spec = AblationSpec(**kw)
    return replace(spec, workload=replace(spec.workload, duration_ns=1_000 * MS))


def test_depth_one_without_think_time_is_exact():
    spec = quick(page_width=0)
    spec = replace(spec, workload=replace(spec.workload, think_time=const(0), fanout=const(0)))
    errs = run_depth(spec, 1)
    assert errs["req_to_req"] and all(e == 0.0 for e in errs["req_to_req"])


def test_prominent_gap_matches_trigger_parent():
    spec = quick()
    res = run_sim(spec.workload_for(1), spec.network, spec.server)
    samples = prominent_gap_samples(res, spec.delta_fraction)
    assert samples
    # at depth 1 every batch is one request, so the sample spans exactly its parent's req-to-req
    for s in samples:
        assert s.value_ns == pytest.approx(s.baseline_ns, abs=1)


def test_workload_scales_page_width():
    spec = quick(page_width=3.0)
    assert spec.workload_for(8).fanout.args == (1.0, 24.0)
    assert spec.workload_for(8).pipeline_depth == 8
    assert quick(page_width=0).workload_for(8).fanout == spec.workload.fanout


def test_outputs_shapes():
    res = run_ablation(quick(depths=(2, 4)))
    assert set(res) == {"req_to_req", "prominent_gap", "estimator"}
    rows = summary_rows(res)
    assert len(rows) == 6 and all(r["n"] > 0 for r in rows)
    lines = list(csv.reader(io.StringIO(cdf_csv(res, points=11))))
    assert lines[0] == ["arm", "depth", "cdf", "rel_error_pct"]
    assert len(lines) == 1 + 6 * 11
    assert p95_abs([]) != p95_abs([])


@pytest.mark.parametrize("kw", [dict(depths=()), dict(depths=(0,)), dict(delta_fraction=0),
                                dict(page_width=-1)])
def test_validation(kw):
    with pytest.raises(ValueError):
        run_ablation(quick(**kw))
