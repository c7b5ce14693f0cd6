import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalpair.estimator import (EpochEstimate, EstimatorConfig, FlowEstimator, denoise,
                                  estimate_stream, proportional_mode_sum)
from causalpair.gapthresh import ContractViolation
from causalpair.ingest import FlowKey, PacketObservation
from causalpair.modehist import ModeSummary

from oracles import midstream_flow, mode_sum_by_hand

US = 1_000
MS = 1_000_000
FLOW = FlowKey.label("f")


def obs_stream(pairs, flow=FLOW, full_mtu=False):
    return [PacketObservation(flow, t, 0 if ack else 500, ack, full_mtu and not ack) for t, ack in pairs]


def complete(ests):
    return [e for e in ests if not e.partial]


def test_worked_example_950us():
    modes = [ModeSummary(100 * US, 4, False), ModeSummary(150 * US, 2, False),
             ModeSummary(250 * US, 1, False)]
    assert proportional_mode_sum(modes) == 950 * US


def test_candidate_overrides_largest():
    modes = [ModeSummary(10 * US, 6, False), ModeSummary(300 * US, 2, True),
             ModeSummary(900 * US, 1, False)]
    # modes above the chosen inter-batch gap are left out
    assert proportional_mode_sum(modes) == pytest.approx((60 + 600) * US / 2)


def test_empty_is_none():
    assert proportional_mode_sum([]) is None


@given(st.lists(st.tuples(st.integers(1, 10**7), st.integers(1, 1000)), min_size=1, max_size=10,
                unique_by=lambda x: x[0]))
def test_mode_sum_matches_hand_oracle(pairs):
    modes = [ModeSummary(float(m), c, False) for m, c in pairs]
    got = proportional_mode_sum(modes)
    want = mode_sum_by_hand([m for m, _ in pairs], [c for _, c in pairs])
    assert got == pytest.approx(want, rel=1e-12)


def test_mode_sum_scales_linearly():
    modes = [ModeSummary(100.0, 4, False), ModeSummary(250.0, 1, True)]
    scaled = [ModeSummary(3 * m.mean_ns, m.count, m.candidate) for m in modes]
    assert proportional_mode_sum(scaled) == pytest.approx(3 * proportional_mode_sum(modes))


def test_denoise_drops_rto_scale_modes():
    cfg = EstimatorConfig()
    modes = [ModeSummary(1 * MS, 3, True), ModeSummary(200 * MS, 1, True), ModeSummary(5e9, 1, True)]
    assert denoise(modes, cfg) == modes[:1]


@pytest.mark.parametrize("batch", [2, 4, 8])
@pytest.mark.parametrize("ibg_us", [200, 2_000, 50_000])
def test_periodic_flow_exact(batch, ibg_us):
    period = (batch - 1) * 10 * US + ibg_us * US
    k = max(round(100 * MS / period), 20)
    pairs, epoch = midstream_flow(batch, 10 * US, ibg_us * US, k, epochs=4)
    ests = complete(estimate_stream(obs_stream(pairs), EstimatorConfig(epoch_ns=epoch)))
    assert len(ests) == 4
    for e in ests:
        assert math.isclose(e.estimate_ns, period, rel_tol=1e-9)


@pytest.mark.parametrize("batch", [2, 8])
def test_interleaved_acks_change_nothing(batch):
    pairs, epoch = midstream_flow(batch, 10 * US, 2 * MS, 50, epochs=3)
    with_acks = []
    for i, (t, ack) in enumerate(pairs):
        with_acks.append((t, ack))
        if i % 3 == 1:
            with_acks.append((t + 3 * US, True))
    with_acks.sort()
    cfg = EstimatorConfig(epoch_ns=epoch)
    a = [e.estimate_ns for e in estimate_stream(obs_stream(pairs), cfg)]
    b = [e.estimate_ns for e in estimate_stream(obs_stream(with_acks), cfg)]
    assert a == b
    # without coalescing the ack gaps pollute the histogram
    c = [e.estimate_ns for e in estimate_stream(obs_stream(with_acks), EstimatorConfig(epoch_ns=epoch, ack_coalescing=False))]
    assert c != a


@pytest.mark.parametrize("idle_s", [1, 2.5])
def test_idle_periods_are_denoised(idle_s):
    batch, ibg = 4, 2 * MS
    period = (batch - 1) * 10 * US + ibg
    pairs, epoch = midstream_flow(batch, 10 * US, ibg, 50, epochs=6)
    # stretch one inter-batch gap in the third epoch by a whole number of epochs
    shift = math.ceil(idle_s * 1e9 / epoch) * epoch
    cut = next(i for i, (t, _) in enumerate(pairs) if t > 2.5 * epoch and (i - 1) % batch == 1)
    shifted = pairs[:cut] + [(t + shift, a) for t, a in pairs[cut:]]
    ests = complete(estimate_stream(obs_stream(shifted), EstimatorConfig(epoch_ns=epoch)))
    # the interrupted epoch is reported in two pieces, one each side of the idle period
    assert len(ests) == 7
    for e in ests:
        # the piece after the idle period loses the inter-batch gap it swallowed
        assert e.estimate_ns == pytest.approx(period, rel=1e-3)
    assert sum(not math.isclose(e.estimate_ns, period, rel_tol=1e-9) for e in ests) <= 1


def test_mtu_marking_picks_the_causal_gap():
    # full-MTU trains separated by a long gap that is not causal (the sender stalled mid-response)
    cfg = EstimatorConfig(epoch_ns=1_000 * MS)
    fe = FlowEstimator(FLOW, cfg)
    t = 0
    for _ in range(100):
        for i in range(6):
            full = i not in (2, 5)
            fe.on_packet(PacketObservation(FLOW, t, 1460 if full else 300, False, full))
            t += 10 * US if i != 2 else 400 * US
        t += 300 * US - 10 * US
    est = fe.end_epoch(t)
    # the 300us gaps follow a short packet; the 400us stalls follow one too, so both are candidates
    assert est.estimate_ns == pytest.approx(4 * 10 * US + 300 * US + 400 * US, rel=0.01)
    fe2 = FlowEstimator(FLOW, cfg)
    t = 0
    for _ in range(100):
        for i in range(6):
            full = i != 5
            fe2.on_packet(PacketObservation(FLOW, t, 1460 if full else 300, False, full))
            t += 10 * US if i != 2 else 400 * US
        t += 300 * US - 10 * US
    est2 = fe2.end_epoch(t)
    # now the stall follows a full-MTU packet, so only the 300us gap can be the inter-batch gap
    assert est2.estimate_ns == pytest.approx(4 * 10 * US + 300 * US, rel=0.01)


def test_epochs_anchor_at_first_packet_and_skip_empty_ones():
    fe = FlowEstimator(FLOW, EstimatorConfig(epoch_ns=100 * MS))
    assert fe.on_packet(PacketObservation(FLOW, 7 * MS, 100)) is None
    assert fe.on_packet(PacketObservation(FLOW, 8 * MS, 100)) is None
    e = fe.on_packet(PacketObservation(FLOW, 350 * MS, 100))
    assert (e.epoch_start_ns, e.epoch_end_ns, e.estimate_ns) == (7 * MS, 107 * MS, 1 * MS)
    assert fe.epoch_start_ns == 307 * MS
    last = fe.finish()
    assert last.partial and last.epoch_start_ns == 307 * MS and last.epoch_end_ns == 350 * MS
    # the 342ms gap is at rto scale and de-noised away
    assert last.estimate_ns is None and last.gaps_observed == 1
    assert fe.finish() is None


def test_regressing_timestamp_rejected():
    fe = FlowEstimator(FLOW)
    fe.on_packet(PacketObservation(FLOW, 10, 100))
    with pytest.raises(ContractViolation):
        fe.on_packet(PacketObservation(FLOW, 9, 100))


def test_flows_are_independent():
    a, b = FlowKey.label("a"), FlowKey.label("b")
    pa, epoch = midstream_flow(4, 10 * US, 1 * MS, 50, 2)
    pb, _ = midstream_flow(2, 10 * US, 1 * MS, 50, 2)
    mixed = sorted(obs_stream(pa, a) + obs_stream(pb, b), key=lambda o: o.timestamp_ns)
    cfg = EstimatorConfig(epoch_ns=epoch)
    est = {}
    for e in complete(estimate_stream(mixed, cfg)):
        est.setdefault(str(e.flow), []).append(e.estimate_ns)
    assert est["a"] == [e.estimate_ns for e in complete(estimate_stream(obs_stream(pa, a), cfg))]
    assert est["b"] == [e.estimate_ns for e in complete(estimate_stream(obs_stream(pb, b), cfg))]


def test_state_fits_in_256_bytes():
    fe = FlowEstimator(FLOW, EstimatorConfig(modes=10))
    t = 0
    for i in range(5_000):
        t += 10 * US * 2 ** (i % 12)
        fe.on_packet(PacketObservation(FLOW, t, 100, False, i % 3 == 0))
    assert len(fe.hist.modes) == 10
    blob = fe.to_bytes()
    assert len(blob) <= 256
    assert len(blob) == 28 + 20 * 10


def test_state_round_trip():
    cfg = EstimatorConfig(epoch_ns=50 * MS)
    pairs, _ = midstream_flow(4, 10 * US, 3 * MS, 40, 3)
    obs = obs_stream(pairs)
    half = len(obs) // 2
    fe = FlowEstimator(FLOW, cfg)
    out_a = [fe.on_packet(o) for o in obs]
    fe1 = FlowEstimator(FLOW, cfg)
    out_b = [fe1.on_packet(o) for o in obs[:half]]
    fe2 = FlowEstimator.from_bytes(FLOW, fe1.to_bytes(), cfg)
    assert fe2.to_bytes() == fe1.to_bytes()
    out_b += [fe2.on_packet(o) for o in obs[half:]]
    assert out_a == out_b
    assert fe.finish() == fe2.finish()


def test_json_round_trip():
    e = EpochEstimate(FLOW, 0, 100, 950.0, (ModeSummary(100.0, 4, False), ModeSummary(250.0, 1, True)),
                      5, 0, partial=True)
    assert EpochEstimate.from_json(e.to_json()) == e


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(epoch_ns=0)
    with pytest.raises(ValueError):
        EstimatorConfig(rto_floor_ns=2_000 * MS, idle_floor_ns=1_000 * MS)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3 * MS), st.booleans(), st.booleans()), max_size=400))
def test_estimates_bounded_by_gap_sum(steps):
    # an estimate never exceeds the total of the gaps in its epoch and is never negative
    cfg = EstimatorConfig(epoch_ns=20 * MS)
    t, obs = 0, []
    for dt, ack, full in steps:
        t += dt
        obs.append(PacketObservation(FLOW, t, 0 if ack else 1000, ack, full and not ack))
    for e in estimate_stream(obs, cfg):
        assert e.gaps_discarded <= e.gaps_observed
        if e.estimate_ns is not None:
            assert e.estimate_ns > 0 or all(m.mean_ns == 0 for m in e.modes)
            kept = [m for m in e.modes if m.mean_ns < cfg.rto_floor_ns]
            assert e.estimate_ns <= sum(m.count * m.mean_ns for m in kept) + 1e-6
