import pytest
from hypothesis import given
from hypothesis import strategies as st

from causalpair.gapthresh import BatchTrackerState, ContractViolation, observe, run_fixed_threshold
from causalpair.ingest import FlowKey, PacketObservation

US = 1_000


def run(times_us, delta_us):
    st_ = BatchTrackerState()
    out = []
    for t in times_us:
        s = observe(st_, t * US, delta_us * US)
        if s is not None:
            out.append(s.value_ns)
    return out


def test_hand_trace():
    assert run([0, 10, 20, 500, 510, 1000], 100) == [500 * US, 500 * US]


def test_gap_equal_to_delta_stays_in_batch():
    assert run([0, 100, 200], 100) == []
    assert run([0, 101], 100) == [101 * US]


def test_first_packet_only_initialises():
    s = BatchTrackerState()
    assert observe(s, 5_000_000, 1) is None
    assert s.time_last_batch == s.time_last_pkt == 5_000_000


def test_backwards_timestamp_is_contract_violation():
    s = BatchTrackerState()
    observe(s, 10, 5)
    with pytest.raises(ContractViolation):
        observe(s, 9, 5)


def test_nonpositive_delta_rejected():
    with pytest.raises(ValueError):
        observe(BatchTrackerState(), 0, 0)


def test_per_flow_trackers_and_ack_skip():
    a, b = FlowKey.label("a"), FlowKey.label("b")
    obs = [PacketObservation(a, 0, 100), PacketObservation(b, 50 * US, 100),
           PacketObservation(a, 300 * US, 0, is_pure_ack=True),
           PacketObservation(a, 600 * US, 100), PacketObservation(b, 700 * US, 100)]
    got = [(str(s.flow), s.value_ns) for s in run_fixed_threshold(obs, 100 * US)]
    assert got == [("a", 300 * US), ("a", 300 * US), ("b", 650 * US)]
    got = [(str(s.flow), s.value_ns) for s in run_fixed_threshold(obs, 100 * US, skip_pure_acks=True)]
    assert got == [("a", 600 * US), ("b", 650 * US)]


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=200), st.integers(1, 5_000))
def test_samples_tile_the_batch_starts(gaps, delta):
    times, t = [], 0
    for g in gaps:
        t += g
        times.append(t)
    s = BatchTrackerState()
    samples = [x for x in (observe(s, t, delta) for t in times) if x is not None]
    starts = [times[0]] + [times[i] for i in range(1, len(times)) if times[i] - times[i - 1] > delta]
    assert [x.emitted_at_ns for x in samples] == starts[1:]
    assert [x.value_ns for x in samples] == [b - a for a, b in zip(starts, starts[1:])]
