"""Random input generators shared by the property and acceptance tests."""

import math
import random

from causalpair.lbctl import ControllerConfig, ServerStats, update_weights

MS = 1_000_000


def random_stats(rng: random.Random):
    n = rng.randint(2, 8)
    weights = [rng.choice([0.0, rng.random(), rng.random() * 100]) for _ in range(n)]
    if sum(weights) == 0:
        weights[0] = 1.0
    lat = [rng.choice([None, rng.uniform(0.1, 50) * MS, rng.lognormvariate(14, 1)]) for _ in range(n)]
    active = [rng.choice([0, rng.randint(1, 50)]) for _ in range(n)]
    req = [rng.randint(0, 500) for _ in range(n)]
    stale = [rng.random() < 0.1 for _ in range(n)]
    return [ServerStats(i, lat[i], req[i], active[i], weights[i], stale[i]) for i in range(n)]


def random_cfg(rng: random.Random):
    lo = rng.uniform(1.01, 2.0)
    return ControllerConfig(alpha_low=lo, alpha_high=lo + rng.uniform(0.01, 1.0),
                            shift_fraction=rng.uniform(0.01, 1.0), increment_cap=rng.uniform(0.01, 1.0),
                            equalize_step=rng.uniform(0.01, 1.0))


def check_update_invariants(rng: random.Random) -> None:
    """One randomized update: conservation, non-negativity, gating, scale invariance."""
    s = random_stats(rng)
    cfg = random_cfg(rng)
    k = rng.randint(0, 5)
    dec = update_weights(s, cfg, stable_intervals=k)
    total = math.fsum(x.weight for x in s)
    assert abs(math.fsum(dec.weights) - total) <= 1e-9 * total
    assert all(w >= 0 for w in dec.weights)
    for x, w in zip(s, dec.weights):
        if x.freshness is None:
            assert w <= x.weight + 1e-12 * total
    if dec.donors:
        bar = max(s[i].freshness or 0.0 for i in dec.donors)
        for x, w in zip(s, dec.weights):
            if x.freshness is not None and x.freshness < bar:
                assert w <= x.weight + 1e-12 * total
    # selection depends only on latency ratios
    c = rng.choice([1e-3, 0.5, 7.0, 1e4])
    scaled = [ServerStats(x.server_id, None if x.avg_latency_ns is None else x.avg_latency_ns * c,
                          x.requests_last_interval, x.active_connections, x.weight, x.stale) for x in s]
    dec2 = update_weights(scaled, cfg, stable_intervals=k)
    assert (dec2.donors, dec2.receivers, dec2.equalized) == (dec.donors, dec.receivers, dec.equalized)
