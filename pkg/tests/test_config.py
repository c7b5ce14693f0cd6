import pytest

from causalpair.config import ExperimentConfig, load_config, parse_config
from causalpair.simcore import MS, US, ConfigError


def test_defaults_round_trip_to_plain_dict():
    d = ExperimentConfig().to_dict()
    assert d["estimator"]["epoch_ns"] == 100 * MS
    assert isinstance(d["workload"]["think_time"], str)


def test_sections_and_units():
    cfg = parse_config("""
[workload]
pipeline_depth = 4
think_time = uniform:0us,50us   ; inline comment
duration = 2s
requests_per_connection = none
[network]
fwd_loss_rate = 0.01
link_rate_bps = 1e9
[server]
service_time = exp:2ms
workers = 4
capacity_schedule = 5s:0.5, 0s:1.0
[estimator]
epoch = 50ms
mtu_marking = off
""")
    assert cfg.workload.pipeline_depth == 4
    assert (cfg.workload.think_time.kind, cfg.workload.think_time.args) == ("uniform", (0.0, 50 * US))
    assert cfg.workload.duration_ns == 2_000 * MS and cfg.workload.requests_per_connection is None
    assert cfg.network.fwd_loss_rate == 0.01 and cfg.network.link_rate_bps == 1e9
    assert cfg.server.capacity_schedule == ((0, 1.0), (5_000 * MS, 0.5))
    assert cfg.estimator.epoch_ns == 50 * MS and not cfg.estimator.mtu_marking
    # lbsim and ablation pick up the shared estimator
    assert cfg.lbsim.estimator.epoch_ns == 50 * MS and cfg.ablate.estimator.epoch_ns == 50 * MS
    assert cfg.ablate.workload.pipeline_depth == 4 and cfg.ablate.server.workers == 4


def test_lbsim_servers_and_utilizations():
    cfg = parse_config("""
[lbsim]
servers = const:1ms x3 | const:2ms@1
utilizations = 0.5, 0.75
controller = aware
[controller]
alpha_high = 2.0
""")
    lb = cfg.lbsim
    assert len(lb.servers) == 4 and [s.workers for s in lb.servers] == [4, 4, 4, 1]
    cap = 3 * 4 * 1000 + 500
    assert lb.offered_loads == pytest.approx((0.5 * cap, 0.75 * cap))
    assert lb.controller.alpha_high == 2.0


def test_uniform_controller_and_ablate():
    cfg = parse_config("[lbsim]\ncontroller = uniform\n[ablate]\ndepths = 2, 4\npage_width = 0\n")
    assert cfg.lbsim.controller is None
    assert tuple(cfg.ablate.depths) == (2, 4) and cfg.ablate.page_width == 0


@pytest.mark.parametrize("text", [
    "[bogus]\n",
    "[workload]\nnope = 1\n",
    "[workload]\npipeline_depth = 2.5\n",
    "[estimator]\nepoch = 0\n",
    "[controller]\nalpha_low = 2\n",
    "[lbsim]\nloads = 1\nutilizations = 0.5\n",
    "[lbsim]\ncontroller = greedy\n",
    "[lbsim]\nservers = const:1ms x0\n",
    "[estimator]\nmtu_marking = maybe\n",
    "[server]\ncapacity_schedule = 5s\n",
    "not an ini",
])
def test_rejects_bad_config(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_from_file(tmp_path):
    p = tmp_path / "x.ini"
    p.write_text("[workload]\nseed = 9\n")
    cfg = load_config(p)
    assert cfg.workload.seed == 9 and cfg.source == str(p)
