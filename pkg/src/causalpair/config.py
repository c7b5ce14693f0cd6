"""INI-style experiment configuration.

One file holds every knob, grouped into sections::

    [workload]
    num_connections = 4
    pipeline_depth = 1
    think_time = const:0
    response_size = 1000
    duration = 20s

    [network]
    fwd_loss_rate = 0.01

    [server]
    service_time = uniform:0.8ms,1.2ms

    [estimator]
    epoch = 100ms

    [lbsim]
    utilizations = 0.65
    servers = uniform:0.5ms,1.5ms x3 | uniform:1ms,3ms

    [controller]
    alpha_high = 1.5

    [ablate]
    depths = 4, 8, 16

Durations take ns/us/ms/s suffixes, sizes b/kb/mb/gb. Distribution-valued
keys use the ``kind:args`` syntax of :mod:`causalpair.dists`; a bare quantity
means a constant. Unknown sections or keys are rejected so typos surface.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from .ablation import AblationSpec
from .dists import Dist, parse_duration, parse_dist, parse_number, parse_size
from .estimator import EstimatorConfig
from .lbctl import ControllerConfig
from .lbsim import LbExperimentSpec
from .simcore import ConfigError, NetworkSpec, ServerSpec, WorkloadSpec


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    v = parse_number(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _ns(text: str) -> int:
    return int(round(parse_duration(text)))


def _opt_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none", "unlimited") else _int(text)


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(_int(x) for x in text.split(",") if x.strip())


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(parse_number(x) for x in text.split(",") if x.strip())


def _dur_dist(text: str) -> Dist:
    return parse_dist(text, parse_duration)


def _size_dist(text: str) -> Dist:
    return parse_dist(text, parse_size)


def _num_dist(text: str) -> Dist:
    return parse_dist(text, parse_number)


def _schedule(text: str) -> Tuple[Tuple[int, float], ...]:
    """``0s:1.0, 5s:0.5`` -> ((0, 1.0), (5e9, 0.5))."""
    out = []
    for item in text.split(","):
        if not item.strip():
            continue
        at, _, factor = item.partition(":")
        if not factor:
            raise ValueError(f"capacity step {item!r} needs time:factor")
        out.append((_ns(at), parse_number(factor)))
    return tuple(sorted(out))


def _servers(text: str) -> List[ServerSpec]:
    """``|``-separated service-time distributions; ``dist xN`` repeats one N times.

    Each entry may carry ``@W`` for W parallel workers (default 4).
    """
    out: List[ServerSpec] = []
    for item in text.split("|"):
        item = item.strip()
        count = 1
        if " x" in item:
            item, _, n = item.rpartition(" x")
            count = _int(n)
            if count < 1:
                raise ValueError(f"server repeat count must be positive, got {count}")
        workers: Optional[int] = 4
        if "@" in item:
            item, _, w = item.rpartition("@")
            workers = _opt_int(w)
        spec = ServerSpec(service_time=_dur_dist(item.strip()), workers=workers)
        out.extend([spec] * count)
    return out


Parser = Callable[[str], Any]

_WORKLOAD: Dict[str, Tuple[str, Parser]] = {
    "num_connections": ("num_connections", _int),
    "pipeline_depth": ("pipeline_depth", _int),
    "request_size": ("request_size", _size_dist),
    "response_size": ("response_size", _size_dist),
    "think_time": ("think_time", _dur_dist),
    "fanout": ("fanout", _num_dist),
    "tree_levels": ("tree_levels", _int),
    "duration": ("duration_ns", _ns),
    "requests_per_connection": ("requests_per_connection", _opt_int),
    "start_spread": ("start_spread_ns", _ns),
    "seed": ("seed", _int),
}
_NETWORK: Dict[str, Tuple[str, Parser]] = {
    "fwd_owd": ("fwd_owd", _dur_dist),
    "rev_owd": ("rev_owd", _dur_dist),
    "fwd_loss_rate": ("fwd_loss_rate", parse_number),
    "fwd_reorder_rate": ("fwd_reorder_rate", parse_number),
    "link_rate_bps": ("link_rate_bps", parse_number),
    "mtu": ("mtu", _int),
    "ack_every": ("ack_every", _int),
    "retx_timeout": ("retx_timeout_ns", _ns),
}
_SERVER: Dict[str, Tuple[str, Parser]] = {
    "service_time": ("service_time", _dur_dist),
    "workers": ("workers", _opt_int),
    "capacity_schedule": ("capacity_schedule", _schedule),
}
_ESTIMATOR: Dict[str, Tuple[str, Parser]] = {
    "epoch": ("epoch_ns", _ns),
    "rto_floor": ("rto_floor_ns", _ns),
    "idle_floor": ("idle_floor_ns", _ns),
    "modes": ("modes", _int),
    "eps_floor": ("eps_floor_ns", _ns),
    "eps_frac": ("eps_frac", parse_number),
    "ack_coalescing": ("ack_coalescing", _bool),
    "mtu_marking": ("mtu_marking", _bool),
}
_CONTROLLER: Dict[str, Tuple[str, Parser]] = {
    "alpha_high": ("alpha_high", parse_number),
    "alpha_low": ("alpha_low", parse_number),
    "k_stable_intervals": ("k_stable_intervals", _int),
    "shift_fraction": ("shift_fraction", parse_number),
    "increment_cap": ("increment_cap", parse_number),
    "equalize_step": ("equalize_step", parse_number),
    "stability_tolerance": ("stability_tolerance", parse_number),
}
_LBSIM: Dict[str, Tuple[str, Parser]] = {
    "servers": ("servers", _servers),
    "loads": ("offered_loads", _floats),
    "duration": ("duration_ns", _ns),
    "warmup": ("warmup_ns", _ns),
    "interval": ("interval_ns", _ns),
    "latency_window": ("latency_window", _int),
    "latency_aggregate": ("latency_aggregate", str.strip),
    "use_partial_epochs": ("use_partial_epochs", _bool),
    "requests_per_connection": ("requests_per_connection", _int),
    "think_time": ("think_time", _dur_dist),
    "request_size": ("request_size", _size_dist),
    "response_size": ("response_size", _size_dist),
    "trials": ("trials", _int),
    "seed": ("seed", _int),
}
# lbsim keys handled outside the field table
_LBSIM_EXTRA = {"utilizations", "controller"}
_ABLATE: Dict[str, Tuple[str, Parser]] = {
    "depths": ("depths", _ints),
    "delta_fraction": ("delta_fraction", parse_number),
    "page_width": ("page_width", parse_number),
}

SECTIONS = ("workload", "network", "server", "estimator", "controller", "lbsim", "ablate")


@dataclass
class ExperimentConfig:
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    server: ServerSpec = field(default_factory=ServerSpec)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    lbsim: LbExperimentSpec = field(default_factory=LbExperimentSpec)
    ablate: AblationSpec = field(default_factory=AblationSpec)
    source: Optional[str] = None

    def to_dict(self) -> dict:
        """Every setting, defaults included, in a JSON-friendly form."""
        return _plain({s: getattr(self, s) for s in SECTIONS})


def _plain(obj: Any) -> Any:
    if isinstance(obj, Dist):
        return str(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _apply(obj: Any, section: configparser.SectionProxy, table: Dict[str, Tuple[str, Parser]],
           extra: frozenset = frozenset()) -> Any:
    updates = {}
    for key, raw in section.items():
        if key in extra:
            continue
        if key not in table:
            raise ConfigError(f"[{section.name}] unknown key {key!r}")
        name, parse = table[key]
        try:
            updates[name] = parse(raw)
        except ValueError as e:
            raise ConfigError(f"[{section.name}] {key}: {e}") from None
    return replace(obj, **updates) if updates else obj


def parse_config(text: str, source: Optional[str] = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")

    cfg = ExperimentConfig(source=source)
    get = lambda s: cp[s] if cp.has_section(s) else None  # noqa: E731
    if get("workload") is not None:
        cfg.workload = _apply(cfg.workload, cp["workload"], _WORKLOAD)
    if get("network") is not None:
        cfg.network = _apply(cfg.network, cp["network"], _NETWORK)
    if get("server") is not None:
        cfg.server = _apply(cfg.server, cp["server"], _SERVER)
    if get("estimator") is not None:
        try:
            cfg.estimator = _apply(cfg.estimator, cp["estimator"], _ESTIMATOR)
        except ValueError as e:
            raise ConfigError(f"[estimator] {e}") from None
    if get("controller") is not None:
        try:
            cfg.controller = _apply(cfg.controller, cp["controller"], _CONTROLLER)
        except ValueError as e:
            raise ConfigError(f"[controller] {e}") from None

    lb = replace(cfg.lbsim, estimator=cfg.estimator, controller=cfg.controller)
    if get("lbsim") is not None:
        sec = cp["lbsim"]
        lb = _apply(lb, sec, _LBSIM, frozenset(_LBSIM_EXTRA))
        if "controller" in sec:
            mode = sec["controller"].strip().lower()
            if mode == "uniform":
                lb = replace(lb, controller=None)
            elif mode != "aware":
                raise ConfigError("[lbsim] controller must be 'aware' or 'uniform'")
        if "utilizations" in sec:
            if "loads" in sec:
                raise ConfigError("[lbsim] give either loads or utilizations, not both")
            cap = lb.capacity_rps()
            lb = replace(lb, offered_loads=tuple(u * cap for u in _floats(sec["utilizations"])))
    cfg.lbsim = lb

    # the ablation keeps its own defaults unless the shared sections are given
    ab = replace(cfg.ablate, estimator=cfg.estimator)
    if get("network") is not None:
        ab = replace(ab, network=cfg.network)
    if get("server") is not None:
        ab = replace(ab, server=cfg.server)
    if get("workload") is not None:
        ab = replace(ab, workload=replace(ab.workload, **{
            _WORKLOAD[k][0]: getattr(cfg.workload, _WORKLOAD[k][0]) for k in cp["workload"]}))
    if get("ablate") is not None:
        ab = _apply(ab, cp["ablate"], _ABLATE)
    cfg.ablate = ab
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    return parse_config(p.read_text(), str(p))
