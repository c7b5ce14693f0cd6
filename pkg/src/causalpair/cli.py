"""Command-line entry point.

Subcommands: ``estimate``, ``simulate``, ``evaluate``, ``lbsim``, ``ablate``.
Every run writes a manifest (resolved config, paths, seed, version) next to
its output, or to stderr when the output goes to stdout.

Exit status: 0 on success, 2 on unreadable or malformed input, 1 when a
caller contract is violated (e.g. timestamps going backwards).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Iterator, List, Optional, TextIO

from . import __version__
from .ablation import cdf_csv, run_ablation, summary_rows
from .config import ExperimentConfig, _plain, load_config
from .estimator import EpochEstimate, EstimatorConfig, estimate_stream
from .evaluation import evaluate
from .gapthresh import ContractViolation, run_fixed_threshold
from .ingest import (PCAP_MAGIC_NS, PCAP_MAGIC_US, KeyMode, PacketObservation, ParseError,
                     PcapStats, iter_csv, iter_pcap, write_csv)
from .lbsim import run_lb_experiment
from .simcore import MS, US, ConfigError, read_truth_csv, run_sim, truth_csv_rows

log = logging.getLogger("causalpair")

EXIT_OK, EXIT_CONTRACT, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Missing or unreadable input; maps to exit status 2."""


def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimator")
    g.add_argument("--epoch-ms", type=float, help="epoch length (default 100)")
    g.add_argument("--modes", type=int, help="histogram capacity N (default 10)")
    g.add_argument("--eps-floor-us", type=float, help="absolute mode tolerance floor (default 5)")
    g.add_argument("--eps-frac", type=float, help="relative mode tolerance (default 0.2)")
    g.add_argument("--rto-floor-ms", type=float, help="de-noising cut (default 200)")
    g.add_argument("--idle-floor-ms", type=float, help="idle classification floor (default 1000)")
    g.add_argument("--no-ack-coalescing", action="store_true", help="keep pure ACKs in the gap stream")
    g.add_argument("--no-mtu-marking", action="store_true", help="treat every gap as an IBG candidate")


def _add_common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--out", help=out_help)
    p.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="causalpair", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate response latency from a trace")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="pcap or CSV trace (format sniffed); - for CSV on stdin")
    src.add_argument("--csv", help="CSV trace; - for stdin")
    _add_common(p, "JSON-lines output file (default stdout)")
    _add_estimator_flags(p)
    p.add_argument("--algorithm", choices=("pirate", "fixed-threshold"), default="pirate",
                   help="mode-histogram estimator or fixed-gap batch detector")
    p.add_argument("--delta-us", type=float, help="batch gap threshold for fixed-threshold")
    p.add_argument("--mtu", type=int, default=1500, help="full-size IP packet length (default 1500)")
    p.add_argument("--key-mode", choices=("five-tuple", "ip-pair"), default="five-tuple",
                   help="flow key for pcap input")

    p = sub.add_parser("simulate", help="simulate traffic; write trace and ground truth")
    _add_common(p, "output prefix; writes PREFIX.trace.csv and PREFIX.truth.csv (default sim)")

    p = sub.add_parser("evaluate", help="score estimates against ground truth")
    p.add_argument("estimates", help="JSON-lines estimates")
    p.add_argument("truth", help="ground-truth CSV")
    p.add_argument("--out", help="JSON report file (default stdout)")
    p.add_argument("--include-partial", action="store_true", help="also score flow-end partial epochs")

    p = sub.add_parser("lbsim", help="latency-aware vs uniform load balancing")
    _add_common(p, "JSON report file (default stdout)")
    _add_estimator_flags(p)
    p.add_argument("--trials", type=int, help="paired trials per load (default 5)")

    p = sub.add_parser("ablate", help="error ladder across pipeline depths")
    _add_common(p, "CSV of per-arm error CDFs (default stdout)")
    _add_estimator_flags(p)
    return ap


def _estimator_from_flags(base: EstimatorConfig, a: argparse.Namespace) -> EstimatorConfig:
    upd = {}
    if a.epoch_ms is not None:
        upd["epoch_ns"] = int(round(a.epoch_ms * MS))
    if a.modes is not None:
        upd["modes"] = a.modes
    if a.eps_floor_us is not None:
        upd["eps_floor_ns"] = int(round(a.eps_floor_us * US))
    if a.eps_frac is not None:
        upd["eps_frac"] = a.eps_frac
    if a.rto_floor_ms is not None:
        upd["rto_floor_ns"] = int(round(a.rto_floor_ms * MS))
    if a.idle_floor_ms is not None:
        upd["idle_floor_ns"] = int(round(a.idle_floor_ms * MS))
    if a.no_ack_coalescing:
        upd["ack_coalescing"] = False
    if a.no_mtu_marking:
        upd["mtu_marking"] = False
    try:
        return replace(base, **upd)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _load(a: argparse.Namespace) -> ExperimentConfig:
    path = getattr(a, "config", None)
    if not path:
        return ExperimentConfig()
    if not Path(path).is_file():
        raise InputError(f"config file not found: {path}")
    return load_config(path)


@contextmanager
def _output(path: Optional[str]) -> Iterator[TextIO]:
    if not path or path == "-":
        yield sys.stdout
        return
    with open(path, "w", newline="") as fh:
        yield fh


def _write_manifest(command: str, out: Optional[str], manifest: dict) -> None:
    manifest = {"subcommand": command, "version": __version__, **manifest}
    text = json.dumps(_plain(manifest), indent=2, default=str) + "\n"
    if not out or out == "-":
        sys.stderr.write(text)
        return
    Path(str(out) + ".manifest.json").write_text(text)


def _open_trace(a: argparse.Namespace, stats: PcapStats) -> Iterator[PacketObservation]:
    path = a.csv or a.input
    if path == "-":
        return iter_csv(sys.stdin)
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {path}")
    if a.csv is None:
        with p.open("rb") as fh:
            head = fh.read(4)
        if len(head) == 4 and (int.from_bytes(head, "little") in (PCAP_MAGIC_US, PCAP_MAGIC_NS) or
                               int.from_bytes(head, "big") in (PCAP_MAGIC_US, PCAP_MAGIC_NS)):
            return _pcap_iter(p, KeyMode(a.key_mode), a.mtu, stats)
    return _csv_iter(p)


def _pcap_iter(p: Path, key_mode: KeyMode, mtu: int, stats: PcapStats):
    with p.open("rb") as fh:
        yield from iter_pcap(fh, key_mode=key_mode, mtu=mtu, stats=stats)


def _csv_iter(p: Path):
    with p.open(newline="") as fh:
        yield from iter_csv(fh)


def cmd_estimate(a: argparse.Namespace) -> int:
    cfg = _load(a)
    est_cfg = _estimator_from_flags(cfg.estimator, a)
    if a.algorithm == "fixed-threshold" and not a.delta_us:
        raise ConfigError("--algorithm fixed-threshold needs a positive --delta-us")
    stats = PcapStats()
    obs = _open_trace(a, stats)
    n = 0
    with _output(a.out) as fh:
        if a.algorithm == "fixed-threshold":
            delta = int(round(a.delta_us * US))
            for s in run_fixed_threshold(obs, delta, skip_pure_acks=est_cfg.ack_coalescing):
                fh.write(json.dumps({"flow": str(s.flow), "value_ns": s.value_ns,
                                     "emitted_at_ns": s.emitted_at_ns}) + "\n")
                n += 1
        else:
            for e in estimate_stream(obs, est_cfg):
                fh.write(json.dumps(e.to_json()) + "\n")
                n += 1
    if stats.skipped:
        log.warning("skipped %d undecodable frames: %s", stats.skipped, dict(stats.skip_reasons))
    _write_manifest("estimate", a.out, {
        "input": a.csv or a.input, "output": a.out or "-", "algorithm": a.algorithm,
        "delta_us": a.delta_us, "mtu": a.mtu, "key_mode": a.key_mode,
        "config": {"estimator": est_cfg}, "records": n,
        "frames_skipped": stats.skipped,
    })
    return EXIT_OK


def cmd_simulate(a: argparse.Namespace) -> int:
    cfg = _load(a)
    wl = cfg.workload if a.seed is None else replace(cfg.workload, seed=a.seed)
    res = run_sim(wl, cfg.network, cfg.server)
    prefix = a.out or "sim"
    trace, truth = f"{prefix}.trace.csv", f"{prefix}.truth.csv"
    with open(trace, "w", newline="") as fh:
        write_csv(res.observations, fh)
    with open(truth, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(truth_csv_rows(res.truth))
    _write_manifest("simulate", prefix, {
        "outputs": [trace, truth], "seed": wl.seed,
        "config": {"workload": wl, "network": cfg.network, "server": cfg.server},
        "packets": len(res.observations), "requests": len(res.truth),
        "forward_sent": res.forward_sent, "forward_lost": res.forward_lost,
    })
    return EXIT_OK


def _read_estimates(path: str) -> List[EpochEstimate]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"estimates file not found: {path}")
    out = []
    with p.open() as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(EpochEstimate.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                raise ParseError(f"bad estimate record: {e}", i) from None
    return out


def cmd_evaluate(a: argparse.Namespace) -> int:
    ests = _read_estimates(a.estimates)
    tp = Path(a.truth)
    if not tp.is_file():
        raise InputError(f"truth file not found: {a.truth}")
    with tp.open(newline="") as fh:
        try:
            truth = read_truth_csv(list(csv.reader(fh)))
        except (ValueError, IndexError) as e:
            raise ParseError(f"{a.truth}: {e}") from None
    report = evaluate(ests, truth, include_partial=a.include_partial)
    with _output(a.out) as fh:
        fh.write(json.dumps(report.summary(), indent=2) + "\n")
    _write_manifest("evaluate", a.out, {"estimates": a.estimates, "truth": a.truth,
                                        "output": a.out or "-", "include_partial": a.include_partial})
    return EXIT_OK


def cmd_lbsim(a: argparse.Namespace) -> int:
    cfg = _load(a)
    spec = replace(cfg.lbsim, estimator=_estimator_from_flags(cfg.lbsim.estimator, a))
    if a.trials is not None:
        spec = replace(spec, trials=a.trials)
    if a.seed is not None:
        spec = replace(spec, seed=a.seed)
    try:
        report = run_lb_experiment(spec)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    with _output(a.out) as fh:
        fh.write(json.dumps(report) + "\n")
    _write_manifest("lbsim", a.out, {
        "output": a.out or "-", "seed": spec.seed, "config": {"lbsim": spec},
        "summary": [{k: v for k, v in load.items() if k != "trials"} for load in report["loads"]],
    })
    return EXIT_OK


def cmd_ablate(a: argparse.Namespace) -> int:
    cfg = _load(a)
    spec = replace(cfg.ablate, estimator=_estimator_from_flags(cfg.ablate.estimator, a))
    if a.seed is not None:
        spec = replace(spec, workload=replace(spec.workload, seed=a.seed))
    try:
        results = run_ablation(spec)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    with _output(a.out) as fh:
        fh.write(cdf_csv(results))
    _write_manifest("ablate", a.out, {"output": a.out or "-", "seed": spec.workload.seed,
                                      "config": {"ablate": spec}, "summary": summary_rows(results)})
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "evaluate": cmd_evaluate,
            "lbsim": cmd_lbsim, "ablate": cmd_ablate}


def main(argv: Optional[List[str]] = None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.command](a)
    except ContractViolation as e:
        print(f"error: contract violation: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except (InputError, ParseError, ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
