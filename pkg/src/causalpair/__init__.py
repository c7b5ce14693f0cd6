"""Passive response-latency estimation from one-way packet traces.

The estimator watches only client-to-server packets, builds a small
dynamic-resolution histogram of inter-packet gaps per flow, and turns it into
an average response latency per epoch. Around it sit a closed-loop traffic
simulator that provides ground truth, an error evaluator, and a latency-aware
weight controller for a layer-4 load balancer.
"""

__version__ = "0.1.0"

from .estimator import EpochEstimate, EstimatorConfig, FlowEstimator, estimate_stream
from .ingest import FlowKey, KeyMode, PacketObservation, ParseError, parse_csv, parse_pcap
from .modehist import ModeHistogram

__all__ = [
    "EpochEstimate", "EstimatorConfig", "FlowEstimator", "estimate_stream",
    "FlowKey", "KeyMode", "PacketObservation", "ParseError", "parse_csv", "parse_pcap",
    "ModeHistogram", "__version__",
]
