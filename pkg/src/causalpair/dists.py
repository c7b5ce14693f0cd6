"""Small distribution and unit-parsing helpers for simulator configs.

Distributions are written as ``kind:arg1,arg2`` strings, e.g. ``const:1ms``,
``uniform:0.9ms,1.1ms``, ``exp:2ms``, ``lognormal:11.8KB,1.0,1.2MB``,
``uniform_int:1,4``, ``choice:1,2,4`` or the ``web`` response-size preset.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np

_DURATION_UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000}
_SIZE_UNITS = {"b": 1, "kb": 1_000, "mb": 1_000_000, "gb": 1_000_000_000}
_NUM_RE = re.compile(r"^\s*([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*([a-zA-Z]*)\s*$")

# median and max object sizes per type (CSS, JS, HTML, image)
WEB_OBJECT_SIZES = (
    (11_800, 1_200_000),
    (19_600, 4_050_000),
    (39_500, 2_650_000),
    (20_800, 8_860_000),
)
WEB_SIZE_SIGMA = 1.0


def _parse_with_units(text: str, units: dict, what: str) -> float:
    m = _NUM_RE.match(str(text))
    if not m:
        raise ValueError(f"cannot parse {what} {text!r}")
    value, unit = float(m.group(1)), m.group(2).lower()
    if not unit:
        return value
    if unit not in units:
        raise ValueError(f"unknown {what} unit {unit!r} in {text!r}")
    return value * units[unit]


def parse_duration(text: str) -> float:
    """Duration in nanoseconds; bare numbers are nanoseconds."""
    return _parse_with_units(text, _DURATION_UNITS, "duration")


def parse_size(text: str) -> float:
    """Size in bytes; bare numbers are bytes."""
    return _parse_with_units(text, _SIZE_UNITS, "size")


def parse_number(text: str) -> float:
    return _parse_with_units(text, {}, "number")


@dataclass(frozen=True)
class Dist:
    kind: str
    args: Tuple[float, ...] = ()
    text: str = ""

    def sample(self, rng: np.random.Generator) -> float:
        k, a = self.kind, self.args
        if k == "const":
            return a[0]
        if k == "uniform":
            return rng.uniform(a[0], a[1])
        if k == "uniform_int":
            return float(rng.integers(int(a[0]), int(a[1]) + 1))
        if k == "exp":
            return rng.exponential(a[0])
        if k == "normal":
            return max(0.0, rng.normal(a[0], a[1]))
        if k == "lognormal":
            v = a[0] * math.exp(a[1] * rng.standard_normal())
            return min(v, a[2]) if len(a) > 2 else v
        if k == "choice":
            return a[int(rng.integers(len(a)))]
        if k == "web":
            median, cap = WEB_OBJECT_SIZES[int(rng.integers(len(WEB_OBJECT_SIZES)))]
            return min(median * math.exp(WEB_SIZE_SIGMA * rng.standard_normal()), cap)
        raise ValueError(f"unknown distribution kind {k!r}")

    def mean(self) -> float:
        k, a = self.kind, self.args
        if k == "const":
            return a[0]
        if k in ("uniform", "uniform_int"):
            return (a[0] + a[1]) / 2
        if k in ("exp", "normal"):
            return a[0]
        if k == "choice":
            return sum(a) / len(a)
        if k == "lognormal":
            return a[0] * math.exp(a[1] ** 2 / 2)
        raise ValueError(f"no closed-form mean for {k!r}")

    def max(self) -> float:
        k, a = self.kind, self.args
        if k == "const":
            return a[0]
        if k in ("uniform", "uniform_int"):
            return a[1]
        if k == "choice":
            return max(a)
        if k == "lognormal" and len(a) > 2:
            return a[2]
        return math.inf

    def __str__(self) -> str:
        return self.text or f"{self.kind}:{','.join(repr(x) for x in self.args)}"


_ARITY = {"const": (1, 1), "uniform": (2, 2), "uniform_int": (2, 2), "exp": (1, 1),
          "normal": (2, 2), "lognormal": (2, 3), "choice": (1, 10_000), "web": (0, 0)}
# arguments that are shape parameters, not quantities with units
_SHAPE_ARGS = {"normal": (), "lognormal": (1,)}


def parse_dist(text: str, unit_parser: Callable[[str], float] = parse_number) -> Dist:
    text = str(text).strip()
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind not in _ARITY:
        # a bare quantity means a constant
        return Dist("const", (unit_parser(text),), text)
    raw = [r for r in rest.split(",") if r.strip()] if rest else []
    lo, hi = _ARITY[kind]
    if not lo <= len(raw) <= hi:
        raise ValueError(f"{kind} takes {lo}..{hi} arguments, got {len(raw)} in {text!r}")
    shape = _SHAPE_ARGS.get(kind, ())
    args = tuple(parse_number(r) if i in shape else unit_parser(r) for i, r in enumerate(raw))
    if kind == "uniform" and args[0] > args[1]:
        raise ValueError(f"uniform bounds reversed in {text!r}")
    if any(x < 0 for i, x in enumerate(args) if i not in shape):
        raise ValueError(f"negative parameter in {text!r}")
    return Dist(kind, args, text)


def const(value: float) -> Dist:
    return Dist("const", (float(value),))


def uniform(lo: float, hi: float) -> Dist:
    return Dist("uniform", (float(lo), float(hi)))


def quantiles(values: Sequence[float], qs: Sequence[float]) -> list:
    if len(values) == 0:
        return [math.nan] * len(qs)
    return [float(x) for x in np.percentile(np.asarray(values, dtype=float), qs)]
