"""Upscaling bike-share segment counts to AADB volumes."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from bikeflow.netgraph import EdgeKey, NetworkGraph, edge_layer
from bikeflow.router import SegmentCounts

log = logging.getLogger(__name__)

# published Kelowna coefficients, shipped as defaults
KELOWNA_LOG_LINEAR_A = 0.02717094
KELOWNA_LOG_LINEAR_B = 6.325313
KELOWNA_MULTIPLIER = 159.0
STUDY_DAYS = 91

EXP_CAP = 50.0


@dataclass(frozen=True)
class LogLinear:
    """AADB = exp(a * daily_bikeshare + b)."""

    a: float = KELOWNA_LOG_LINEAR_A
    b: float = KELOWNA_LOG_LINEAR_B
    study_days: int = STUDY_DAYS

    def __post_init__(self):
        if self.study_days <= 0:
            raise ValueError("study_days must be positive")

    def describe(self):
        return f"loglinear(a={self.a!r},b={self.b!r},days={self.study_days})"


@dataclass(frozen=True)
class Multiplier:
    """AADB = a * daily_bikeshare."""

    a: float = KELOWNA_MULTIPLIER
    study_days: int = STUDY_DAYS

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("multiplier must be positive")
        if self.study_days <= 0:
            raise ValueError("study_days must be positive")

    def describe(self):
        return f"multiplier(a={self.a!r},days={self.study_days})"


def daily_rate(total_count, study_days=STUDY_DAYS) -> float:
    if study_days <= 0:
        raise ValueError("study_days must be positive")
    return total_count / study_days


def _log_linear(m: LogLinear, aadb_bs):
    z = m.a * aadb_bs + m.b
    if z > EXP_CAP:
        return math.exp(EXP_CAP), True
    return math.exp(z), False


def apply_log_linear(m: LogLinear, aadb_bs) -> float:
    """Evaluate the scale-up curve; exponents above 50 are capped (and logged)."""
    value, capped = _log_linear(m, aadb_bs)
    if capped:
        log.warning("log-linear exponent above %s for input %s; capped", EXP_CAP, aadb_bs)
    return value


@dataclass
class LogLinearFit:
    model: LogLinear
    n_used: int
    n_zero_dropped: int
    r_squared: float


def fit_log_linear(pairs, study_days=STUDY_DAYS) -> LogLinearFit:
    """Pooled least squares of ln(counter) on daily bike-share volume.

    ``pairs`` are ``(bikeshare, counter)`` daily observations from any
    number of locations. Observations with a zero counter value are dropped
    and reported.
    """
    pairs = list(pairs)
    kept = [(float(x), float(y)) for x, y in pairs if y > 0]
    if any(y < 0 for _, y in pairs):
        raise ValueError("negative counter observation")
    if len(kept) < 3:
        raise ValueError("need at least three observations with a positive counter value")
    x = np.array([p[0] for p in kept])
    ly = np.log([p[1] for p in kept])
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ValueError("zero variance in bike-share volumes")
    a = float(dx @ (ly - ly.mean())) / sxx
    b = float(ly.mean() - a * x.mean())
    resid = ly - (a * x + b)
    dy = ly - ly.mean()
    ss_tot = float(dy @ dy)
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return LogLinearFit(LogLinear(a, b, study_days), len(kept), len(pairs) - len(kept), r2)


def fit_multiplier(x, y, w, study_days=STUDY_DAYS) -> Multiplier:
    """Minimise sum w_i (a x_i - y_i)^2 over a; closed form
    a = sum(w x y) / sum(w x^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (x.shape == y.shape == w.shape) or x.ndim != 1:
        raise ValueError("x, y and w must be 1-D arrays of equal length")
    den = math.fsum(w * x * x)
    if not den > 0:
        raise ValueError("degenerate weighted least squares: sum(w x^2) is not positive")
    return Multiplier(math.fsum(w * x * y) / den, study_days)


@dataclass
class AadbLayer:
    values: dict[EdgeKey, float]
    counts: dict[EdgeKey, int]
    model: str
    capped: set = field(default_factory=set)


def aadb_layer(counts: SegmentCounts, m) -> AadbLayer:
    """AADB for every counted edge under a scale-up model."""
    values = {}
    capped = set()
    for key, n in counts.counts.items():
        rate = daily_rate(n, m.study_days)
        if isinstance(m, Multiplier):
            values[key] = m.a * rate
        else:
            values[key], hit = _log_linear(m, rate)
            if hit:
                capped.add(key)
    if capped:
        log.warning("%d edge(s) hit the exponent cap", len(capped))
    return AadbLayer(values, dict(counts.counts), m.describe(), capped)


def aadb_geojson(g: NetworkGraph, layer: AadbLayer) -> dict:
    props = {
        k: {"count": layer.counts.get(k, 0), "aadb": layer.values[k], "model": layer.model}
        for k in layer.values
    }
    return edge_layer(g, props)


def write_aadb_csv(layer: AadbLayer, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "v", "ordinal", "count", "aadb"])
        for key in sorted(layer.values):
            w.writerow([key.u, key.v, key.ordinal, layer.counts.get(key, 0), repr(layer.values[key])])
