"""Scoring of path-finding models and insight reports.

Four criteria are used to compare weighting strategies: a visual review of
count maps (operator supplied), the share of legs ridden at a feasible speed,
how closely the modelled split across counter locations matches the
counters, and a weekly linear regression of counter against bike-share
volumes at one location.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from bikeflow.router import STRATEGIES, SegmentCounts
from bikeflow.trips import CounterSeries

DEFAULT_SPEED_THRESHOLD_KMH = 22.5


# --- speed feasibility -----------------------------------------------------------


def leg_speeds(routed, g):
    """Implied speed (km/h) of each leg of a routed trip.

    Speed is the routed path length between two consecutive matched fixes
    over the time between them. A leg with no elapsed time is infinitely
    fast, so it always fails a speed check.
    """
    out = []
    for i in range(len(routed.legs) - 1):
        a, b = routed.legs[i], routed.legs[i + 1]
        length = math.fsum(g.edges[k].length_m for k in routed.edges[a:b])
        dt = routed.times[i + 1] - routed.times[i]
        if dt <= 0:
            speed = math.inf
        else:
            speed = length / dt * 3.6
        out.append((i, speed))
    return out


@dataclass
class SpeedReport:
    threshold_kmh: float
    per_trip: dict[str, list[float]]
    n_legs: int
    n_feasible: int

    @property
    def fraction(self):
        """Share of legs at or below the threshold; None without legs."""
        return self.n_feasible / self.n_legs if self.n_legs else None


def speed_feasibility(routed_trips, g, threshold_kmh=DEFAULT_SPEED_THRESHOLD_KMH):
    per_trip = {}
    n = feasible = 0
    for r in routed_trips:
        speeds = [s for _, s in leg_speeds(r, g)]
        per_trip[r.trip_id] = speeds
        n += len(speeds)
        feasible += sum(1 for s in speeds if s <= threshold_kmh)
    return SpeedReport(threshold_kmh, per_trip, n, feasible)


def derive_speed_threshold(speeds, cap_kmh=40.0, min_legs=20):
    """Upper Tukey fence (Q3 + 1.5 IQR) of leg speeds, capped at ``cap_kmh``.

    Infinite speeds are ignored. Quartiles use linear interpolation between
    order statistics.
    """
    finite = np.array([s for s in speeds if math.isfinite(s)], dtype=float)
    if len(finite) < min_legs:
        raise ValueError(f"need at least {min_legs} finite leg speeds, got {len(finite)}")
    q1, q3 = np.percentile(finite, [25, 75])
    return float(min(q3 + 1.5 * (q3 - q1), cap_kmh))


# --- counter split ----------------------------------------------------------------


@dataclass
class SplitVector:
    shares: dict[str, float]

    @property
    def names(self):
        return tuple(self.shares)

    def to_dict(self):
        return dict(self.shares)


def location_totals(counts: SegmentCounts, locations):
    """Sum of segment counts over each location's edge set."""
    seen = {}
    for name, edges in locations.items():
        for k in edges:
            if k in seen and seen[k] != name:
                raise ValueError(f"edge {k.label()} belongs to both {seen[k]!r} and {name!r}")
            seen[k] = name
    return {name: sum(counts.get(k) for k in edges) for name, edges in locations.items()}


def counter_totals(series, location_counters):
    """Total count per location from counter series.

    ``location_counters`` maps a location name to its counter ids.
    """
    by_id = {s.counter_id: s for s in series}
    out = {}
    for name, ids in location_counters.items():
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ValueError(f"location {name!r}: no series for counter(s) {', '.join(missing)}")
        out[name] = sum(by_id[i].total for i in ids)
    return out


def counter_split(source, locations=None) -> SplitVector:
    """Share of traffic at each location.

    ``source`` is either a mapping of location -> total, or a
    :class:`SegmentCounts` together with per-location edge sets.
    """
    if isinstance(source, SegmentCounts):
        if locations is None:
            raise ValueError("segment counts need per-location edge sets")
        totals = location_totals(source, locations)
    else:
        totals = dict(source)
    grand = math.fsum(totals.values())
    if grand <= 0:
        raise ValueError("all location totals are zero")
    return SplitVector({name: t / grand for name, t in totals.items()})


def split_distance(a: SplitVector, b: SplitVector) -> float:
    """L1 distance between two splits over the same ordered locations."""
    if a.names != b.names:
        raise ValueError(f"split locations differ: {a.names} vs {b.names}")
    return math.fsum(abs(a.shares[n] - b.shares[n]) for n in a.names)


# --- regression ----------------------------------------------------------------------


def _betacf(a, b, x, max_iter=500, eps=1e-16):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t, dof):
    """Two-sided p-value of a Student t statistic."""
    if math.isinf(t):
        return 0.0
    return betainc_regularized(dof / 2.0, 0.5, dof / (dof + t * t))


@dataclass
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    p_value: float | None
    n: int

    def to_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "p_value": self.p_value,
            "n": self.n,
        }


def weekly_regression(x, y) -> RegressionResult:
    """Ordinary least squares ``y = slope * x + intercept``.

    The p-value tests slope != 0 with a two-sided t-test on n - 2 degrees of
    freedom; it is None for fewer than three points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and the same length")
    n = len(x)
    if n < 2:
        raise ValueError("regression needs at least two points")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ValueError("zero variance in x")
    slope = float(dx @ dy) / sxx
    intercept = my - slope * mx
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(dy @ dy)
    if ss_tot == 0:
        r2 = 1.0 if ss_res == 0 else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    p = None
    if n >= 3:
        dof = n - 2
        se = math.sqrt(ss_res / dof / sxx)
        t = math.inf if se == 0 else slope / se
        p = 1.0 if slope == 0 and se > 0 else t_two_sided_p(t, dof)
    return RegressionResult(slope, float(intercept), r2, p, n)


def iso_week(ts):
    year, week, _ = datetime.fromtimestamp(ts, tz=timezone.utc).isocalendar()
    return year, week


def weekly_totals(events):
    """Sum ``(ts, count)`` events (or bare timestamps) per ISO week."""
    out = Counter()
    for ev in events:
        ts, n = ev if isinstance(ev, tuple) else (ev, 1)
        out[iso_week(ts)] += n
    return out


def align_weeks(bikeshare_weekly, counter_weekly):
    """x, y arrays over the union of weeks, zero where a side is silent."""
    weeks = sorted(set(bikeshare_weekly) | set(counter_weekly))
    x = [bikeshare_weekly.get(w, 0) for w in weeks]
    y = [counter_weekly.get(w, 0) for w in weeks]
    return weeks, x, y


def passages(routed_trips, g, edges):
    """Timestamps at which routed trips traverse any of ``edges``.

    A traversal is timed by interpolating between the fixes bounding its leg
    in proportion to distance travelled (to the edge midpoint).
    """
    edges = set(edges)
    out = []
    for r in routed_trips:
        if not edges.intersection(r.edges):
            continue
        for i in range(len(r.legs) - 1):
            a, b = r.legs[i], r.legs[i + 1]
            leg = r.edges[a:b]
            if not edges.intersection(leg):
                continue
            lengths = [g.edges[k].length_m for k in leg]
            total = math.fsum(lengths)
            t0, t1 = r.times[i], r.times[i + 1]
            run = 0.0
            for k, length in zip(leg, lengths):
                if k in edges:
                    frac = (run + length / 2) / total
                    out.append(int(t0 + (t1 - t0) * frac))
                run += length
    return sorted(out)


def counter_events(series: list[CounterSeries], ids=None):
    """``(hour_start, count)`` pairs from counter series."""
    out = []
    for s in series:
        if ids is not None and s.counter_id not in ids:
            continue
        out.extend((smp.hour_start, smp.count) for smp in s.samples)
    return out


def hourly_profile(events, utc_offset_h=0.0):
    """24 bins of events by local hour of day.

    Events are timestamps (weight 1) or ``(ts, count)`` pairs.
    """
    bins = [0] * 24
    shift = int(round(utc_offset_h * 3600))
    for ev in events:
        ts, n = ev if isinstance(ev, tuple) else (ev, 1)
        bins[((ts + shift) // 3600) % 24] += n
    return bins


def crossing_report(routed_trips, crossings):
    """Traversals of each named crossing edge set."""
    out = {}
    for name, edges in crossings.items():
        edges = set(edges)
        out[name] = sum(1 for r in routed_trips for k in r.edges if k in edges)
    return out


# --- ranking -----------------------------------------------------------------------------

CRITERIA = ("visual", "speed", "split", "regression")


@dataclass
class StrategyEvaluation:
    """What the ranking needs from one strategy. ``None`` marks a value that
    could not be computed; such a strategy is left out of that criterion."""

    speed_fraction: float | None
    split_distance: float | None
    r_squared: float | None
    p_value: float | None


@dataclass
class ModelRanking:
    per_criterion: dict[str, list[str]]
    aggregate: str
    placements: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self):
        return {
            "per_criterion": self.per_criterion,
            "aggregate": self.aggregate,
            "placements": self.placements,
        }


def _order(name):
    return STRATEGIES.index(name) if name in STRATEGIES else len(STRATEGIES)


def rank_models(results, visual=None, top=3) -> ModelRanking:
    """Top strategies per criterion and an overall pick.

    ``results`` maps strategy -> :class:`StrategyEvaluation`. ``visual`` is an
    operator-supplied best-first list; without it only three criteria count.
    The overall pick has the most top-two placements, then the lowest sum of
    placements (unplaced counts as ``top + 1``).
    """
    if not results:
        raise ValueError("no strategies to rank")
    for name, ev in results.items():
        if not isinstance(ev, StrategyEvaluation):
            raise ValueError(f"strategy {name!r} lacks an evaluation")
    names = sorted(results, key=lambda n: (_order(n), n))
    per = {}
    speed = [n for n in names if results[n].speed_fraction is not None]
    per["speed"] = sorted(speed, key=lambda n: (-results[n].speed_fraction, _order(n)))[:top]
    split = [n for n in names if results[n].split_distance is not None]
    per["split"] = sorted(split, key=lambda n: (results[n].split_distance, _order(n)))[:top]
    reg = [n for n in names if results[n].r_squared is not None]
    per["regression"] = sorted(
        reg,
        key=lambda n: (
            not (results[n].p_value is not None and results[n].p_value < 0.05),
            -results[n].r_squared,
            _order(n),
        ),
    )[:top]
    if visual:
        unknown = [v for v in visual if v not in results]
        if unknown:
            raise ValueError(f"visual ranking names unknown strategies {unknown}")
        per = {"visual": list(dict.fromkeys(visual))[:top], **per}

    placements = {n: {} for n in names}
    for crit, ranked in per.items():
        for pos, n in enumerate(ranked, start=1):
            placements[n][crit] = pos

    def score(n):
        places = placements[n]
        top2 = sum(1 for p in places.values() if p <= 2)
        rank_sum = sum(places.get(c, top + 1) for c in per)
        return (-top2, rank_sum, _order(n))

    aggregate = min(names, key=score)
    return ModelRanking(per, aggregate, {n: p for n, p in placements.items() if p})


def weekly_bikeshare_counts(routed_trips, g, edges):
    return weekly_totals(passages(routed_trips, g, edges))


def group_by_day(events):
    out = defaultdict(int)
    for ev in events:
        ts, n = ev if isinstance(ev, tuple) else (ev, 1)
        out[ts // 86400] += n
    return dict(out)
