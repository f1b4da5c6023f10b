"""Bike-share trip and counter ingestion, cleaning and map matching.

Cleaning runs as a cascade of stages, each returning the surviving trips and
a :class:`CleaningReport`. Every decision to drop a point is taken from the
trip's raw (de-duplicated) fixes and the stage's own threshold, so loosening
any threshold can only keep more points.
"""

from __future__ import annotations

import csv
import json
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from itertools import combinations
from pathlib import Path

from bikeflow.errors import DataError
from bikeflow.geo import haversine_m, point_in_polygon
from bikeflow.netgraph import NetworkGraph

TRIPS_HEADER = ["trip_id", "timestamp", "lat", "lon"]
COUNTERS_HEADER = ["counter_id", "node_id", "hour_start", "count", "direction"]
MATCHED_HEADER = ["trip_id", "timestamp", "node_id", "match_distance_m"]


def parse_ts(text) -> int:
    """RFC 3339 UTC timestamp -> integer epoch seconds."""
    text = text.strip()
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    return int(dt.timestamp())


def format_ts(epoch) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class GpsPoint:
    trip_id: str
    ts: int
    lat: float
    lon: float


@dataclass(frozen=True)
class Trip:
    id: str
    points: tuple[GpsPoint, ...]


@dataclass(frozen=True)
class MatchedPoint:
    node: int
    ts: int
    match_distance_m: float


@dataclass(frozen=True)
class MatchedTrip:
    id: str
    matched: tuple[MatchedPoint, ...]

    @property
    def nodes(self):
        return [m.node for m in self.matched]


@dataclass(frozen=True)
class CounterSample:
    hour_start: int
    count: int
    direction: str | None = None


@dataclass(frozen=True)
class CounterSeries:
    counter_id: str
    location_node: int
    samples: tuple[CounterSample, ...]

    @property
    def total(self):
        return sum(s.count for s in self.samples)


@dataclass
class CleaningReport:
    """Trip and point bookkeeping for one or more cleaning stages.

    ``point_tallies`` counts removed points per rule; points that disappear
    because their whole trip was dropped are tallied under the trip's reason.
    """

    trips_in: int = 0
    trips_out: int = 0
    points_in: int = 0
    points_out: int = 0
    point_tallies: dict[str, int] = field(default_factory=dict)
    trip_tallies: dict[str, int] = field(default_factory=dict)
    dropped: dict[str, str] = field(default_factory=dict)

    def __add__(self, other):
        """Combine reports of disjoint trip sets run through the same stage."""
        return CleaningReport(
            trips_in=self.trips_in + other.trips_in,
            trips_out=self.trips_out + other.trips_out,
            points_in=self.points_in + other.points_in,
            points_out=self.points_out + other.points_out,
            point_tallies=dict(Counter(self.point_tallies) + Counter(other.point_tallies)),
            trip_tallies=dict(Counter(self.trip_tallies) + Counter(other.trip_tallies)),
            dropped={**self.dropped, **other.dropped},
        )

    def then(self, later):
        """Chain this stage's report with the next stage's."""
        return CleaningReport(
            trips_in=self.trips_in,
            trips_out=later.trips_out,
            points_in=self.points_in,
            points_out=later.points_out,
            point_tallies=dict(Counter(self.point_tallies) + Counter(later.point_tallies)),
            trip_tallies=dict(Counter(self.trip_tallies) + Counter(later.trip_tallies)),
            dropped={**self.dropped, **later.dropped},
        )

    def balanced(self):
        return (
            self.points_in == self.points_out + sum(self.point_tallies.values())
            and self.trips_in == self.trips_out + sum(self.trip_tallies.values())
        )

    def to_dict(self):
        return {
            "trips_in": self.trips_in,
            "trips_out": self.trips_out,
            "points_in": self.points_in,
            "points_out": self.points_out,
            "point_tallies": dict(sorted(self.point_tallies.items())),
            "trip_tallies": dict(sorted(self.trip_tallies.items())),
            "dropped": dict(sorted(self.dropped.items())),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


class _Stage:
    """Accumulates a report while a stage walks over trips."""

    def __init__(self, trips):
        self.report = CleaningReport(
            trips_in=len(trips), points_in=sum(len(t.points) for t in trips)
        )
        self._tallies = Counter()
        self._trip_tallies = Counter()

    def drop_points(self, reason, n=1):
        if n:
            self._tallies[reason] += n

    def drop_trip(self, trip_id, reason, n_points):
        self._trip_tallies[reason] += 1
        self.drop_points(reason, n_points)
        self.report.dropped[trip_id] = reason

    def finish(self, kept, n_points):
        self.report.trips_out = len(kept)
        self.report.points_out = n_points
        self.report.point_tallies = dict(self._tallies)
        self.report.trip_tallies = dict(self._trip_tallies)
        return self.report


# --- loading -----------------------------------------------------------------


def _open_csv(path):
    path = Path(path)
    try:
        return path, path.open(newline="")
    except FileNotFoundError:
        raise DataError("file not found", locator=str(path)) from None


def load_trips(path) -> list[Trip]:
    """Read the trips CSV, grouped by trip id (sorted) and ordered by time.

    Points sharing a timestamp keep their file order.
    """
    path, fh = _open_csv(path)
    groups: dict[str, list[GpsPoint]] = defaultdict(list)
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRIPS_HEADER:
            raise DataError(f"expected header {','.join(TRIPS_HEADER)}", locator=f"{path}:1")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 4:
                raise DataError(f"expected 4 fields, got {len(row)}", locator=f"{path}:{lineno}")
            trip_id = row[0].strip()
            try:
                ts = parse_ts(row[1])
                lat, lon = float(row[2]), float(row[3])
            except ValueError as exc:
                raise DataError(f"malformed row ({exc})", locator=f"{path}:{lineno}") from None
            if not trip_id:
                raise DataError("empty trip_id", locator=f"{path}:{lineno}")
            if not (-90 <= lat <= 90 and -180 <= lon <= 180):
                raise DataError("coordinates out of range", locator=f"{path}:{lineno}")
            groups[trip_id].append(GpsPoint(trip_id, ts, lat, lon))
    return [
        Trip(tid, tuple(sorted(groups[tid], key=lambda p: p.ts))) for tid in sorted(groups)
    ]


def save_trips(trips, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIPS_HEADER)
        for t in trips:
            for p in t.points:
                w.writerow([t.id, format_ts(p.ts), repr(p.lat), repr(p.lon)])


def load_counters(path) -> list[CounterSeries]:
    """Read hourly counter counts, one series per counter id (sorted)."""
    path, fh = _open_csv(path)
    samples: dict[str, list[CounterSample]] = defaultdict(list)
    nodes: dict[str, int] = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        header = [h.strip() for h in header] if header else None
        if header not in (COUNTERS_HEADER, COUNTERS_HEADER[:4]):
            raise DataError(f"expected header {','.join(COUNTERS_HEADER)}", locator=f"{path}:1")
        for lineno, row in enumerate(reader, start=2):
            loc = f"{path}:{lineno}"
            if not row or not "".join(row).strip():
                continue
            if len(row) not in (4, 5):
                raise DataError(f"expected 4 or 5 fields, got {len(row)}", locator=loc)
            cid = row[0].strip()
            try:
                node = int(row[1])
                hour = parse_ts(row[2])
                count = int(row[3])
            except ValueError as exc:
                raise DataError(f"malformed row ({exc})", locator=loc) from None
            if count < 0:
                raise DataError("negative count", locator=loc)
            if hour % 3600:
                raise DataError("hour_start is not on an hour boundary", locator=loc)
            if nodes.setdefault(cid, node) != node:
                raise DataError(f"counter {cid} appears at two nodes", locator=loc)
            direction = row[4].strip() if len(row) == 5 and row[4].strip() else None
            samples[cid].append(CounterSample(hour, count, direction))
    return [
        CounterSeries(
            cid, nodes[cid], tuple(sorted(samples[cid], key=lambda s: (s.hour_start, s.direction or "")))
        )
        for cid in sorted(samples)
    ]


def save_counters(series, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNTERS_HEADER)
        for s in series:
            for smp in s.samples:
                w.writerow([s.counter_id, s.location_node, format_ts(smp.hour_start), smp.count, smp.direction or ""])


def save_matched(matched, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATCHED_HEADER)
        for mt in matched:
            for m in mt.matched:
                w.writerow([mt.id, format_ts(m.ts), m.node, repr(m.match_distance_m)])


def load_matched(path) -> list[MatchedTrip]:
    path, fh = _open_csv(path)
    groups: dict[str, list[MatchedPoint]] = defaultdict(list)
    order = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MATCHED_HEADER:
            raise DataError(f"expected header {','.join(MATCHED_HEADER)}", locator=f"{path}:1")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                mp = MatchedPoint(int(row[2]), parse_ts(row[1]), float(row[3]))
            except (ValueError, IndexError) as exc:
                raise DataError(f"malformed row ({exc})", locator=f"{path}:{lineno}") from None
            if row[0] not in groups:
                order.append(row[0])
            groups[row[0]].append(mp)
    return [MatchedTrip(tid, tuple(groups[tid])) for tid in order]


# --- cleaning stages -----------------------------------------------------------


@dataclass(frozen=True)
class CleaningThresholds:
    """Pre-cleaning limits. Defaults are conservative stand-ins for the
    operator's unpublished rules and can all be overridden from config."""

    min_trip_m: float = 100.0
    max_trip_m: float = 20_000.0
    min_duration_s: float = 60.0
    max_duration_s: float = 4 * 3600.0
    max_speed_kmh: float = 40.0
    max_match_m: float = 150.0


def _kmh(a, b):
    dt = b.ts - a.ts
    d = haversine_m(a.lat, a.lon, b.lat, b.lon)
    if dt <= 0:
        return float("inf") if d > 0 else 0.0
    return d / dt * 3.6


def trip_extent_m(points) -> float:
    """Largest straight-line distance between any two fixes of a trip."""
    best = 0.0
    for a, b in combinations(points, 2):
        best = max(best, haversine_m(a.lat, a.lon, b.lat, b.lon))
    return best


def drop_duplicate_timestamps(trips):
    """Keep the first fix for each timestamp within a trip."""
    stage = _Stage(trips)
    out = []
    n_out = 0
    for t in trips:
        seen = set()
        kept = []
        for p in t.points:
            if p.ts in seen:
                stage.drop_points("dup_ts")
                continue
            seen.add(p.ts)
            kept.append(p)
        out.append(Trip(t.id, tuple(kept)))
        n_out += len(kept)
    return out, stage.finish(out, n_out)


def preclean(trips, thresholds: CleaningThresholds = CleaningThresholds()):
    """Duplicate-timestamp, trip-extent, trip-duration and speed-spike rules.

    A fix is a speed spike when the straight-line speed to each of its raw
    neighbours exceeds ``max_speed_kmh`` (its only neighbour, for the first
    and last fix).
    """
    trips, report = drop_duplicate_timestamps(trips)
    th = thresholds
    stage = _Stage(trips)
    out = []
    n_out = 0
    for t in trips:
        pts = t.points
        extent = trip_extent_m(pts)
        duration = pts[-1].ts - pts[0].ts if pts else 0
        reason = None
        if extent < th.min_trip_m:
            reason = "trip_too_short"
        elif extent > th.max_trip_m:
            reason = "trip_too_long"
        elif duration < th.min_duration_s:
            reason = "duration_too_short"
        elif duration > th.max_duration_s:
            reason = "duration_too_long"
        if reason:
            stage.drop_trip(t.id, reason, len(pts))
            continue
        kept = []
        for i, p in enumerate(pts):
            speeds = []
            if i > 0:
                speeds.append(_kmh(pts[i - 1], p))
            if i + 1 < len(pts):
                speeds.append(_kmh(p, pts[i + 1]))
            if speeds and min(speeds) > th.max_speed_kmh:
                stage.drop_points("speed")
            else:
                kept.append(p)
        if not kept:
            stage.drop_trip(t.id, "speed", 0)
            continue
        out.append(Trip(t.id, tuple(kept)))
        n_out += len(kept)
    return out, report.then(stage.finish(out, n_out))


def filter_bounds(trips, polygon):
    """Remove fixes outside a (lat, lon) polygon; boundary points stay.

    Trips left with no fixes are dropped with reason ``out_of_bounds``.
    """
    ring = [tuple(v) for v in polygon]
    if len(ring) >= 2 and ring[0] == ring[-1]:
        ring = ring[:-1]
    if len(set(ring)) < 3:
        raise ValueError("boundary polygon needs at least 3 distinct vertices")
    stage = _Stage(trips)
    out = []
    n_out = 0
    for t in trips:
        kept = [p for p in t.points if point_in_polygon(p.lat, p.lon, ring)]
        stage.drop_points("out_of_bounds", len(t.points) - len(kept))
        if not kept:
            stage.drop_trip(t.id, "out_of_bounds", 0)
            continue
        out.append(Trip(t.id, tuple(kept)))
        n_out += len(kept)
    return out, stage.finish(out, n_out)


def match_and_filter(trips, g: NetworkGraph, max_match_m=150.0):
    """Snap each fix to its nearest node and apply the distance and
    three-point rules.

    Fixes farther than ``max_match_m`` from every node are removed; trips with
    fewer than three remaining fixes are dropped. Consecutive fixes on the
    same node are collapsed afterwards, keeping the earliest timestamp.
    """
    stage = _Stage(trips)
    out = []
    n_out = 0
    for t in trips:
        matched = []
        for p in t.points:
            node, dist = g.nearest(p.lat, p.lon)
            if dist > max_match_m:
                stage.drop_points("match_distance")
            else:
                matched.append(MatchedPoint(node, p.ts, dist))
        if len(matched) < 3:
            stage.drop_trip(t.id, "too_few_points", len(matched))
            continue
        n_out += len(matched)
        collapsed = [matched[0]]
        for m in matched[1:]:
            if m.node != collapsed[-1].node:
                collapsed.append(m)
        out.append(MatchedTrip(t.id, tuple(collapsed)))
    return out, stage.finish(out, n_out)


def clean_trips(trips, g, polygon=None, thresholds: CleaningThresholds = CleaningThresholds()):
    """Full cascade: pre-clean, bounds (if a polygon is given), matching."""
    kept, report = preclean(trips, thresholds)
    if polygon is not None:
        kept, rep = filter_bounds(kept, polygon)
        report = report.then(rep)
    matched, rep = match_and_filter(kept, g, thresholds.max_match_m)
    return matched, report.then(rep)


def update_interval_stats(trips, bucket_s=30):
    """Median gap between consecutive fixes and a histogram of gaps.

    Returns ``(None, {})`` when no trip has two fixes. Histogram keys are
    bucket start times in seconds.
    """
    gaps = []
    for t in trips:
        pts = t.points
        gaps.extend(b.ts - a.ts for a, b in zip(pts, pts[1:]))
    if not gaps:
        return None, {}
    hist = Counter((gap // bucket_s) * bucket_s for gap in gaps)
    return statistics.median(gaps), dict(sorted(hist.items()))
