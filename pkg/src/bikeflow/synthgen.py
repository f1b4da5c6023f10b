"""Deterministic synthetic scenarios with known ground truth.

A scenario is a jittered grid of streets split by a barrier (a river, say)
that can only be crossed on a few bridges. Each bridge carries one counter.
Cyclists ride shortest-length routes, optionally through a via node, at a
constant speed; their phones report noisy fixes at random intervals.
Counters see every true bridge passage multiplied by a fixed scale factor.

Randomness comes from SplitMix64 (Steele, Lea & Flood 2014) so the output is
bit-identical on every platform and numpy version.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

from bikeflow.geo import offset_latlon
from bikeflow.netgraph import EdgeKey, GraphEdge, GraphNode, NetworkGraph, save_network
from bikeflow.geo import haversine_m
from bikeflow.router import Router, assign_weights, WeightStrategy
from bikeflow.trips import (
    CounterSample,
    CounterSeries,
    GpsPoint,
    Trip,
    parse_ts,
    save_counters,
    save_trips,
)

MASK64 = (1 << 64) - 1


class SplitMix64:
    """64-bit SplitMix generator with uniform and Gaussian draws."""

    def __init__(self, seed):
        self.state = seed & MASK64
        self._spare = None

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self):
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo, hi):
        return lo + (hi - lo) * self.random()

    def randrange(self, n):
        # rejection keeps the draw unbiased
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def gauss(self):
        """Standard normal via the Box-Muller transform."""
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2 * math.pi * u2)
        return r * math.cos(2 * math.pi * u2)

    def choice_weighted(self, weights):
        total = sum(weights)
        x = self.random() * total
        for i, w in enumerate(weights):
            x -= w
            if x < 0:
                return i
        return len(weights) - 1


# relative ride volume by hour of day (UTC); commute peaks at 8 and 17
DIURNAL = (1, 1, 1, 1, 1, 2, 4, 8, 10, 7, 6, 7, 8, 7, 6, 7, 9, 10, 8, 6, 4, 3, 2, 1)


@dataclass
class Scenario:
    seed: int = 1
    rows: int = 20
    cols: int = 20
    spacing_m: float = 100.0
    jitter_m: float = 10.0
    origin_lat: float = 49.880
    origin_lon: float = -119.495
    n_trips: int = 500
    gps_sigma_m: float = 0.0
    # mean seconds between fixes; None puts one fix on every route node
    interval_s: float | None = None
    interval_spread: float = 0.5
    speed_kmh: float = 15.0
    min_od_m: float = 500.0
    via_prob: float = 0.3
    scale_factor: float = 10.0
    counter_noise: float = 0.0
    study_days: int = 91
    start: str = "2018-06-11T00:00:00Z"
    barrier_row: int | None = 9
    bridge_cols: tuple = (2, 7, 12, 17)
    counter_names: tuple = ("City Park", "Waterfront", "Cawston", "Ethel")
    cycleway_rows: tuple = (0,)
    secondary_rows: tuple = (5, 15)
    highway_col: int | None = 10
    lane_cols: tuple = (0,)
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2 x 2 nodes")
        if self.spacing_m <= 0 or self.jitter_m < 0 or self.jitter_m >= self.spacing_m / 3:
            raise ValueError("spacing must be positive and jitter below a third of it")
        if self.n_trips < 0 or self.gps_sigma_m < 0 or self.speed_kmh <= 0:
            raise ValueError("n_trips, gps_sigma_m must be >= 0 and speed_kmh > 0")
        if self.interval_s is not None and self.interval_s <= 0:
            raise ValueError("interval_s must be positive")
        if not 0 <= self.interval_spread < 1:
            raise ValueError("interval_spread must lie in [0, 1)")
        if self.scale_factor <= 0 or self.study_days <= 0:
            raise ValueError("scale_factor and study_days must be positive")
        if self.barrier_row is not None:
            if not 0 <= self.barrier_row < self.rows - 1:
                raise ValueError("barrier_row must leave a row on each side")
            if not self.bridge_cols or any(not 0 <= c < self.cols for c in self.bridge_cols):
                raise ValueError("bridge columns must lie inside the grid")
            if len(self.counter_names) != len(self.bridge_cols):
                raise ValueError("need one counter name per bridge")
        if not 0 <= self.via_prob <= 1:
            raise ValueError("via_prob must lie in [0, 1]")


@dataclass
class GroundTruth:
    routes: dict[str, list[int]]
    edge_counts: dict[EdgeKey, int]
    counter_edges: dict[str, EdgeKey]
    counter_passages: dict[str, int]
    counter_ids: dict[str, str]
    scale_factor: float

    def to_dict(self):
        return {
            "scale_factor": self.scale_factor,
            "counter_edges": {n: k.label() for n, k in self.counter_edges.items()},
            "counter_ids": self.counter_ids,
            "counter_passages": self.counter_passages,
            "edge_counts": {k.label(): n for k, n in sorted(self.edge_counts.items())},
            "routes": self.routes,
        }


@dataclass
class ScenarioData:
    scenario: Scenario
    graph: NetworkGraph
    trips: list[Trip]
    counters: list[CounterSeries]
    truth: GroundTruth
    boundary: list[tuple[float, float]]


def node_id(sc, r, c):
    return r * sc.cols + c


def build_grid(sc: Scenario, rng: SplitMix64) -> NetworkGraph:
    nodes = []
    for r in range(sc.rows):
        for c in range(sc.cols):
            north = r * sc.spacing_m + rng.uniform(-sc.jitter_m, sc.jitter_m)
            east = c * sc.spacing_m + rng.uniform(-sc.jitter_m, sc.jitter_m)
            lat, lon = offset_latlon(sc.origin_lat, sc.origin_lon, north, east)
            nodes.append(GraphNode(node_id(sc, r, c), round(lat, 9), round(lon, 9)))
    pos = {n.id: n for n in nodes}

    def edge(a, b, category):
        na, nb = pos[a], pos[b]
        return GraphEdge(a, b, haversine_m(na.lat, na.lon, nb.lat, nb.lon), category)

    edges = []
    for r in range(sc.rows):
        for c in range(sc.cols - 1):
            if r in sc.cycleway_rows:
                cat = "cycleway"
            elif r in sc.secondary_rows:
                cat = "secondary"
            else:
                cat = "residential"
            edges.append(edge(node_id(sc, r, c), node_id(sc, r, c + 1), cat))
    for c in range(sc.cols):
        for r in range(sc.rows - 1):
            if sc.barrier_row is not None and r == sc.barrier_row:
                if c not in sc.bridge_cols:
                    continue
                cat = "cycleway"
            elif c == sc.highway_col:
                cat = "highway97"
            elif c in sc.lane_cols:
                cat = "lane"
            else:
                cat = "residential"
            edges.append(edge(node_id(sc, r, c), node_id(sc, r + 1, c), cat))
    return NetworkGraph(nodes, edges)


def _pick_od(sc, g, rng):
    ids = sorted(g.nodes)
    for _ in range(1000):
        o = ids[rng.randrange(len(ids))]
        d = ids[rng.randrange(len(ids))]
        a, b = g.nodes[o], g.nodes[d]
        if haversine_m(a.lat, a.lon, b.lat, b.lon) >= sc.min_od_m:
            return o, d
    raise ValueError("min_od_m too large for the grid")


def _true_route(sc, g, router, rng):
    o, d = _pick_od(sc, g, rng)
    stops = [o, d]
    if rng.random() < sc.via_prob:
        ids = sorted(g.nodes)
        via = ids[rng.randrange(len(ids))]
        if via not in (o, d):
            stops = [o, via, d]
    nodes, edges = [stops[0]], []
    for a, b in zip(stops, stops[1:]):
        leg = router.leg(a, b)
        nodes.extend(leg[0][1:])
        edges.extend(leg[1])
    return nodes, edges


def _position(g, nodes, cum, dist):
    """(lat, lon) at ``dist`` meters along the route."""
    if dist >= cum[-1]:
        n = g.nodes[nodes[-1]]
        return n.lat, n.lon
    lo, hi = 0, len(cum) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cum[mid] <= dist:
            lo = mid
        else:
            hi = mid
    a, b = g.nodes[nodes[lo]], g.nodes[nodes[lo + 1]]
    span = cum[lo + 1] - cum[lo]
    f = (dist - cum[lo]) / span if span else 0.0
    return a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon)


def _fix_times(sc, duration, rng):
    if sc.interval_s is None:
        return None
    times = [0.0]
    lo = sc.interval_s * (1 - sc.interval_spread)
    hi = sc.interval_s * (1 + sc.interval_spread)
    # the phone reports on its own clock; the last fix comes after arrival,
    # with the rider parked at the destination
    while times[-1] < duration:
        times.append(times[-1] + rng.uniform(lo, hi))
    return times


def build_scenario(sc: Scenario) -> ScenarioData:
    sc.validate()
    rng = SplitMix64(sc.seed)
    g = build_grid(sc, rng)
    router = Router(g, assign_weights(g, WeightStrategy("Length")))
    speed = sc.speed_kmh / 3.6
    t_start = parse_ts(sc.start)

    counter_edges = {}
    counter_ids = {}
    if sc.barrier_row is not None:
        for i, (name, c) in enumerate(zip(sc.counter_names, sc.bridge_cols)):
            counter_edges[name] = EdgeKey.of(node_id(sc, sc.barrier_row, c), node_id(sc, sc.barrier_row + 1, c))
            counter_ids[name] = f"C{i + 1}"
    by_edge = {k: n for n, k in counter_edges.items()}

    trips = []
    routes = {}
    edge_counts = Counter()
    passages = {name: Counter() for name in counter_edges}
    width = len(str(max(sc.n_trips, 1)))
    for i in range(sc.n_trips):
        tid = f"T{i + 1:0{width}d}"
        nodes, edges = _true_route(sc, g, router, rng)
        routes[tid] = nodes
        edge_counts.update(edges)
        cum = [0.0]
        for k in edges:
            cum.append(cum[-1] + g.edges[k].length_m)
        day = rng.randrange(sc.study_days)
        hour = rng.choice_weighted(DIURNAL)
        t0 = t_start + day * 86400 + hour * 3600 + rng.randrange(3600)
        duration = cum[-1] / speed

        for j, k in enumerate(edges):
            if k in by_edge:
                t_mid = t0 + (cum[j] + cum[j + 1]) / 2 / speed
                passages[by_edge[k]][int(t_mid) // 3600 * 3600] += 1

        offsets = _fix_times(sc, duration, rng)
        if offsets is None:
            samples = [(t0 + c / speed, g.nodes[n].lat, g.nodes[n].lon) for c, n in zip(cum, nodes)]
        else:
            samples = [(t0 + dt, *_position(g, nodes, cum, dt * speed)) for dt in offsets]
        points = []
        last_ts = None
        for t, lat, lon in samples:
            if sc.gps_sigma_m > 0:
                lat, lon = offset_latlon(
                    lat, lon, rng.gauss() * sc.gps_sigma_m, rng.gauss() * sc.gps_sigma_m
                )
            ts = int(round(t))
            if last_ts is not None and ts <= last_ts:
                ts = last_ts + 1
            last_ts = ts
            points.append(GpsPoint(tid, ts, round(lat, 9), round(lon, 9)))
        trips.append(Trip(tid, tuple(points)))

    counters = []
    n_hours = sc.study_days * 24
    for name, key in counter_edges.items():
        samples = []
        for h in range(n_hours):
            hour_start = t_start + h * 3600
            true = passages[name].get(hour_start, 0) * sc.scale_factor
            if sc.counter_noise > 0 and true > 0:
                true *= max(0.0, 1 + sc.counter_noise * rng.gauss())
            samples.append(CounterSample(hour_start, int(round(true))))
        counters.append(CounterSeries(counter_ids[name], key.u, tuple(samples)))

    truth = GroundTruth(
        routes=routes,
        edge_counts={k: edge_counts.get(k, 0) for k in g.edges},
        counter_edges=counter_edges,
        counter_passages={n: sum(c.values()) for n, c in passages.items()},
        counter_ids=counter_ids,
        scale_factor=sc.scale_factor,
    )
    lats = [n.lat for n in g.nodes.values()]
    lons = [n.lon for n in g.nodes.values()]
    pad = 0.01
    boundary = [
        (min(lats) - pad, min(lons) - pad),
        (min(lats) - pad, max(lons) + pad),
        (max(lats) + pad, max(lons) + pad),
        (max(lats) + pad, min(lons) - pad),
    ]
    return ScenarioData(sc, g, trips, counters, truth, boundary)


def write_boundary(boundary, path):
    lines = ["lat,lon"] + [f"{lat!r},{lon!r}" for lat, lon in boundary]
    Path(path).write_text("\n".join(lines) + "\n")


def scenario_config(data: ScenarioData, out_dir="out") -> str:
    """Pipeline config text pointing at the generated files."""
    sc = data.scenario
    lines = [
        "# generated by bikeflow synth",
        "paths.network = network.geojson",
        "paths.trips = trips.csv",
        "paths.counters = counters.csv",
        "paths.boundary = boundary.csv",
        f"paths.out = {out_dir}",
        f"scale.study_days = {sc.study_days}",
        "eval.utc_offset_h = 0",
    ]
    names = list(data.truth.counter_edges)
    for name in names:
        key = data.truth.counter_edges[name]
        lines.append(f"location.{name}.edges = {key.u}-{key.v}")
        lines.append(f"location.{name}.counters = {data.truth.counter_ids[name]}")
        lines.append(f"corner.{name}.edges = {key.u}-{key.v}")
    if names:
        lines.append(f"eval.regression_location = {names[0]}")
    if sc.highway_col is not None and 0 < sc.highway_col < sc.cols:
        c = sc.highway_col
        for r in sorted({sc.rows // 4, sc.rows // 2 + 1, 3 * sc.rows // 4}):
            if 0 <= r < sc.rows:
                lines.append(f"crossing.row{r}.edges = {node_id(sc, r, c - 1)}-{node_id(sc, r, c)}")
    return "\n".join(lines) + "\n"


def generate(sc: Scenario, out_dir) -> dict[str, Path]:
    """Write network, trips, counters, ground truth, boundary and a ready
    pipeline config into ``out_dir``."""
    data = build_scenario(sc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "network": out / "network.geojson",
        "trips": out / "trips.csv",
        "counters": out / "counters.csv",
        "truth": out / "truth.json",
        "boundary": out / "boundary.csv",
        "config": out / "pipeline.cfg",
    }
    save_network(data.graph, paths["network"])
    save_trips(data.trips, paths["trips"])
    save_counters(data.counters, paths["counters"])
    truth = data.truth.to_dict()
    truth["scenario"] = asdict(sc)
    paths["truth"].write_text(json.dumps(truth, indent=1) + "\n")
    write_boundary(data.boundary, paths["boundary"])
    paths["config"].write_text(scenario_config(data))
    return paths
