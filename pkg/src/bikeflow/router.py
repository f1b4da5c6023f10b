"""Edge weighting strategies, route reconstruction and segment counting."""

from __future__ import annotations

import logging
import math
import os
from collections import Counter, OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from bikeflow.errors import ConfigError, NoPathError
from bikeflow.netgraph import (
    EdgeKey,
    NetworkGraph,
    RemapTable,
    apply_remap,
    dijkstra,
    weighted_adjacency,
)

log = logging.getLogger(__name__)

STRATEGIES = (
    "Length",
    "PathPreference",
    "SimplifiedPathPreference",
    "WeightedLength",
    "ClosenessCentrality",
    "Unbiased",
    "CornerWeighted",
    "CornerWeightedLength",
)

ABBREVIATIONS = {
    "SL": "Length",
    "PP": "PathPreference",
    "SPP": "SimplifiedPathPreference",
    "WL": "WeightedLength",
    "CC": "ClosenessCentrality",
    "UB": "Unbiased",
    "CW": "CornerWeighted",
    "CWL": "CornerWeightedLength",
}

# lower is preferred; footpaths and anything unlisted are neutral
PATH_PREFERENCE_WEIGHTS = {
    "cycleway": 0.5,
    "residential": 0.9,
    "lane": 1.0,
    "unclassified": 1.0,
    "secondary": 1.2,
    "tertiary": 1.2,
    "highway97": 3.0,
    "footpath": 1.0,
    "other": 1.0,
}

SIMPLIFIED_PREFERENCE_WEIGHTS = {cat: (0.5 if cat == "cycleway" else 1.0) for cat in PATH_PREFERENCE_WEIGHTS}

# calibrated corner weights for the Kelowna counters
DEFAULT_CORNER_WEIGHTS = {
    "Cawston": 0.005,
    "Ethel": 0.95,
    "City Park": 2.25,
    "Waterfront": 2.75,
}

CC_EPSILON = 1e-6


def resolve_strategy_name(name) -> str:
    if name in STRATEGIES:
        return name
    if name.upper() in ABBREVIATIONS:
        return ABBREVIATIONS[name.upper()]
    raise ConfigError(f"unknown strategy {name!r}; valid names: {', '.join(STRATEGIES)}")


@dataclass
class WeightStrategy:
    """A weighting model plus whatever parameters it needs.

    ``category_weights`` overrides the Path Preference table (PP, and the
    cycleway factor used by SPP/WL). ``corner_edges`` maps a corner name to
    the edges whose weight it scales; ``corner_weights`` holds the scale.
    """

    name: str
    category_weights: dict[str, float] | None = None
    corner_edges: dict[str, tuple[EdgeKey, ...]] = field(default_factory=dict)
    corner_weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.name = resolve_strategy_name(self.name)
        for table in (self.category_weights or {}, self.corner_weights):
            for k, v in table.items():
                if not v > 0:
                    raise ConfigError(f"weight for {k!r} must be positive, got {v}")

    @property
    def label(self):
        return self.name


def _corner_factors(g, s: WeightStrategy):
    if not s.corner_edges:
        raise ConfigError(f"{s.name} needs corner edge sets")
    missing = [c for c in s.corner_edges if c not in s.corner_weights]
    if missing:
        raise ConfigError(f"{s.name} has no weight for corner(s) {', '.join(missing)}")
    factor = {}
    for corner, edges in s.corner_edges.items():
        for key in edges:
            if key not in g.edges:
                raise ConfigError(f"corner {corner!r} refers to unknown edge {key.label()}")
            factor[key] = factor.get(key, 1.0) * s.corner_weights[corner]
    return factor


def assign_weights(g: NetworkGraph, s: WeightStrategy, cc=None) -> dict[EdgeKey, float]:
    """Positive weight for every edge under strategy ``s``.

    ``cc`` (node -> closeness centrality) is required for ClosenessCentrality;
    corner strategies need ``s.corner_edges`` and ``s.corner_weights``.
    """
    name = s.name
    if name == "Length":
        return {k: e.length_m for k, e in g.edges.items()}
    if name == "Unbiased":
        return {k: 1.0 for k in g.edges}
    if name == "PathPreference":
        table = {**PATH_PREFERENCE_WEIGHTS, **(s.category_weights or {})}
        return {k: table[e.category] for k, e in g.edges.items()}
    if name in ("SimplifiedPathPreference", "WeightedLength"):
        cyc = {**PATH_PREFERENCE_WEIGHTS, **(s.category_weights or {})}["cycleway"]
        if name == "SimplifiedPathPreference":
            return {k: (cyc if e.category == "cycleway" else 1.0) for k, e in g.edges.items()}
        return {k: e.length_m * (cyc if e.category == "cycleway" else 1.0) for k, e in g.edges.items()}
    if name == "ClosenessCentrality":
        if cc is None:
            raise ConfigError("ClosenessCentrality needs a centrality table")
        return {k: 1.0 / (CC_EPSILON + (cc[k.u] + cc[k.v]) / 2) for k in g.edges}
    if name == "CornerWeighted":
        factor = _corner_factors(g, s)
        return {k: factor.get(k, 1.0) for k in g.edges}
    if name == "CornerWeightedLength":
        factor = _corner_factors(g, s)
        return {k: e.length_m * factor.get(k, 1.0) for k, e in g.edges.items()}
    raise ConfigError(f"unknown strategy {name!r}")


@dataclass(frozen=True)
class RoutedTrip:
    """A reconstructed route.

    ``legs[i]`` is the index in ``path`` of the i-th matched node and
    ``times[i]`` its timestamp; ``edges[j]`` joins ``path[j]`` and
    ``path[j + 1]``.
    """

    trip_id: str
    path: tuple[int, ...]
    edges: tuple[EdgeKey, ...]
    legs: tuple[int, ...]
    times: tuple[int, ...]


class Router:
    """Minimum-weight paths over one set of edge weights.

    Among equal-cost paths the one with the lexicographically smallest node
    sequence is returned: walk from the source, always stepping to the
    lowest-id neighbour that stays on some shortest path.
    """

    def __init__(self, g: NetworkGraph, weights, cache_size=512):
        missing = [k for k in g.edges if k not in weights]
        if missing:
            raise ValueError(f"no weight for edge {missing[0].label()}")
        self.g = g
        self.adj = weighted_adjacency(g, weights.__getitem__)
        self._cache: OrderedDict[int, dict[int, float]] = OrderedDict()
        self._cache_size = cache_size

    def distances_to(self, target):
        dist = self._cache.get(target)
        if dist is None:
            dist = dijkstra(self.adj, target)
            self._cache[target] = dist
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(target)
        return dist

    def leg(self, source, target):
        """``(nodes, edges)`` of the chosen path, or None if unreachable."""
        if source == target:
            return [source], []
        dist = self.distances_to(target)
        if source not in dist:
            return None
        nodes, edges = [source], []
        u = source
        while u != target:
            du = dist[u]
            tol = 1e-12 * max(1.0, du)
            for v, w, key in self.adj[u]:
                dv = dist.get(v)
                if dv is not None and dv < du and w + dv <= du + tol:
                    break
            else:
                raise AssertionError(f"shortest-path walk stuck at node {u}")
            nodes.append(v)
            edges.append(key)
            u = v
        return nodes, edges

    def route(self, trip_id, stops):
        """Route through ``stops`` = [(node, ts), ...]; raises NoPathError."""
        path = [stops[0][0]]
        edges = []
        legs = [0]
        for (a, _), (b, _) in zip(stops, stops[1:]):
            found = self.leg(a, b)
            if found is None:
                raise NoPathError(trip_id, a, b)
            nodes, leg_edges = found
            path.extend(nodes[1:])
            edges.extend(leg_edges)
            legs.append(len(path) - 1)
        return RoutedTrip(trip_id, tuple(path), tuple(edges), tuple(legs), tuple(ts for _, ts in stops))


def _collapse(stops):
    out = [stops[0]]
    for node, ts in stops[1:]:
        if node != out[-1][0]:
            out.append((node, ts))
    return out


def route_trip(g: NetworkGraph, w, mt, remap: RemapTable | None = None, router: Router | None = None) -> RoutedTrip:
    """Reconstruct a matched trip leg by leg.

    If any leg has no path, every matched node is passed through the remap
    table and the whole trip is routed once more.
    """
    router = router or Router(g, w)
    stops = _collapse([(m.node, m.ts) for m in mt.matched])
    try:
        return router.route(mt.id, stops)
    except NoPathError:
        if not remap:
            raise
        remapped = _collapse([(apply_remap(g, remap, n), ts) for n, ts in stops])
        return router.route(mt.id, remapped)


_worker_state = {}


def _init_worker(g, weights, remap):
    _worker_state["g"] = g
    _worker_state["router"] = Router(g, weights)
    _worker_state["remap"] = remap


def _route_chunk(chunk):
    g, router, remap = _worker_state["g"], _worker_state["router"], _worker_state["remap"]
    out = []
    for mt in chunk:
        try:
            out.append(route_trip(g, None, mt, remap, router))
        except NoPathError:
            out.append(mt.id)
    return out


def route_trips(g: NetworkGraph, weights, matched, remap=None, threads=1):
    """Route many trips. Returns ``(routed, excluded_ids)`` in input order.

    With ``threads > 1`` trips are split across worker processes; the output
    does not depend on the number of workers.
    """
    matched = list(matched)
    if threads is None:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(matched) < 64:
        _init_worker(g, weights, remap)
        results = _route_chunk(matched)
    else:
        size = math.ceil(len(matched) / (threads * 4))
        chunks = [matched[i : i + size] for i in range(0, len(matched), size)]
        with ProcessPoolExecutor(threads, initializer=_init_worker, initargs=(g, weights, remap)) as ex:
            results = [r for part in ex.map(_route_chunk, chunks) for r in part]
    routed = [r for r in results if isinstance(r, RoutedTrip)]
    excluded = [r for r in results if isinstance(r, str)]
    if excluded:
        log.info("%d trip(s) could not be routed", len(excluded))
    return routed, excluded


@dataclass
class SegmentCounts:
    counts: dict[EdgeKey, int]
    strategy: str = ""

    def get(self, key):
        return self.counts.get(key, 0)

    def total(self):
        return sum(self.counts.values())


def segment_counts(routed, g: NetworkGraph | None = None, strategy="") -> SegmentCounts:
    """Number of traversals of each edge over all routed trips. With ``g``
    every graph edge appears, zero-count edges included."""
    tally = Counter()
    for r in routed:
        tally.update(r.edges)
    counts = {k: tally.get(k, 0) for k in g.edges} if g is not None else {}
    for k, n in tally.items():
        counts[k] = n
    return SegmentCounts(counts, strategy)


# --- corner-weight calibration -------------------------------------------------


@dataclass
class CalibrationResult:
    weights: dict[str, float]
    achieved: dict[str, float]
    converged: bool
    iterations: int
    distance: float
    history: list = field(default_factory=list)


def _split(counts: SegmentCounts, locations):
    totals = {name: sum(counts.get(k) for k in edges) for name, edges in locations.items()}
    grand = sum(totals.values())
    if grand == 0:
        return None
    return {name: t / grand for name, t in totals.items()}


def calibrate_corner_weights(
    g: NetworkGraph,
    trips,
    target: dict[str, float],
    locations: dict[str, tuple[EdgeKey, ...]],
    corners: dict[str, tuple[EdgeKey, ...]] | None = None,
    tol=0.02,
    max_iter=200,
    length_based=False,
    remap=None,
):
    """Tune per-corner weights until the routed split at the counter
    locations is within ``tol`` (L1) of ``target``.

    Each iteration picks the corner with the largest split error and
    multiplies its weight by (achieved/target share) ** step, the ratio
    clamped to [0.5, 2]. A corner's step starts at 1 and halves whenever its
    error changes sign, so a corner that keeps overshooting is bisected
    rather than left to oscillate. The best weights seen are returned.
    ``corners`` defaults to ``locations`` (tune the counter edges themselves).
    Non-convergence is reported through ``converged``, not raised.
    """
    if abs(sum(target.values()) - 1.0) > 1e-9:
        raise ValueError("target shares must sum to 1")
    corners = corners or locations
    if not corners or any(not edges for edges in corners.values()):
        raise ValueError("every corner needs at least one edge")
    if set(target) != set(locations) or set(corners) != set(locations):
        raise ValueError("target, locations and corners must name the same corners")
    names = sorted(locations)
    weights = {c: 1.0 for c in names}
    step = {c: 1.0 for c in names}
    last_sign = {}
    name = "CornerWeightedLength" if length_based else "CornerWeighted"
    history = []
    best = None
    updates = 0
    for _ in range(max_iter + 1):
        strategy = WeightStrategy(name, corner_edges=corners, corner_weights=weights)
        w = assign_weights(g, strategy)
        routed, _ = route_trips(g, w, trips, remap)
        achieved = _split(segment_counts(routed), locations)
        if achieved is None:
            break
        distance = sum(abs(achieved[c] - target[c]) for c in names)
        history.append((dict(weights), dict(achieved), distance))
        if best is None or distance < best[2]:
            best = history[-1]
        if distance <= tol or updates == max_iter:
            break
        worst = max(names, key=lambda c: (abs(achieved[c] - target[c]), -names.index(c)))
        if target[worst] == 0:
            ratio = 2.0
        else:
            ratio = min(2.0, max(0.5, achieved[worst] / target[worst]))
        sign = achieved[worst] > target[worst]
        if worst in last_sign and last_sign[worst] != sign:
            step[worst] /= 2
        last_sign[worst] = sign
        weights[worst] *= ratio ** step[worst]
        updates += 1
    best_weights, best_achieved, best_distance = best if best else (weights, {}, math.inf)
    return CalibrationResult(
        weights=best_weights,
        achieved=best_achieved,
        converged=best_distance <= tol,
        iterations=updates,
        distance=best_distance,
        history=history,
    )
