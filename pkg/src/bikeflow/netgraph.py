"""Street-network graph: loading, spatial lookup, remapping and centrality.

The graph is undirected. Nodes are intersections with WGS84 coordinates and
edges are street or path segments. Parallel edges between the same pair of
nodes are kept and told apart by an ordinal assigned in file order.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from bikeflow.errors import DataError
from bikeflow.geo import haversine_array, polyline_length_m, unit_vectors

CATEGORIES = (
    "cycleway",
    "residential",
    "lane",
    "unclassified",
    "secondary",
    "tertiary",
    "highway97",
    "footpath",
    "other",
)

# endpoint coordinates in an edge LineString must match the node within this
COORD_TOL_DEG = 1e-7


class EdgeKey(NamedTuple):
    """Identity of an edge: the unordered node pair (stored low id first) plus
    an ordinal for parallel edges."""

    u: int
    v: int
    ordinal: int = 0

    @classmethod
    def of(cls, a, b, ordinal=0):
        return cls(a, b, ordinal) if a <= b else cls(b, a, ordinal)

    def other(self, node):
        return self.v if node == self.u else self.u

    def label(self):
        return f"{self.u}-{self.v}-{self.ordinal}"

    @classmethod
    def parse(cls, text):
        """Parse ``"u-v"`` or ``"u-v-ordinal"``."""
        parts = text.strip().split("-")
        if len(parts) not in (2, 3):
            raise ValueError(f"bad edge reference {text!r}, expected u-v or u-v-ordinal")
        nums = [int(p) for p in parts]
        return cls.of(nums[0], nums[1], nums[2] if len(nums) == 3 else 0)


@dataclass(frozen=True)
class GraphNode:
    id: int
    lat: float
    lon: float


@dataclass(frozen=True)
class GraphEdge:
    u: int
    v: int
    length_m: float
    category: str = "other"
    name: str | None = None
    ordinal: int = 0
    # (lon, lat) vertices, GeoJSON order; None means a straight segment
    geometry: tuple | None = None

    @property
    def key(self) -> EdgeKey:
        return EdgeKey.of(self.u, self.v, self.ordinal)


class NetworkGraph:
    """Immutable undirected street graph with a nearest-node index."""

    def __init__(self, nodes, edges):
        self.nodes: dict[int, GraphNode] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise DataError(f"duplicate node id {node.id}")
            if not (-90 <= node.lat <= 90 and -180 <= node.lon <= 180):
                raise DataError(f"node {node.id} has out-of-range coordinates")
            self.nodes[node.id] = node

        self.edges: dict[EdgeKey, GraphEdge] = {}
        self._adj: dict[int, list[EdgeKey]] = {nid: [] for nid in self.nodes}
        for edge in edges:
            if edge.u == edge.v:
                raise DataError(f"self-loop on node {edge.u}")
            for end in (edge.u, edge.v):
                if end not in self.nodes:
                    raise DataError(f"dangling endpoint {end} on edge {edge.u}-{edge.v}")
            if not edge.length_m > 0 or not math.isfinite(edge.length_m):
                raise DataError(f"non-positive length on edge {edge.u}-{edge.v}")
            if edge.category not in CATEGORIES:
                raise DataError(f"unknown category {edge.category!r} on edge {edge.u}-{edge.v}")
            key = edge.key
            if key in self.edges:
                raise DataError(f"duplicate edge {key.label()}")
            self.edges[key] = edge
            self._adj[edge.u].append(key)
            self._adj[edge.v].append(key)
        for keys in self._adj.values():
            keys.sort()

        self._ids = np.array(sorted(self.nodes), dtype=np.int64)
        if len(self._ids):
            lats = np.array([self.nodes[i].lat for i in self._ids])
            lons = np.array([self.nodes[i].lon for i in self._ids])
            self._lats, self._lons = lats, lons
            self._tree = cKDTree(unit_vectors(lats, lons))
        else:
            self._tree = None

    def __len__(self):
        return len(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, NetworkGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def incident(self, node) -> list[EdgeKey]:
        return self._adj[node]

    def degree(self, node) -> int:
        return len(self._adj[node])

    def edges_between(self, a, b) -> list[EdgeKey]:
        lo, hi = (a, b) if a <= b else (b, a)
        return [k for k in self._adj[a] if k.u == lo and k.v == hi]

    def components(self) -> list[list[int]]:
        """Connected components as sorted node lists, ordered by smallest id."""
        seen = set()
        out = []
        for start in sorted(self.nodes):
            if start in seen:
                continue
            comp = [start]
            seen.add(start)
            stack = [start]
            while stack:
                x = stack.pop()
                for key in self._adj[x]:
                    y = key.other(x)
                    if y not in seen:
                        seen.add(y)
                        comp.append(y)
                        stack.append(y)
            out.append(sorted(comp))
        return out

    def edge_length(self, key) -> float:
        return self.edges[key].length_m

    def edge_coords(self, key):
        """(lon, lat) vertex list of an edge, from u to v as stored."""
        edge = self.edges[key]
        if edge.geometry is not None:
            return [list(p) for p in edge.geometry]
        a, b = self.nodes[edge.u], self.nodes[edge.v]
        return [[a.lon, a.lat], [b.lon, b.lat]]

    def nearest(self, lat, lon):
        """Closest node by haversine distance, ties to the lowest id."""
        if self._tree is None:
            raise ValueError("nearest-node query on an empty graph")
        q = unit_vectors([lat], [lon])[0]
        chord, _ = self._tree.query(q)
        # widen slightly so rounding in chord vs haversine cannot hide a tie
        cand = self._tree.query_ball_point(q, chord * (1 + 1e-9) + 1e-15)
        cand = np.asarray(sorted(cand), dtype=np.int64)
        dists = haversine_array(lat, lon, self._lats[cand], self._lons[cand])
        best = None
        for idx, d in zip(cand, dists):
            item = (float(d), int(self._ids[idx]))
            if best is None or item < best:
                best = item
        return best[1], best[0]


def nearest_node(g: NetworkGraph, lat, lon):
    """Return ``(node_id, distance_m)`` of the node nearest to a point."""
    return g.nearest(lat, lon)


# --- file IO -----------------------------------------------------------------


def _close(a, b):
    return abs(a[0] - b[0]) <= COORD_TOL_DEG and abs(a[1] - b[1]) <= COORD_TOL_DEG


def load_network(path) -> NetworkGraph:
    """Read a network GeoJSON FeatureCollection.

    Point features are nodes (``properties.id``); LineString features are
    edges (``u``, ``v``, ``category``, optional ``length_m`` and ``name``).
    Missing lengths are computed along the LineString.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError("file not found", locator=str(path)) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc.msg}", locator=f"{path}:{exc.lineno}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise DataError("not a GeoJSON FeatureCollection", locator=str(path))
    features = doc.get("features")
    if not isinstance(features, list):
        raise DataError("missing features array", locator=str(path))

    nodes = []
    raw_edges = []
    for i, feat in enumerate(features):
        loc = f"{path}: feature[{i}]"
        try:
            geom = feat["geometry"]
            props = feat.get("properties") or {}
            gtype = geom["type"]
            coords = geom["coordinates"]
        except (KeyError, TypeError):
            raise DataError("feature lacks geometry", locator=loc) from None
        if gtype == "Point":
            nid = props.get("id")
            if not isinstance(nid, int) or isinstance(nid, bool) or nid < 0:
                raise DataError("node id must be a non-negative integer", locator=loc)
            try:
                lon, lat = float(coords[0]), float(coords[1])
            except (TypeError, ValueError, IndexError):
                raise DataError("bad Point coordinates", locator=loc) from None
            nodes.append((loc, GraphNode(nid, lat, lon)))
        elif gtype == "LineString":
            raw_edges.append((loc, props, coords))
        else:
            raise DataError(f"unsupported geometry type {gtype!r}", locator=loc)

    seen = {}
    for loc, node in nodes:
        if node.id in seen:
            raise DataError(f"duplicate node id {node.id}", locator=loc)
        seen[node.id] = node

    edges = []
    ordinals: dict[tuple[int, int], int] = {}
    for loc, props, coords in raw_edges:
        u, v = props.get("u"), props.get("v")
        if not isinstance(u, int) or not isinstance(v, int):
            raise DataError("edge needs integer u and v", locator=loc)
        for end in (u, v):
            if end not in seen:
                raise DataError(f"dangling endpoint {end}", locator=loc)
        if u == v:
            raise DataError("self-loop edge", locator=loc)
        try:
            line = [(float(c[0]), float(c[1])) for c in coords]
        except (TypeError, ValueError, IndexError):
            raise DataError("bad LineString coordinates", locator=loc) from None
        if len(line) < 2:
            raise DataError("LineString needs at least two vertices", locator=loc)
        nu, nv = seen[u], seen[v]
        if not (_close(line[0], (nu.lon, nu.lat)) and _close(line[-1], (nv.lon, nv.lat))):
            raise DataError("LineString endpoints do not match nodes u and v", locator=loc)
        category = props.get("category", "other")
        if category not in CATEGORIES:
            raise DataError(f"unknown category {category!r}", locator=loc)
        length = props.get("length_m")
        if length is None:
            length = polyline_length_m([(lat, lon) for lon, lat in line])
        else:
            try:
                length = float(length)
            except (TypeError, ValueError):
                raise DataError("length_m must be a number", locator=loc) from None
        if not length > 0:
            raise DataError("non-positive length", locator=loc)
        pair = (min(u, v), max(u, v))
        ordinal = ordinals.get(pair, 0)
        ordinals[pair] = ordinal + 1
        straight = len(line) == 2 and line[0] == (nu.lon, nu.lat) and line[1] == (nv.lon, nv.lat)
        edges.append(
            GraphEdge(
                u=u,
                v=v,
                length_m=length,
                category=category,
                name=props.get("name"),
                ordinal=ordinal,
                geometry=None if straight else tuple(line),
            )
        )
    return NetworkGraph([n for _, n in nodes], edges)


def network_to_geojson(g: NetworkGraph) -> dict:
    features = []
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [n.lon, n.lat]},
                "properties": {"id": nid},
            }
        )
    for key, e in g.edges.items():
        props = {"u": e.u, "v": e.v, "length_m": e.length_m, "category": e.category}
        if e.name is not None:
            props["name"] = e.name
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": g.edge_coords(key)},
                "properties": props,
            }
        )
    return {"type": "FeatureCollection", "features": features}


def save_network(g: NetworkGraph, path):
    write_geojson(network_to_geojson(g), path)


def write_geojson(doc, path):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")


def edge_layer(g: NetworkGraph, props_by_edge: dict) -> dict:
    """FeatureCollection with one LineString per edge, in graph edge order,
    annotated with the supplied per-edge properties."""
    features = []
    for key, e in g.edges.items():
        props = {"u": e.u, "v": e.v, "ordinal": e.ordinal, "category": e.category}
        if e.name is not None:
            props["name"] = e.name
        props.update(props_by_edge.get(key, {}))
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": g.edge_coords(key)},
                "properties": props,
            }
        )
    return {"type": "FeatureCollection", "features": features}


# --- remapping ---------------------------------------------------------------


@dataclass
class RemapTable:
    """Problem node -> replacement node."""

    mapping: dict[int, int] = field(default_factory=dict)

    def validate(self, g: NetworkGraph):
        for src, dst in self.mapping.items():
            if dst not in g.nodes:
                raise DataError(f"remap target {dst} is not a graph node")
            if dst in self.mapping:
                raise DataError(f"remap chain through node {dst}")
            if src == dst:
                raise DataError(f"remap of node {src} onto itself")

    def __contains__(self, node):
        return node in self.mapping

    def __len__(self):
        return len(self.mapping)


def load_remap(path, g: NetworkGraph | None = None) -> RemapTable:
    path = Path(path)
    table = {}
    try:
        fh = path.open(newline="")
    except FileNotFoundError:
        raise DataError("file not found", locator=str(path)) from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["from_node", "to_node"]:
            raise DataError("expected header from_node,to_node", locator=f"{path}:1")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                src, dst = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise DataError("bad remap row", locator=f"{path}:{lineno}") from None
            if src in table:
                raise DataError(f"node {src} remapped twice", locator=f"{path}:{lineno}")
            table[src] = dst
    remap = RemapTable(table)
    if g is not None:
        remap.validate(g)
    return remap


def apply_remap(g: NetworkGraph, t: RemapTable, node: int) -> int:
    return t.mapping.get(node, node)


# --- shortest paths and centrality --------------------------------------------


def weighted_adjacency(g: NetworkGraph, weight_of) -> dict[int, list[tuple[int, float, EdgeKey]]]:
    """Per node, ``(neighbour, weight, edge)`` with parallel edges reduced to
    the cheapest (lowest ordinal on ties). Neighbours are in ascending id."""
    adj = {}
    for node in g.nodes:
        best: dict[int, tuple[float, EdgeKey]] = {}
        for key in g.incident(node):
            other = key.other(node)
            w = weight_of(key)
            cur = best.get(other)
            if cur is None or (w, key.ordinal) < (cur[0], cur[1].ordinal):
                best[other] = (w, key)
        adj[node] = [(nbr, best[nbr][0], best[nbr][1]) for nbr in sorted(best)]
    return adj


def dijkstra(adj, source) -> dict[int, float]:
    """Distances from ``source`` to every reachable node."""
    dist = {source: 0.0}
    done = set()
    heap = [(0.0, source)]
    while heap:
        d, x = heapq.heappop(heap)
        if x in done:
            continue
        done.add(x)
        for y, w, _ in adj[x]:
            nd = d + w
            if nd < dist.get(y, math.inf):
                dist[y] = nd
                heapq.heappush(heap, (nd, y))
    return dist


def closeness_centrality(g: NetworkGraph) -> dict[int, float]:
    """Length-weighted closeness within each connected component.

    ``CC(v) = (n - 1) / sum(d(v, u))`` where ``n`` is the size of v's
    component; isolated nodes get 0.
    """
    if not len(g):
        raise ValueError("closeness centrality of an empty graph")
    adj = weighted_adjacency(g, g.edge_length)
    out = {}
    for node in sorted(g.nodes):
        dist = dijkstra(adj, node)
        total = math.fsum(dist.values())
        out[node] = (len(dist) - 1) / total if total > 0 else 0.0
    return out
