import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bikeflow.netgraph import GraphEdge, GraphNode, NetworkGraph  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def node_feature(nid, lat, lon):
    return {"type": "Feature", "geometry": {"type": "Point", "coordinates": [lon, lat]}, "properties": {"id": nid}}


def edge_feature(u, v, coords, **props):
    return {
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords},
        "properties": {"u": u, "v": v, **props},
    }


def write_fc(path, features):
    path.write_text(json.dumps({"type": "FeatureCollection", "features": features}))
    return path


@pytest.fixture
def triangle():
    """A(1)-B(2)-C(3) with AB = BC = 1 m and AC = 1.5 m."""
    nodes = [GraphNode(1, 0.0, 0.0), GraphNode(2, 0.0, 0.001), GraphNode(3, 0.001, 0.0005)]
    edges = [
        GraphEdge(1, 2, 1.0, "residential"),
        GraphEdge(2, 3, 1.0, "residential"),
        GraphEdge(1, 3, 1.5, "residential"),
    ]
    return NetworkGraph(nodes, edges)


@pytest.fixture
def path3():
    """A(1)-B(2)-C(3), unit lengths."""
    nodes = [GraphNode(1, 0.0, 0.0), GraphNode(2, 0.0, 0.001), GraphNode(3, 0.0, 0.002)]
    edges = [GraphEdge(1, 2, 1.0, "residential"), GraphEdge(2, 3, 1.0, "cycleway")]
    return NetworkGraph(nodes, edges)


# acceptance criteria register their outcome here; printed after the run
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[key])
