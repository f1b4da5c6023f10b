"""Acceptance criteria, one test per criterion.

Each test times itself against its budget, registers a PASS/FAIL line (shown
inline with ``-s`` and in the terminal summary) and then asserts.
"""

import csv
import hashlib
import math
import random
import time
from contextlib import contextmanager
from pathlib import Path

import mpmath
import numpy as np
import pytest

from bikeflow.cli import main
from bikeflow.evaluation import SplitVector, counter_split, split_distance, weekly_regression
from bikeflow.netgraph import closeness_centrality
from bikeflow.router import (
    DEFAULT_CORNER_WEIGHTS,
    STRATEGIES,
    WeightStrategy,
    assign_weights,
    route_trip,
    route_trips,
    segment_counts,
)
from bikeflow.scale import KELOWNA_LOG_LINEAR_A, KELOWNA_LOG_LINEAR_B, LogLinear, apply_log_linear, daily_rate, fit_multiplier
from bikeflow.synthgen import Scenario, build_scenario
from bikeflow.trips import MatchedPoint, MatchedTrip, clean_trips, update_interval_stats

from conftest import ACCEPTANCE_RESULTS
from oracles import brute_force_best_path, brute_force_closeness, golden_section_min, ols_normal_equations, random_graph
from randomdata import loosen, random_polygon, random_thresholds, random_trips, small_grid

FIXTURES = Path(__file__).parent / "fixtures"


class Outcome:
    def __init__(self):
        self.ok = True
        self.notes = []

    def check(self, cond, note):
        if not cond:
            self.ok = False
            self.notes.append(note)
        return cond


@contextmanager
def criterion(key, title, budget_s=None):
    out = Outcome()
    t0 = time.perf_counter()
    try:
        yield out
    except Exception as exc:
        out.ok = False
        out.notes.append(f"{type(exc).__name__}: {exc}")
        raise
    finally:
        elapsed = time.perf_counter() - t0
        if budget_s is not None and elapsed >= budget_s:
            out.ok = False
            out.notes.append(f"took {elapsed:.1f}s, budget {budget_s}s")
        status = "PASS" if out.ok else "FAIL"
        line = f"[{status}] criterion {key}: {title} ({elapsed:.2f}s)"
        if out.notes:
            line += " -- " + "; ".join(out.notes[:3])
        ACCEPTANCE_RESULTS[key] = line
        print("\n" + line)
    assert out.ok, line


def standard_corners(data):
    edges = {name: (key,) for name, key in data.truth.counter_edges.items()}
    weights = {name: DEFAULT_CORNER_WEIGHTS[name] for name in edges}
    return edges, weights


# --- 1 -----------------------------------------------------------------------------


def test_c01_routing_matches_brute_force():
    rng = random.Random(20240601)
    legs = 0
    with criterion("1", "routing oracle, 200 graphs x 8 strategies", 60) as out:
        for gi in range(200):
            g = random_graph(rng, n_max=30)
            ids = sorted(g.nodes)
            cc = closeness_centrality(g)
            keys = sorted(g.edges)
            corners = {}
            if keys:
                corners = {f"c{i}": tuple(rng.sample(keys, min(len(keys), rng.randint(1, 3)))) for i in range(2)}
            stops = [rng.choice(ids) for _ in range(rng.randint(2, 4))]
            trip = MatchedTrip(f"g{gi}", tuple(MatchedPoint(n, 60 * i, 0.0) for i, n in enumerate(stops)))
            for name in STRATEGIES:
                if name.startswith("Corner") and not corners:
                    continue
                s = WeightStrategy(
                    name,
                    corner_edges=corners if name.startswith("Corner") else {},
                    corner_weights={c: rng.uniform(0.05, 3.0) for c in corners} if name.startswith("Corner") else {},
                )
                w = assign_weights(g, s, cc)
                collapsed = [stops[0]] + [b for a, b in zip(stops, stops[1:]) if a != b]
                oracle = [brute_force_best_path(g, w, a, b)[0] for a, b in zip(collapsed, collapsed[1:])]
                if any(c == math.inf for c in oracle):
                    with pytest.raises(Exception):
                        route_trip(g, w, trip)
                    continue
                r = route_trip(g, w, trip)
                for i, ref in enumerate(oracle):
                    leg_edges = r.edges[r.legs[i] : r.legs[i + 1]]
                    got = math.fsum(w[k] for k in leg_edges)
                    legs += 1
                    out.check(got == ref, f"graph {gi} {name} leg {i}: {got!r} != {ref!r}")
        out.notes.append(f"{legs} legs compared")


# --- 2 -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def standard():
    return build_scenario(Scenario())


@pytest.fixture(scope="module")
def standard_matched(standard):
    return clean_trips(standard.trips, standard.graph, standard.boundary)[0]


def test_c02_count_conservation(standard, standard_matched):
    g = standard.graph
    corner_edges, corner_weights = standard_corners(standard)
    with criterion("2", "count conservation, every strategy", 5) as out:
        cc = closeness_centrality(g)
        for name in STRATEGIES:
            s = WeightStrategy(name, corner_edges=corner_edges, corner_weights=corner_weights)
            routed, _ = route_trips(g, assign_weights(g, s, cc), standard_matched)
            counts = segment_counts(routed, g, name)
            out.check(counts.total() == sum(len(r.edges) for r in routed), f"{name} does not conserve")
            out.check(len(routed) == len(standard_matched), f"{name} dropped trips")


# --- 3 -----------------------------------------------------------------------------


def test_c03_least_squares_fidelity():
    rng = np.random.default_rng(3)
    with criterion("3", "fit_multiplier vs golden section and first-order condition", 5) as out:
        for i in range(100):
            n = int(rng.integers(2, 25))
            x = rng.uniform(0.05, 10, n)
            y = rng.uniform(0, 10, n)
            w = rng.uniform(0.01, 1, n)
            a = fit_multiplier(x, y, w).a

            def loss(t):
                return math.fsum(w * (t * x - y) ** 2)

            ref = golden_section_min(loss, 0.0, float(y.max() / x.min()) + 1.0)
            grad = 2 * math.fsum(w * x * (a * x - y))
            out.check(abs(a - ref) <= 1e-6, f"instance {i}: a={a} golden={ref}")
            out.check(abs(grad) <= 1e-9, f"instance {i}: gradient {grad}")


# --- 4 -----------------------------------------------------------------------------


def test_c04_log_linear_evaluation():
    with criterion("4", "log-linear curve at 0, 10, 100", 1) as out:
        m = LogLinear(KELOWNA_LOG_LINEAR_A, KELOWNA_LOG_LINEAR_B)
        for x in (0, 10, 100):
            ref = mpmath.exp(mpmath.mpf("0.02717094") * x + mpmath.mpf("6.325313"))
            got = apply_log_linear(m, x)
            out.check(abs(got - float(ref)) <= 1e-9 * float(ref), f"x={x}: {got} vs {ref}")


# --- 5 -----------------------------------------------------------------------------


def _t_pvalue(t, dof):
    with mpmath.workdps(60):
        nu = mpmath.mpf(dof)
        t = mpmath.mpf(t)
        return float(mpmath.betainc(nu / 2, mpmath.mpf("0.5"), 0, nu / (nu + t * t), regularized=True))


def test_c05_regression_fidelity():
    rng = np.random.default_rng(5)
    with criterion("5", "weekly regression vs normal equations and t reference", 5) as out:
        for i in range(50):
            n = int(rng.integers(3, 26))
            x = rng.uniform(0, 400, n)
            y = rng.uniform(-2, 5) * x + rng.uniform(-100, 100) + rng.normal(0, rng.uniform(1, 300), n)
            res = weekly_regression(x, y)
            slope, intercept, r2 = ols_normal_equations(list(x), list(y))
            for label, got, ref in (("slope", res.slope, slope), ("intercept", res.intercept, intercept), ("R2", res.r_squared, r2)):
                out.check(abs(got - ref) <= 1e-9 * max(1.0, abs(ref)), f"dataset {i} {label}: {got} vs {ref}")
            resid = y - (slope * x + intercept)
            se = math.sqrt(math.fsum(resid**2) / (n - 2) / math.fsum((x - x.mean()) ** 2))
            p_ref = _t_pvalue(slope / se, n - 2)
            out.check(abs(res.p_value - p_ref) <= 1e-6, f"dataset {i} p: {res.p_value} vs {p_ref}")


# --- 6 -----------------------------------------------------------------------------


def test_c06_centrality_fidelity():
    rng = random.Random(6)
    with criterion("6", "closeness centrality vs all-pairs brute force", 10) as out:
        for i in range(50):
            g = random_graph(rng, n_max=50, extra_max=30)
            cc = closeness_centrality(g)
            ref = brute_force_closeness(g)
            for node, value in ref.items():
                out.check(abs(cc[node] - value) <= 1e-9 * max(1.0, abs(value)), f"graph {i} node {node}")


# --- 7 -----------------------------------------------------------------------------


def test_c07_end_to_end_recovery(standard, standard_matched):
    with criterion("7", "end-to-end recovery, noiseless and noisy", 120) as out:
        g = standard.graph
        w = assign_weights(g, WeightStrategy("Length"))
        routed, _ = route_trips(g, w, standard_matched)
        counts = segment_counts(routed, g).counts
        truth = standard.truth.edge_counts
        exact = sum(1 for k in g.edges if counts.get(k, 0) == truth[k]) / len(g.edges)
        out.notes.append(f"noiseless exact share {exact:.4f}")
        out.check(exact >= 0.99, "fewer than 99% of segments exact")

        noisy = build_scenario(Scenario(seed=3, gps_sigma_m=30, interval_s=138))
        median, _ = update_interval_stats(noisy.trips)
        out.check(abs(median - 138) <= 3, f"setup: median interval {median}s")
        matched, _ = clean_trips(noisy.trips, noisy.graph, noisy.boundary)
        routed, _ = route_trips(noisy.graph, assign_weights(noisy.graph, WeightStrategy("Length")), matched)
        locations = {n: (k,) for n, k in noisy.truth.counter_edges.items()}
        model = counter_split(segment_counts(routed), locations)
        true = counter_split(noisy.truth.counter_passages)
        l1 = split_distance(model, true)
        out.notes.append(f"noisy L1 {l1:.4f} (median interval {median}s)")
        out.check(l1 <= 0.1, "noisy counter-split error above 0.1")


# --- 8 -----------------------------------------------------------------------------


def test_c08_scale_factor_recovery(standard, standard_matched):
    with criterion("8", "multiplier 10 recovered within 2%", 5) as out:
        g = standard.graph
        routed, _ = route_trips(g, assign_weights(g, WeightStrategy("Length")), standard_matched)
        counts = segment_counts(routed)
        days = standard.scenario.study_days
        names = list(standard.truth.counter_edges)
        totals = {s.counter_id: s.total for s in standard.counters}
        x = [daily_rate(counts.get(standard.truth.counter_edges[n]), days) for n in names]
        y = [daily_rate(totals[standard.truth.counter_ids[n]], days) for n in names]
        share = counter_split({n: totals[standard.truth.counter_ids[n]] for n in names}).shares
        a = fit_multiplier(x, y, [share[n] for n in names], days).a
        out.notes.append(f"a = {a:.6f}")
        out.check(abs(a - 10) <= 0.2, "multiplier off by more than 2%")


# --- 9 -----------------------------------------------------------------------------


def test_c09_cleaning_monotone_and_balanced():
    rng = random.Random(9)
    g = small_grid()
    with criterion("9", "cleaning balance and monotonicity, 1000 sets", 30) as out:
        for i in range(1000):
            trips = random_trips(rng)
            polygon = random_polygon(rng) if rng.random() < 0.5 else None
            tight = random_thresholds(rng)
            loose = loosen(tight, rng)
            m1, r1 = clean_trips(trips, g, polygon, tight)
            m2, r2 = clean_trips(trips, g, polygon, loose)
            out.check(r1.balanced() and r2.balanced(), f"set {i}: report does not balance")
            out.check(r2.points_out >= r1.points_out, f"set {i}: loosening kept fewer points")
            out.check({m.id for m in m1} <= {m.id for m in m2}, f"set {i}: loosening dropped a trip")


# --- 10 ----------------------------------------------------------------------------


def _digest(directory):
    return {
        str(p.relative_to(directory)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(directory.rglob("*"))
        if p.is_file()
    }


def test_c10_cli_determinism(tmp_path):
    commands = [
        ["clean"],
        *[["route", "--strategy", s] for s in STRATEGIES],
        ["evaluate"],
        ["aadb", "--model", "multiplier"],
        ["aadb", "--model", "loglinear"],
    ]
    with criterion("10", "CLI reruns are byte-identical", 120) as out:
        digests = []
        for run in range(2):
            root = tmp_path / f"run{run}"
            root.mkdir()
            (root / "synth.cfg").write_text(
                "paths.out = data\nsynth.n_trips = 200\nsynth.gps_sigma_m = 20\nsynth.interval_s = 90\n"
            )
            out.check(main(["synth", "--config", str(root / "synth.cfg")]) == 0, "synth failed")
            cfg = root / "data" / "pipeline.cfg"
            for argv in commands:
                out.check(main(argv + ["--config", str(cfg)]) == 0, f"{argv} failed")
            digests.append(_digest(root))
        out.notes.append(f"{len(digests[0])} files compared")
        differing = sorted(k for k in digests[0] if digests[0][k] != digests[1].get(k))
        out.check(not differing and digests[0].keys() == digests[1].keys(), f"differs: {differing[:3]}")


# --- 11 ----------------------------------------------------------------------------


def _published_splits():
    with open(FIXTURES / "published_splits.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    return {r[0]: SplitVector({n: float(v) / 100 for n, v in zip(names, r[1:])}) for r in rows[1:]}


def test_c11a_published_split_distance():
    with criterion("11a", "published split distance 0.224 +- 0.001") as out:
        rows = _published_splits()
        d = split_distance(rows["Counter Data Split"], rows["Shortest Length"])
        out.notes.append(f"distance {d:.6f}")
        out.check(abs(d - 0.224) <= 0.001, "distance outside tolerance")


@pytest.mark.xfail(
    strict=True,
    reason="the published counter row adds up to 102.1%, so it cannot sum to 1; "
    "normalising it would move the 11a distance to 0.2265",
)
def test_c11b_published_counter_row_sums_to_one():
    with criterion("11b", "published counter row sums to 1 within 1e-9") as out:
        total = math.fsum(_published_splits()["Counter Data Split"].shares.values())
        out.notes.append(f"sum {total:.6f}")
        out.check(abs(total - 1) <= 1e-9, "row does not sum to 1")
