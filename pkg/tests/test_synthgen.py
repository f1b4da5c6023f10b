import hashlib
import statistics

import pytest

from bikeflow.netgraph import load_network
from bikeflow.router import WeightStrategy, assign_weights, route_trips, segment_counts
from bikeflow.synthgen import Scenario, SplitMix64, build_scenario, generate
from bikeflow.trips import clean_trips, load_counters, load_trips, update_interval_stats


def test_splitmix64_reference_vector():
    # published outputs of the SplitMix64 reference implementation, seed 1234567
    rng = SplitMix64(1234567)
    assert [rng.next_u64() for _ in range(5)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
        4593380528125082431,
        16408922859458223821,
    ]


def test_rng_helpers_in_range():
    rng = SplitMix64(9)
    assert all(0 <= rng.random() < 1 for _ in range(1000))
    assert set(rng.randrange(3) for _ in range(300)) == {0, 1, 2}
    g = [rng.gauss() for _ in range(20_000)]
    assert abs(statistics.fmean(g)) < 0.05
    assert abs(statistics.pstdev(g) - 1) < 0.05
    picks = [rng.choice_weighted([0, 1, 0, 3]) for _ in range(4000)]
    assert set(picks) == {1, 3}
    assert 0.7 < picks.count(3) / len(picks) < 0.8


def test_scenario_validation():
    with pytest.raises(ValueError):
        build_scenario(Scenario(rows=1))
    with pytest.raises(ValueError):
        build_scenario(Scenario(counter_names=("a",)))


def test_barrier_only_crossed_at_bridges():
    sc = Scenario(n_trips=0)
    g = build_scenario(sc).graph
    crossing = [k for k in g.edges if {k.u // sc.cols, k.v // sc.cols} == {sc.barrier_row, sc.barrier_row + 1}]
    assert sorted(k.u % sc.cols for k in crossing) == list(sc.bridge_cols)


def test_same_seed_same_data_other_seed_differs():
    a = build_scenario(Scenario(n_trips=30, gps_sigma_m=10, interval_s=60))
    b = build_scenario(Scenario(n_trips=30, gps_sigma_m=10, interval_s=60))
    c = build_scenario(Scenario(seed=2, n_trips=30, gps_sigma_m=10, interval_s=60))
    assert a.trips == b.trips and a.counters == b.counters and a.graph == b.graph
    assert a.trips != c.trips


def test_counters_are_scaled_passages():
    d = build_scenario(Scenario(n_trips=150, scale_factor=7))
    for name, cid in d.truth.counter_ids.items():
        series = next(s for s in d.counters if s.counter_id == cid)
        assert series.total == 7 * d.truth.counter_passages[name]
        assert d.truth.counter_passages[name] == d.truth.edge_counts[d.truth.counter_edges[name]]
        assert len(series.samples) == d.scenario.study_days * 24


def test_noiseless_recovery_is_exact():
    d = build_scenario(Scenario(n_trips=120))
    matched, report = clean_trips(d.trips, d.graph, d.boundary)
    assert report.trips_out == 120
    routed, excluded = route_trips(d.graph, assign_weights(d.graph, WeightStrategy("Length")), matched)
    assert not excluded
    assert segment_counts(routed, d.graph).counts == d.truth.edge_counts


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_sparse_sampling_median_interval(seed):
    d = build_scenario(Scenario(seed=seed, n_trips=500, interval_s=138))
    median, _ = update_interval_stats(d.trips)
    assert abs(median - 138) <= 6


def test_generate_writes_readable_files(tmp_path):
    paths = generate(Scenario(n_trips=20), tmp_path)
    assert set(paths) == {"network", "trips", "counters", "truth", "boundary", "config"}
    assert len(load_trips(paths["trips"])) == 20
    assert len(load_counters(paths["counters"])) == 4
    assert len(load_network(paths["network"])) == 400
    again = generate(Scenario(n_trips=20), tmp_path / "again")
    for k in paths:
        assert hashlib.sha256(paths[k].read_bytes()).digest() == hashlib.sha256(again[k].read_bytes()).digest()
    assert "location.City Park.counters = C1" in paths["config"].read_text()
