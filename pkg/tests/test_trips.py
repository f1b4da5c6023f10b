import random

import pytest
from hypothesis import given, settings, strategies as st

from bikeflow.errors import DataError
from bikeflow.geo import offset_latlon
from bikeflow.trips import (
    CleaningReport,
    CleaningThresholds,
    GpsPoint,
    Trip,
    clean_trips,
    drop_duplicate_timestamps,
    filter_bounds,
    format_ts,
    load_counters,
    load_matched,
    load_trips,
    match_and_filter,
    parse_ts,
    preclean,
    save_counters,
    save_matched,
    save_trips,
    trip_extent_m,
    update_interval_stats,
)

from randomdata import ORIGIN, loosen, random_polygon, random_thresholds, random_trips, small_grid


def _trip(tid, offsets, t0=0):
    """offsets: [(dt, north_m, east_m)] relative to ORIGIN, dt cumulative."""
    pts = []
    for dt, n, e in offsets:
        lat, lon = offset_latlon(*ORIGIN, n, e)
        pts.append(GpsPoint(tid, t0 + dt, lat, lon))
    return Trip(tid, tuple(pts))


def test_timestamp_round_trip():
    assert parse_ts("2018-06-11T00:00:00Z") == 1528675200
    assert format_ts(1528675200) == "2018-06-11T00:00:00Z"
    with pytest.raises(ValueError):
        parse_ts("2018-06-11T00:00:00")


def test_load_trips_sorts_and_groups(tmp_path):
    p = tmp_path / "trips.csv"
    p.write_text(
        "trip_id,timestamp,lat,lon\n"
        "b,2018-06-11T00:01:00Z,49.0,-119.0\n"
        "a,2018-06-11T00:02:00Z,49.1,-119.0\n"
        "a,2018-06-11T00:01:00Z,49.2,-119.0\n"
    )
    trips = load_trips(p)
    assert [t.id for t in trips] == ["a", "b"]
    assert [pt.lat for pt in trips[0].points] == [49.2, 49.1]


def test_load_trips_reports_line(tmp_path):
    p = tmp_path / "trips.csv"
    p.write_text("trip_id,timestamp,lat,lon\na,2018-06-11T00:01:00Z,not-a-number,-119\n")
    with pytest.raises(DataError, match=":2"):
        load_trips(p)


def test_trip_csv_round_trip(tmp_path):
    trips = random_trips(random.Random(3), n_trips=5)
    trips, _ = drop_duplicate_timestamps(trips)
    p = tmp_path / "t.csv"
    save_trips(trips, p)
    again = load_trips(p)
    assert sorted(trips, key=lambda t: t.id) == again


def test_counters_round_trip_and_validation(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text(
        "counter_id,node_id,hour_start,count,direction\n"
        "C1,5,2018-06-11T01:00:00Z,3,N\n"
        "C1,5,2018-06-11T00:00:00Z,2,S\n"
    )
    series = load_counters(p)
    assert series[0].total == 5
    assert [s.hour_start for s in series[0].samples] == [1528675200, 1528678800]
    q = tmp_path / "c2.csv"
    save_counters(series, q)
    assert load_counters(q) == series

    bad = tmp_path / "bad.csv"
    bad.write_text("counter_id,node_id,hour_start,count\nC1,5,2018-06-11T00:00:00Z,-1\n")
    with pytest.raises(DataError, match="negative"):
        load_counters(bad)
    bad.write_text("counter_id,node_id,hour_start,count\nC1,5,2018-06-11T00:30:00Z,1\n")
    with pytest.raises(DataError, match="hour"):
        load_counters(bad)


def test_duplicate_timestamps_keep_first():
    t = Trip("x", (GpsPoint("x", 0, 1.0, 1.0), GpsPoint("x", 0, 2.0, 2.0), GpsPoint("x", 5, 3.0, 3.0)))
    out, rep = drop_duplicate_timestamps([t])
    assert [p.lat for p in out[0].points] == [1.0, 3.0]
    assert rep.point_tallies == {"dup_ts": 1}
    assert rep.balanced()


def test_trip_extent_is_max_pairwise():
    t = _trip("x", [(0, 0, 0), (60, 300, 0), (120, 0, 0)])
    assert trip_extent_m(t.points) == pytest.approx(300, rel=1e-6)


def test_preclean_trip_rules():
    th = CleaningThresholds()
    short = _trip("short", [(0, 0, 0), (60, 50, 0), (120, 80, 0)])
    brief = _trip("brief", [(0, 0, 0), (20, 100, 0), (40, 200, 0)])
    ok = _trip("ok", [(0, 0, 0), (60, 200, 0), (120, 400, 0)])
    out, rep = preclean([short, brief, ok], th)
    assert [t.id for t in out] == ["ok"]
    assert rep.dropped == {"short": "trip_too_short", "brief": "duration_too_short"}
    assert rep.balanced()


def test_speed_spike_removed():
    # a single fix jumps 2 km away and back within a minute
    t = _trip("s", [(0, 0, 0), (60, 200, 0), (90, 2200, 0), (120, 400, 0), (180, 600, 0)])
    out, rep = preclean([t])
    assert len(out[0].points) == 4
    assert rep.point_tallies == {"speed": 1}


def test_bounds_filter_keeps_boundary_points():
    ring = [offset_latlon(*ORIGIN, n, e) for n, e in ((0, 0), (0, 1000), (1000, 1000), (1000, 0))]
    t = Trip("b", (GpsPoint("b", 0, *ring[0]), GpsPoint("b", 60, *offset_latlon(*ORIGIN, 500, 500)),
                   GpsPoint("b", 120, *offset_latlon(*ORIGIN, 5000, 500))))
    out, rep = filter_bounds([t], ring)
    assert len(out[0].points) == 2
    assert rep.point_tallies == {"out_of_bounds": 1}
    with pytest.raises(ValueError):
        filter_bounds([t], ring[:2])


def test_match_distance_and_three_point_rule():
    g = small_grid()
    near = _trip("n", [(0, 5, 5), (60, 10, 200), (120, 0, 390), (180, 0, 400)])
    far = _trip("f", [(0, 5, 5), (60, 100, 5000), (120, 5, 200)])
    out, rep = match_and_filter([near, far], g, 150)
    assert [m.id for m in out] == ["n"]
    # the last two fixes snap to the same node and collapse to the earlier one
    assert out[0].nodes == [0, 1, 2]
    assert out[0].matched[-1].ts == 120
    assert rep.dropped == {"f": "too_few_points"}
    assert rep.point_tallies == {"match_distance": 1, "too_few_points": 2}
    assert rep.balanced()


def test_report_addition_and_chaining():
    a = CleaningReport(2, 1, 10, 6, {"x": 4}, {"x": 1})
    b = CleaningReport(1, 1, 5, 5)
    s = a + b
    assert (s.trips_in, s.points_out, s.point_tallies) == (3, 11, {"x": 4})
    c = CleaningReport(1, 0, 6, 0, {"y": 6}, {"y": 1})
    chained = a.then(c)
    assert chained.balanced()
    assert (chained.trips_in, chained.trips_out) == (2, 0)


def test_matched_round_trip(tmp_path):
    g = small_grid()
    matched, _ = clean_trips(random_trips(random.Random(11), 8), g)
    p = tmp_path / "m.csv"
    save_matched(matched, p)
    assert load_matched(p) == matched


def test_interval_stats():
    t = _trip("x", [(0, 0, 0), (30, 0, 0), (100, 0, 0), (250, 0, 0)])
    median, hist = update_interval_stats([t])
    assert median == 70
    assert hist == {30: 1, 60: 1, 150: 1}
    assert update_interval_stats([_trip("y", [(0, 0, 0)])]) == (None, {})


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cleaning_balances_and_is_monotone(seed):
    rng = random.Random(seed)
    g = small_grid()
    trips = random_trips(rng)
    polygon = random_polygon(rng) if rng.random() < 0.5 else None
    tight = random_thresholds(rng)
    loose = loosen(tight, rng)
    m1, r1 = clean_trips(trips, g, polygon, tight)
    m2, r2 = clean_trips(trips, g, polygon, loose)
    assert r1.balanced() and r2.balanced()
    assert r2.points_out >= r1.points_out
    assert {m.id for m in m1} <= {m.id for m in m2}
