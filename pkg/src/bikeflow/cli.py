"""Command line entry point: ``bikeflow {clean,route,evaluate,aadb,synth}``.

Every command reads one config file (``--config``). Logs go to stderr and
results go to files under ``paths.out``. Exit codes: 0 success, 2 config
error, 3 data error, 4 internal invariant failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from bikeflow.config import PipelineConfig, load_boundary, load_config
from bikeflow.errors import ConfigError, DataError
from bikeflow.evaluation import (
    StrategyEvaluation,
    align_weeks,
    counter_events,
    counter_split,
    counter_totals,
    crossing_report,
    derive_speed_threshold,
    group_by_day,
    hourly_profile,
    passages,
    rank_models,
    speed_feasibility,
    split_distance,
    weekly_regression,
    weekly_totals,
)
from bikeflow.netgraph import closeness_centrality, edge_layer, load_network, load_remap, write_geojson
from bikeflow.router import (
    STRATEGIES,
    WeightStrategy,
    assign_weights,
    calibrate_corner_weights,
    resolve_strategy_name,
    route_trips,
    segment_counts,
)
from bikeflow.scale import (
    LogLinear,
    Multiplier,
    aadb_geojson,
    aadb_layer,
    daily_rate,
    fit_log_linear,
    fit_multiplier,
    write_aadb_csv,
)
from bikeflow.synthgen import Scenario, generate
from bikeflow.trips import (
    clean_trips,
    load_counters,
    load_matched,
    load_trips,
    save_matched,
    save_trips,
    update_interval_stats,
)

log = logging.getLogger("bikeflow")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def _out_dir(cfg):
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


class Pipeline:
    """Lazily loaded inputs shared by the commands of one invocation."""

    def __init__(self, cfg: PipelineConfig, threads=None):
        self.cfg = cfg
        self.threads = threads if threads is not None else cfg.threads
        self._graph = None
        self._cc = None
        self._counters = None
        self._remap = None

    @property
    def graph(self):
        if self._graph is None:
            self._graph = load_network(self.cfg.path("network"))
            log.info("network: %d nodes, %d edges", len(self._graph), len(self._graph.edges))
            for name, edges in {**self.cfg.locations, **self.cfg.corner_edges, **self.cfg.crossings}.items():
                for k in edges:
                    if k not in self._graph.edges:
                        raise ConfigError(f"{name!r} refers to unknown edge {k.label()}")
        return self._graph

    @property
    def remap(self):
        if self._remap is None and self.cfg.remap is not None:
            self._remap = load_remap(self.cfg.remap, self.graph)
        return self._remap

    @property
    def counters(self):
        if self._counters is None:
            self._counters = load_counters(self.cfg.path("counters"))
        return self._counters

    def clean(self):
        cfg = self.cfg
        trips = load_trips(cfg.path("trips"))
        polygon = load_boundary(cfg.boundary) if cfg.boundary is not None else None
        matched, report = clean_trips(trips, self.graph, polygon, cfg.thresholds)
        if not report.balanced():
            raise AssertionError("cleaning report does not balance")
        return trips, matched, report

    def matched(self):
        path = self.cfg.out / "matched_trips.csv"
        if path.exists():
            return load_matched(path)
        log.info("no %s yet; cleaning in memory", path)
        return self.clean()[1]

    def counter_split(self):
        cfg = self.cfg
        if not cfg.location_counters:
            raise ConfigError("no location.<name>.counters entries")
        totals = counter_totals(self.counters, {n: cfg.location_counters.get(n, ()) for n in cfg.locations})
        return counter_split(totals)

    def weights(self, name, matched=None):
        cfg = self.cfg
        g = self.graph
        cc = None
        if name == "ClosenessCentrality":
            if self._cc is None:
                self._cc = closeness_centrality(g)
            cc = self._cc
        strategy = WeightStrategy(
            name,
            category_weights=cfg.category_weights or None,
            corner_edges=cfg.corner_edges,
            corner_weights=cfg.corner_weights,
        )
        calibration = None
        if cfg.calibrate and name in ("CornerWeighted", "CornerWeightedLength"):
            target = self.counter_split().shares
            result = calibrate_corner_weights(
                g,
                matched if matched is not None else self.matched(),
                target,
                cfg.locations,
                cfg.corner_edges or None,
                tol=cfg.calibrate_tol,
                max_iter=cfg.calibrate_max_iter,
                length_based=name == "CornerWeightedLength",
                remap=self.remap,
            )
            strategy.corner_edges = cfg.corner_edges or cfg.locations
            strategy.corner_weights = result.weights
            calibration = {
                "weights": result.weights,
                "achieved": result.achieved,
                "converged": result.converged,
                "iterations": result.iterations,
                "distance": result.distance,
            }
        return assign_weights(g, strategy, cc), calibration

    def route(self, name, matched):
        weights, calibration = self.weights(name, matched)
        routed, excluded = route_trips(self.graph, weights, matched, self.remap, self.threads)
        counts = segment_counts(routed, self.graph, name)
        if counts.total() != sum(len(r.edges) for r in routed):
            raise AssertionError("segment counts do not conserve traversals")
        return routed, excluded, counts, calibration


def counts_layer(g, counts):
    return edge_layer(g, {k: {"count": n, "strategy": counts.strategy} for k, n in counts.counts.items()})


# --- commands -------------------------------------------------------------------------


def cmd_clean(cfg, args):
    pipe = Pipeline(cfg, args.threads)
    trips, matched, report = pipe.clean()
    out = _out_dir(cfg)
    kept_ids = {m.id for m in matched}
    save_trips([t for t in trips if t.id in kept_ids], out / "cleaned_trips.csv")
    save_matched(matched, out / "matched_trips.csv")
    (out / "cleaning_report.json").write_text(report.to_json())
    median, hist = update_interval_stats(trips)
    _dump(
        {"median_s": median, "histogram_30s": {str(k): v for k, v in hist.items()}},
        out / "interval_stats.json",
    )
    log.info("clean: %d of %d trips kept", report.trips_out, report.trips_in)
    return EXIT_OK


def cmd_route(cfg, args):
    name = resolve_strategy_name(args.strategy or cfg.strategy)
    pipe = Pipeline(cfg, args.threads)
    matched = pipe.matched()
    routed, excluded, counts, calibration = pipe.route(name, matched)
    out = _out_dir(cfg)
    _dump(
        [
            {
                "trip_id": r.trip_id,
                "path": list(r.path),
                "edges": [k.label() for k in r.edges],
                "legs": list(r.legs),
                "times": list(r.times),
            }
            for r in routed
        ],
        out / f"routes_{name}.json",
    )
    write_geojson(counts_layer(pipe.graph, counts), out / f"counts_{name}.geojson")
    summary = {
        "strategy": name,
        "trips_in": len(matched),
        "routed": len(routed),
        "excluded_count": len(excluded),
        "excluded": excluded,
        "traversals": counts.total(),
    }
    if calibration is not None:
        summary["calibration"] = calibration
    _dump(summary, out / f"route_summary_{name}.json")
    log.info("route %s: %d routed, %d excluded", name, len(routed), len(excluded))
    return EXIT_OK


def _location_passages(g, routed, locations):
    return {name: passages(routed, g, edges) for name, edges in locations.items()}


def cmd_evaluate(cfg, args):
    pipe = Pipeline(cfg, args.threads)
    g = pipe.graph
    counters = pipe.counters
    matched = pipe.matched()
    out = _out_dir(cfg)
    names = list(cfg.eval_strategies)
    if not cfg.corner_edges:
        skipped = [n for n in names if n.startswith("Corner")]
        if skipped:
            log.warning("no corner.<name>.edges configured; skipping %s", ", ".join(skipped))
        names = [n for n in names if not n.startswith("Corner")]

    target = pipe.counter_split() if cfg.locations else None
    reg_loc = cfg.regression_location or (next(iter(cfg.locations)) if cfg.locations else None)
    counter_hourly = {}
    counter_weekly = None
    for loc in cfg.locations:
        ids = set(cfg.location_counters.get(loc, ()))
        events = counter_events(counters, ids)
        counter_hourly[loc] = hourly_profile(events, cfg.utc_offset_h)
        if loc == reg_loc:
            counter_weekly = weekly_totals(events)

    routed_by = {}
    for name in names:
        routed_by[name] = pipe.route(name, matched)

    threshold = cfg.speed_threshold_kmh
    derived = None
    if cfg.derive_threshold:
        base = routed_by.get("Length") or pipe.route("Length", matched)
        speeds = [s for r in base[0] for s in speed_feasibility([r], g).per_trip[r.trip_id]]
        derived = derive_speed_threshold(speeds)
        threshold = derived

    blocks = {}
    evals = {}
    for name in names:
        routed, excluded, counts, calibration = routed_by[name]
        write_geojson(counts_layer(g, counts), out / f"counts_{name}.geojson")
        speed = speed_feasibility(routed, g, threshold)
        block = {
            "routed": len(routed),
            "excluded": len(excluded),
            "speed_fraction": speed.fraction,
            "legs": speed.n_legs,
        }
        dist = None
        if target is not None:
            try:
                split = counter_split(counts, cfg.locations)
                dist = split_distance(split, target)
                block["split"] = split.to_dict()
            except ValueError:
                block["split"] = None
            block["split_distance"] = dist
        reg = None
        if reg_loc is not None and counter_weekly is not None:
            bs_weekly = weekly_totals(passages(routed, g, cfg.locations[reg_loc]))
            _, x, y = align_weeks(bs_weekly, counter_weekly)
            try:
                reg = weekly_regression(x, y)
                block["regression"] = reg.to_dict()
            except ValueError as exc:
                block["regression"] = None
                log.warning("%s: regression undefined (%s)", name, exc)
        if cfg.crossings:
            block["crossings"] = crossing_report(routed, cfg.crossings)
        block["hourly"] = {
            loc: hourly_profile(ts, cfg.utc_offset_h)
            for loc, ts in _location_passages(g, routed, cfg.locations).items()
        }
        if calibration is not None:
            block["calibration"] = calibration
        blocks[name] = block
        evals[name] = StrategyEvaluation(
            speed_fraction=speed.fraction,
            split_distance=dist,
            r_squared=reg.r_squared if reg and reg.p_value is not None else None,
            p_value=reg.p_value if reg else None,
        )

    visual = [v for v in cfg.visual if v in evals] or None
    ranking = rank_models(evals, visual)
    report = {
        "speed_threshold_kmh": threshold,
        "speed_threshold_derived": derived is not None,
        "regression_location": reg_loc,
        "counter_split": target.to_dict() if target else None,
        "counter_hourly": counter_hourly,
        "strategies": blocks,
        "ranking": ranking.to_dict(),
    }
    _dump(report, out / "evaluation.json")
    log.info("evaluate: aggregate pick %s", ranking.aggregate)
    return EXIT_OK


def _fit_inputs(pipe, routed):
    """Per-location bike-share and counter totals plus daily pairs."""
    cfg = pipe.cfg
    g = pipe.graph
    bs = _location_passages(g, routed, cfg.locations)
    totals = counter_totals(pipe.counters, {n: cfg.location_counters.get(n, ()) for n in cfg.locations})
    pairs = []
    for loc in cfg.locations:
        ids = set(cfg.location_counters.get(loc, ()))
        c_daily = group_by_day(counter_events(pipe.counters, ids))
        b_daily = group_by_day(bs[loc])
        for day in sorted(set(c_daily) | set(b_daily)):
            pairs.append((b_daily.get(day, 0), c_daily.get(day, 0)))
    return {loc: len(ts) for loc, ts in bs.items()}, totals, pairs


def cmd_aadb(cfg, args):
    kind = (args.model or cfg.scale_model).lower()
    if kind not in ("multiplier", "loglinear"):
        raise ConfigError("--model must be 'multiplier' or 'loglinear'")
    pipe = Pipeline(cfg, args.threads)
    name = cfg.scale_strategy
    routed, _, counts, _ = pipe.route(name, pipe.matched())
    days = cfg.study_days
    info = {"strategy": name, "fitted": cfg.scale_fit}
    if kind == "multiplier":
        if cfg.scale_fit:
            bs_totals, c_totals, _ = _fit_inputs(pipe, routed)
            share = counter_split(c_totals).shares
            locs = list(cfg.locations)
            model = fit_multiplier(
                [daily_rate(bs_totals[n], days) for n in locs],
                [daily_rate(c_totals[n], days) for n in locs],
                [share[n] for n in locs],
                days,
            )
        else:
            model = Multiplier(cfg.multiplier, days)
        info["a"] = model.a
    else:
        if cfg.scale_fit:
            _, _, pairs = _fit_inputs(pipe, routed)
            fit = fit_log_linear(pairs, days)
            model = fit.model
            info.update(n_used=fit.n_used, n_zero_dropped=fit.n_zero_dropped, r_squared=fit.r_squared)
        else:
            model = LogLinear(cfg.loglinear_a, cfg.loglinear_b, days)
        info.update(a=model.a, b=model.b)
    info["study_days"] = days
    info["model"] = model.describe()
    layer = aadb_layer(counts, model)
    info["capped_edges"] = sorted(k.label() for k in layer.capped)
    out = _out_dir(cfg)
    write_geojson(aadb_geojson(pipe.graph, layer), out / f"aadb_{kind}.geojson")
    write_aadb_csv(layer, out / f"aadb_{kind}.csv")
    _dump(info, out / f"aadb_{kind}_model.json")
    log.info("aadb: %s", model.describe())
    return EXIT_OK


def _coerce(field_type, value, name):
    text = value.strip()
    try:
        if "tuple" in str(field_type):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if "counter_names" in name:
                return tuple(parts)
            return tuple(int(p) for p in parts)
        if text.lower() == "none" and "None" in str(field_type):
            return None
        if "int" in str(field_type) and "float" not in str(field_type):
            return int(text)
        if "float" in str(field_type):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"synth.{name}: cannot parse {value!r}") from None


def scenario_from_config(cfg: PipelineConfig) -> Scenario:
    known = {f.name: f.type for f in fields(Scenario) if f.name != "extra"}
    kwargs = {}
    for key, value in cfg.synth.items():
        if key not in known:
            raise ConfigError(f"unknown synth key {key!r}")
        kwargs[key] = _coerce(known[key], value, key)
    sc = Scenario(**kwargs)
    try:
        sc.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None
    return sc


def cmd_synth(cfg, args):
    sc = scenario_from_config(cfg)
    paths = generate(sc, _out_dir(cfg))
    log.info("synth: wrote %s", ", ".join(p.name for p in paths.values()))
    return EXIT_OK


COMMANDS = {
    "clean": cmd_clean,
    "route": cmd_route,
    "evaluate": cmd_evaluate,
    "aadb": cmd_aadb,
    "synth": cmd_synth,
}


HELP = {
    "clean": "filter and map-match raw GPS trips",
    "route": "reconstruct routes and segment counts for one strategy",
    "evaluate": "score every strategy and rank them",
    "aadb": "scale segment counts up to AADB",
    "synth": "write a synthetic scenario with ground truth",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bikeflow",
        description="Reconstruct bike-share routes, compare weighting models and estimate AADB.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, help="pipeline config file")
        p.add_argument("--out", help="output directory (overrides paths.out)")
        p.add_argument("--threads", type=int, help="worker processes for routing")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "route":
            p.add_argument("--strategy", help=f"one of {', '.join(STRATEGIES)}")
        if name == "aadb":
            p.add_argument("--model", choices=["multiplier", "loglinear"])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.out = Path(args.out)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"bikeflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValueError) as exc:
        print(f"bikeflow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AssertionError as exc:
        print(f"bikeflow: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
