"""Run every weighting strategy on a synthetic city and tabulate the scores.

    python scripts/strategy_comparison.py --trips 400 --sigma 20 --interval 138

Generates the scenario into --out, runs ``clean`` and ``evaluate`` through
the CLI and prints one row per strategy from evaluation.json.
"""

import argparse
import json
import sys
from pathlib import Path

from bikeflow.cli import main as cli


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("runs/strategy_comparison"))
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--trips", type=int, default=400)
    p.add_argument("--sigma", type=float, default=20.0, help="GPS noise, metres")
    p.add_argument("--interval", type=float, default=138.0, help="mean seconds between fixes")
    p.add_argument("--threads", type=int, default=1)
    return p.parse_args(argv)


def run(args):
    args.out.mkdir(parents=True, exist_ok=True)
    synth = args.out / "synth.cfg"
    synth.write_text(
        "paths.out = data\n"
        f"synth.seed = {args.seed}\n"
        f"synth.n_trips = {args.trips}\n"
        f"synth.gps_sigma_m = {args.sigma}\n"
        f"synth.interval_s = {args.interval}\n"
    )
    cfg = args.out / "data" / "pipeline.cfg"
    steps = [["synth", "--config", str(synth)], ["clean", "--config", str(cfg)],
             ["evaluate", "--config", str(cfg), "--threads", str(args.threads)]]
    for argv in steps:
        code = cli(argv)
        if code:
            sys.exit(f"{argv[0]} failed with exit code {code}")
    return json.loads((args.out / "data" / "out" / "evaluation.json").read_text())


def fmt(v, spec):
    return "-" if v is None else format(v, spec)


def report(ev):
    print(f"counter split: { {k: round(v, 3) for k, v in ev['counter_split'].items()} }")
    print(f"speed threshold: {ev['speed_threshold_kmh']} km/h\n")
    print(f"{'strategy':<28}{'feasible':>10}{'split L1':>10}{'R^2':>8}{'p':>10}")
    for name, b in ev["strategies"].items():
        reg = b.get("regression") or {}
        print(
            f"{name:<28}{fmt(b['speed_fraction'], '.3f'):>10}{fmt(b.get('split_distance'), '.3f'):>10}"
            f"{fmt(reg.get('r_squared'), '.3f'):>8}{fmt(reg.get('p_value'), '.2e'):>10}"
        )
    print()
    for crit, names in ev["ranking"]["per_criterion"].items():
        print(f"best by {crit}: {', '.join(names) or '-'}")
    print(f"overall: {ev['ranking']['aggregate']}")


if __name__ == "__main__":
    report(run(parse_args()))
