"""Numbers derived from the published Kelowna results.

These cannot be reproduced without the original data; they are printed
here so the shipped defaults can be checked by hand.
"""

import math

from bikeflow.evaluation import SplitVector, split_distance
from bikeflow.scale import KELOWNA_LOG_LINEAR_A, KELOWNA_LOG_LINEAR_B, KELOWNA_MULTIPLIER, LogLinear, apply_log_linear

LOCATIONS = ("City Park", "Waterfront", "Cawston", "Ethel")
SPLITS = {
    "Counter Data Split": (40.7, 16.5, 28.4, 16.5),
    "Shortest Length": (41.3, 26.0, 22.9, 9.7),
    "Path Preference": (45.5, 31.3, 14.2, 9.0),
    "Simplified Path Preference": (47.0, 25.5, 15.4, 12.1),
    "Weighted Length": (39.8, 23.5, 26.6, 10.1),
    "Closeness Centrality": (53.4, 24.5, 15.8, 6.3),
    "Unbiased": (51.7, 24.1, 12.8, 11.4),
    "Corner Weighted": (44.7, 17.1, 12.5, 16.6),
    "Corner Weighted Length": (35.4, 36.3, 22.9, 5.4),
}


def vec(values, normalise=False):
    total = sum(values) if normalise else 100.0
    return SplitVector({n: v / total for n, v in zip(LOCATIONS, values)})


def main():
    m = LogLinear()
    print(f"log-linear a={KELOWNA_LOG_LINEAR_A} b={KELOWNA_LOG_LINEAR_B}")
    for x in (0, 10, 100):
        print(f"  AADB({x:>3}) = {apply_log_linear(m, x):.6f}   exp direct {math.exp(KELOWNA_LOG_LINEAR_A * x + KELOWNA_LOG_LINEAR_B):.6f}")
    print(f"multiplier {KELOWNA_MULTIPLIER}: 10 bike-share trips/day -> {KELOWNA_MULTIPLIER * 10:.0f} AADB\n")

    counter = SPLITS["Counter Data Split"]
    print(f"counter row sums to {sum(counter):.1f}%")
    print(f"{'model':<28}{'L1 raw':>8}{'L1 normalised':>15}")
    for name, row in SPLITS.items():
        if name == "Counter Data Split":
            continue
        raw = split_distance(vec(row), vec(counter))
        norm = split_distance(vec(row, True), vec(counter, True))
        print(f"{name:<28}{raw:>8.3f}{norm:>15.4f}")


if __name__ == "__main__":
    main()
