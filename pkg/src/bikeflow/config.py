"""Pipeline configuration: a flat ``key = value`` file with dotted keys.

Grammar, one entry per line::

    # comment
    paths.network = network.geojson
    clean.max_match_m = 150
    location.City Park.edges = 12-13, 13-14-1

Blank lines and ``#`` comments are ignored, a key may appear once, and the
value is everything after the first ``=`` with surrounding spaces removed.
Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path

from bikeflow.errors import ConfigError, DataError
from bikeflow.netgraph import CATEGORIES, EdgeKey
from bikeflow.router import DEFAULT_CORNER_WEIGHTS, STRATEGIES, resolve_strategy_name
from bikeflow.scale import KELOWNA_LOG_LINEAR_A, KELOWNA_LOG_LINEAR_B, KELOWNA_MULTIPLIER, STUDY_DAYS
from bikeflow.trips import CleaningThresholds


def parse_config_text(text, source="<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key or any(not part.strip() for part in key.split(".")):
            raise ConfigError(f"{source}:{lineno}: malformed key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _float(raw, key, positive=True):
    try:
        v = float(raw[key])
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw[key]!r}") from None
    if positive and not v > 0:
        raise ConfigError(f"{key}: must be positive")
    return v


def _int(raw, key):
    try:
        return int(raw[key])
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw[key]!r}") from None


def _bool(raw, key):
    v = raw[key].lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw[key]!r}")


def _list(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def _edges(raw, key):
    try:
        return tuple(EdgeKey.parse(v) for v in _list(raw[key]))
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


@dataclass
class PipelineConfig:
    base_dir: Path = Path(".")
    network: Path | None = None
    trips: Path | None = None
    counters: Path | None = None
    remap: Path | None = None
    boundary: Path | None = None
    out: Path = Path("out")
    thresholds: CleaningThresholds = CleaningThresholds()
    strategy: str = "Length"
    eval_strategies: tuple[str, ...] = STRATEGIES
    category_weights: dict[str, float] = field(default_factory=dict)
    corner_edges: dict[str, tuple[EdgeKey, ...]] = field(default_factory=dict)
    corner_weights: dict[str, float] = field(default_factory=dict)
    locations: dict[str, tuple[EdgeKey, ...]] = field(default_factory=dict)
    location_counters: dict[str, tuple[str, ...]] = field(default_factory=dict)
    crossings: dict[str, tuple[EdgeKey, ...]] = field(default_factory=dict)
    speed_threshold_kmh: float = 22.5
    derive_threshold: bool = False
    utc_offset_h: float = 0.0
    regression_location: str | None = None
    visual: tuple[str, ...] = ()
    calibrate: bool = False
    calibrate_tol: float = 0.02
    calibrate_max_iter: int = 200
    scale_model: str = "multiplier"
    scale_fit: bool = False
    multiplier: float = KELOWNA_MULTIPLIER
    loglinear_a: float = KELOWNA_LOG_LINEAR_A
    loglinear_b: float = KELOWNA_LOG_LINEAR_B
    study_days: int = STUDY_DAYS
    scale_strategy: str = "Length"
    threads: int | None = None
    synth: dict[str, str] = field(default_factory=dict)
    raw: dict[str, str] = field(default_factory=dict)

    def path(self, name) -> Path:
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"paths.{name} is not set")
        return value


_THRESHOLD_KEYS = {f.name for f in fields(CleaningThresholds)}


def build_config(raw: dict[str, str], base_dir=Path(".")) -> PipelineConfig:
    base_dir = Path(base_dir)
    cfg = PipelineConfig(base_dir=base_dir, out=base_dir / "out", raw=dict(raw))
    thresholds = {}
    corner_weights = {}
    used = set()

    def resolve(value):
        p = Path(value)
        return p if p.is_absolute() else base_dir / p

    for key in sorted(raw):
        parts = key.split(".")
        head = parts[0]
        handled = True
        if head == "paths" and len(parts) == 2 and parts[1] in (
            "network", "trips", "counters", "remap", "boundary", "out"
        ):
            setattr(cfg, parts[1], resolve(raw[key]))
        elif head == "clean" and len(parts) == 2 and parts[1] in _THRESHOLD_KEYS:
            thresholds[parts[1]] = _float(raw, key)
        elif key == "strategy.default":
            cfg.strategy = resolve_strategy_name(raw[key])
        elif key == "eval.strategies":
            names = _list(raw[key])
            cfg.eval_strategies = STRATEGIES if names == ["all"] else tuple(resolve_strategy_name(n) for n in names)
        elif head == "weights" and len(parts) == 3 and parts[1] == "pp":
            if parts[2] not in CATEGORIES:
                raise ConfigError(f"{key}: unknown category {parts[2]!r}")
            cfg.category_weights[parts[2]] = _float(raw, key)
        elif head == "weights" and len(parts) == 3 and parts[1] == "corner":
            corner_weights[parts[2]] = _float(raw, key)
        elif head == "corner" and len(parts) == 3 and parts[2] == "edges":
            cfg.corner_edges[parts[1]] = _edges(raw, key)
        elif head == "location" and len(parts) == 3 and parts[2] == "edges":
            cfg.locations[parts[1]] = _edges(raw, key)
        elif head == "location" and len(parts) == 3 and parts[2] == "counters":
            cfg.location_counters[parts[1]] = tuple(_list(raw[key]))
        elif head == "crossing" and len(parts) == 3 and parts[2] == "edges":
            cfg.crossings[parts[1]] = _edges(raw, key)
        elif key == "eval.speed_threshold_kmh":
            cfg.speed_threshold_kmh = _float(raw, key)
        elif key == "eval.derive_threshold":
            cfg.derive_threshold = _bool(raw, key)
        elif key == "eval.utc_offset_h":
            cfg.utc_offset_h = _float(raw, key, positive=False)
        elif key == "eval.regression_location":
            cfg.regression_location = raw[key]
        elif key == "eval.visual":
            cfg.visual = tuple(resolve_strategy_name(n) for n in _list(raw[key]))
        elif key == "calibrate.enabled":
            cfg.calibrate = _bool(raw, key)
        elif key == "calibrate.tol":
            cfg.calibrate_tol = _float(raw, key)
        elif key == "calibrate.max_iter":
            cfg.calibrate_max_iter = _int(raw, key)
        elif key == "scale.model":
            cfg.scale_model = raw[key].lower()
        elif key == "scale.fit":
            cfg.scale_fit = _bool(raw, key)
        elif key == "scale.multiplier":
            cfg.multiplier = _float(raw, key)
        elif key == "scale.loglinear.a":
            cfg.loglinear_a = _float(raw, key, positive=False)
        elif key == "scale.loglinear.b":
            cfg.loglinear_b = _float(raw, key, positive=False)
        elif key == "scale.study_days":
            cfg.study_days = _int(raw, key)
        elif key == "scale.strategy":
            cfg.scale_strategy = resolve_strategy_name(raw[key])
        elif key == "run.threads":
            cfg.threads = _int(raw, key)
        elif head == "synth" and len(parts) == 2:
            cfg.synth[parts[1]] = raw[key]
        else:
            handled = False
        if not handled:
            raise ConfigError(f"unknown config key {key!r}")
        used.add(key)

    cfg.thresholds = CleaningThresholds(**thresholds)
    for name in cfg.corner_edges:
        cfg.corner_weights[name] = corner_weights.pop(name, DEFAULT_CORNER_WEIGHTS.get(name, 1.0))
    if corner_weights:
        raise ConfigError(f"corner weight(s) without edges: {', '.join(sorted(corner_weights))}")
    unknown = set(cfg.location_counters) - set(cfg.locations)
    if unknown:
        raise ConfigError(f"counters given for location(s) without edges: {', '.join(sorted(unknown))}")
    if cfg.scale_model not in ("multiplier", "loglinear"):
        raise ConfigError("scale.model must be 'multiplier' or 'loglinear'")
    if cfg.study_days <= 0:
        raise ConfigError("scale.study_days must be positive")
    if cfg.regression_location is not None and cfg.regression_location not in cfg.locations:
        raise ConfigError(f"eval.regression_location {cfg.regression_location!r} is not a location")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("run.threads must be at least 1")
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return build_config(parse_config_text(text, str(path)), path.parent)


def load_boundary(path):
    """(lat, lon) polygon from a ``lat,lon`` CSV."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except FileNotFoundError:
        raise DataError("file not found", locator=str(path)) from None
    ring = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["lat", "lon"]:
            raise DataError("expected header lat,lon", locator=f"{path}:1")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ring.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise DataError("bad boundary row", locator=f"{path}:{lineno}") from None
    if len(set(ring)) < 3:
        raise DataError("boundary polygon needs at least 3 vertices", locator=str(path))
    return ring
