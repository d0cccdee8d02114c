"""Pipeline configuration: defaults, overrides and validation."""
from __future__ import annotations

import copy
import datetime as dt
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

FAMILIES = ("rf", "qrf", "boost", "myopic", "seasonal_avg", "seasonal_quantile")
QUANTILE_FAMILIES = ("qrf", "seasonal_quantile")
CLUSTER_METHODS = ("ckmc", "cchc_ice", "threshold")
DEMAND_INPUTS = ("point", "quantiles")
POLICIES = ("none", "nearest_pickup", "forward_looking")
ORACLES = ("actual", "predicted")

DEFAULTS = {
    "seed": 0,
    "paths": {
        "zones": "zones.json",
        "orders": "orders.csv",
        "weather": "weather.csv",
        "holidays": "holidays.csv",
        "output_dir": "out",
    },
    "data": {
        "business_hours": [630, 1290],
        "first_day": None,
        "last_day": None,
        "test_start": None,
    },
    "synthetic": {
        "first_day": "2024-03-04",
        "days": 28,
        "level_range": [1.0, 4.0],
        "n_events": 10,
        "holidays": [],
    },
    "model": {
        "family": "qrf",
        "lagged": True,
        "weather": True,
        "params": {},
        "grid": None,
        "cv_k": 10,
    },
    "clustering": {
        "method": "cchc_ice",
        "k_range": [3, 6],
        "min_cluster_size": 1,
        "K_min": 3,
        "s_max": 9,
        "D_max": 9.0,
        "demand_input": "point",
    },
    "simulation": {
        "fleet_size": 30,
        "service_minutes": 3,
        "idle_threshold": 5,
        "minutes_per_hop": 4.0,
        "policy": "forward_looking",
        "oracle": "predicted",
        "repetitions": 20,
        "day": None,
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted key at fault."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _merge(base: dict, extra: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(name, "unknown setting")
        if isinstance(base[key], dict) and key not in ("params",):
            if not isinstance(value, dict):
                raise ConfigError(name, "expected an object")
            out[key] = _merge(base[key], value, name + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``a.b=v`` -> (["a", "b"], v); ``v`` is read as JSON, else kept as a string."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(key, "empty key segment")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def apply_overrides(raw: dict, overrides) -> dict:
    raw = copy.deepcopy(raw)
    for text in overrides or ():
        parts, value = parse_override(text)
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(".".join(parts), "cannot set a key below a non-object")
        node[parts[-1]] = value
    return raw


def _date(value, field: str, optional: bool = True):
    if value is None:
        if optional:
            return None
        raise ConfigError(field, "a date is required")
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(field, f"not an ISO date: {value!r}") from None


def _int(value, field: str, lo: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(field, f"must be >= {lo}")
    return value


def _number(value, field: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(field, f"expected a number, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(field, "must be positive")
    return float(value)


def _choice(value, field: str, options) -> str:
    if value not in options:
        raise ConfigError(field, f"must be one of {', '.join(options)}; got {value!r}")
    return value


def _bool(value, field: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(field, f"expected true or false, got {value!r}")
    return value


def _pair(value, field: str, kind=int) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(field, "expected a two-element list")
    conv = _int if kind is int else _number
    return tuple(conv(v, field) for v in value)


@dataclass(frozen=True)
class PipelineConfig:
    raw: dict
    base_dir: Path

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def section(self, name: str) -> dict:
        return self.raw[name]

    def path(self, name: str) -> Path:
        p = Path(self.raw["paths"][name])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("output_dir")

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def validate(raw: dict) -> dict:
    """Check types, enums and cross-field rules; returns ``raw`` unchanged."""
    _int(raw["seed"], "seed", 0)
    for key, value in raw["paths"].items():
        if not isinstance(value, str) or not value:
            raise ConfigError(f"paths.{key}", "expected a non-empty path string")

    data = raw["data"]
    lo, hi = _pair(data["business_hours"], "data.business_hours")
    if not 0 <= lo < hi <= 24 * 60 or (hi - lo) % 15:
        raise ConfigError("data.business_hours", "need 0 <= open < close <= 1440, a multiple of 15 minutes apart")
    first = _date(data["first_day"], "data.first_day")
    last = _date(data["last_day"], "data.last_day")
    if first and last and last < first:
        raise ConfigError("data.last_day", "is before data.first_day")
    _date(data["test_start"], "data.test_start")

    syn = raw["synthetic"]
    _date(syn["first_day"], "synthetic.first_day", optional=False)
    _int(syn["days"], "synthetic.days", 1)
    a, b = _pair(syn["level_range"], "synthetic.level_range", float)
    if not 0 <= a <= b:
        raise ConfigError("synthetic.level_range", "need 0 <= low <= high")
    _int(syn["n_events"], "synthetic.n_events", 0)
    if not isinstance(syn["holidays"], list):
        raise ConfigError("synthetic.holidays", "expected a list of ISO dates")
    for d in syn["holidays"]:
        _date(d, "synthetic.holidays", optional=False)

    model = raw["model"]
    family = _choice(model["family"], "model.family", FAMILIES)
    lagged = _bool(model["lagged"], "model.lagged")
    _bool(model["weather"], "model.weather")
    if family == "myopic" and not lagged:
        raise ConfigError("model.lagged", "the myopic model reads the latest lag, so lagged must be true")
    if not isinstance(model["params"], dict):
        raise ConfigError("model.params", "expected an object")
    grid = model["grid"]
    if grid is not None:
        if not isinstance(grid, dict):
            raise ConfigError("model.grid", "expected an object of lists or null")
        for k, v in grid.items():
            if not isinstance(v, list) or not v:
                raise ConfigError(f"model.grid.{k}", "expected a non-empty list")
    _int(model["cv_k"], "model.cv_k", 2)

    cl = raw["clustering"]
    _choice(cl["method"], "clustering.method", CLUSTER_METHODS)
    k_lo, k_hi = _pair(cl["k_range"], "clustering.k_range")
    if not 2 <= k_lo <= k_hi:
        raise ConfigError("clustering.k_range", f"need 2 <= low <= high, got {[k_lo, k_hi]}")
    _int(cl["min_cluster_size"], "clustering.min_cluster_size", 1)
    _int(cl["K_min"], "clustering.K_min", 1)
    _int(cl["s_max"], "clustering.s_max", 1)
    if cl["D_max"] != "inf":
        _number(cl["D_max"], "clustering.D_max", positive=True)
    demand_input = _choice(cl["demand_input"], "clustering.demand_input", DEMAND_INPUTS)
    if demand_input == "quantiles" and family not in QUANTILE_FAMILIES:
        raise ConfigError("clustering.demand_input",
                          f"quantile input needs a quantile model ({', '.join(QUANTILE_FAMILIES)})")

    sim = raw["simulation"]
    _int(sim["fleet_size"], "simulation.fleet_size", 1)
    _int(sim["service_minutes"], "simulation.service_minutes", 1)
    _int(sim["idle_threshold"], "simulation.idle_threshold", 1)
    _number(sim["minutes_per_hop"], "simulation.minutes_per_hop", positive=True)
    _choice(sim["policy"], "simulation.policy", POLICIES)
    _choice(sim["oracle"], "simulation.oracle", ORACLES)
    _int(sim["repetitions"], "simulation.repetitions", 1)
    _date(sim["day"], "simulation.day")
    return raw


def load_config(path: str | Path, overrides=(), seed: int | None = None) -> PipelineConfig:
    """Read a JSON config, apply ``--set`` overrides and ``--seed``, validate."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON ({exc})") from None
    if not isinstance(user, dict):
        raise ConfigError("<file>", "top level must be an object")
    user = apply_overrides(user, overrides)
    if seed is not None:
        user["seed"] = seed
    raw = validate(_merge(DEFAULTS, user))
    return PipelineConfig(raw, path.resolve().parent)
