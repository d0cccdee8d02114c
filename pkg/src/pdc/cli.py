"""``pdc`` command line: file-driven predict-then-cluster pipeline."""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import (
    MyopicRegressor,
    SeasonalAverageRegressor,
    SeasonalQuantileRegressor,
)
from .boosting import BoostModel
from .clustering import (
    QUANTILE_LEVELS,
    CchcConstraints,
    ClusterInput,
    cchc_ice,
    ckmc,
    contiguity_check,
    threshold_clusters,
)
from .config import QUANTILE_FAMILIES, ConfigError, PipelineConfig, load_config
from .domain import SLOT_MINUTES, IntervalGrid, InvariantError, load_zones
from .forest import DEFAULT_QUANTILES, ForestModel
from .ingest import (
    aggregate_orders,
    assemble_features,
    generate_synthetic,
    generate_weather,
    read_holidays,
    read_orders,
    read_weather,
    write_holidays,
    write_orders,
    write_weather,
)
from .metrics import metric_report, within_cluster_medians
from .scenarios import random_level_shifts, seasonal_profile
from .simulator import RelocationPolicy, SimConfig, SlotDemandOracle, compare_policies
from .tuning import FAMILIES as TREE_FAMILIES
from .tuning import grid_search_cv

COMMANDS = ("generate", "train", "predict", "cluster", "evaluate", "simulate", "pipeline")
BUNDLED_SCENARIO = Path(__file__).parent / "data" / "five_zone"
PREDICTION_LEVELS = tuple(sorted(set(DEFAULT_QUANTILES) | set(QUANTILE_LEVELS)))


class MissingFileError(FileNotFoundError):
    pass


# -- small I/O helpers ---------------------------------------------------------


def _require(path: Path, hint: str = "") -> Path:
    if not path.is_file():
        raise MissingFileError(f"missing file {path}" + (f" ({hint})" if hint else ""))
    return path


def _write_json(cfg: PipelineConfig, path: Path, payload: dict) -> None:
    body = {"tool": "pdc", "version": __version__, "config_hash": cfg.hash, **payload}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(body, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _csv_writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w", encoding="utf-8", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _stamp(day: dt.date, minute: int) -> str:
    return f"{day.isoformat()}T{minute // 60:02d}:{minute % 60:02d}"


def _fmt(v: float) -> str:
    return repr(float(v))


# -- data loading ----------------------------------------------------------------


@dataclass
class Dataset:
    registry: object
    grid: IntervalGrid
    orders: list
    series: dict
    weather: list | None
    holidays: set
    test_start: dt.date


def _registry(cfg):
    return load_zones(_require(cfg.path("zones"), "zones.json"))


def _load_data(cfg: PipelineConfig, need_weather: bool) -> Dataset:
    registry = _registry(cfg)
    orders = read_orders(_require(cfg.path("orders"), "run generate or point paths.orders at data"))
    holidays = read_holidays(_require(cfg.path("holidays")))
    weather = read_weather(_require(cfg.path("weather"))) if need_weather else None
    data = cfg.section("data")
    if not orders and (data["first_day"] is None or data["last_day"] is None):
        raise ConfigError("data.first_day", "no orders to infer the date range from")
    first = dt.date.fromisoformat(data["first_day"]) if data["first_day"] else min(o.day for o in orders)
    last = dt.date.fromisoformat(data["last_day"]) if data["last_day"] else max(o.day for o in orders)
    days = [first + dt.timedelta(days=i) for i in range((last - first).days + 1)]
    open_m, close_m = data["business_hours"]
    grid = IntervalGrid(open_m, close_m, days)
    if data["test_start"]:
        test_start = dt.date.fromisoformat(data["test_start"])
    else:
        test_start = last - dt.timedelta(days=6)
    if not first < test_start <= last:
        raise ConfigError("data.test_start", f"must fall after {first} and on or before {last}")
    series, _ = aggregate_orders(orders, registry, grid)
    return Dataset(registry, grid, orders, series, weather, holidays, test_start)


def _features(cfg: PipelineConfig, ds: Dataset):
    model = cfg.section("model")
    tables = {}
    for z in sorted(ds.series):
        tables[z] = assemble_features(ds.series[z], ds.weather, ds.holidays,
                                      include_lags=model["lagged"], include_weather=model["weather"])
    return tables


def _split(table, test_start):
    test = np.array([iv.day >= test_start for iv in table.intervals], dtype=bool)
    return ~test, test


# -- models ------------------------------------------------------------------------


def _estimator(family: str, params: dict, seed: int, schema):
    if family in TREE_FAMILIES:
        est = TREE_FAMILIES[family](random_state=seed)
        valid = est.get_params()
        for key in params:
            if key not in valid or key == "random_state":
                raise ConfigError(f"model.params.{key}", f"not a {family} parameter")
        return est.set_params(**params)
    if params:
        raise ConfigError("model.params", f"{family} takes no parameters")
    if family == "myopic":
        return MyopicRegressor(lag_col=schema.index("lag_0"))
    cls = SeasonalQuantileRegressor if family == "seasonal_quantile" else SeasonalAverageRegressor
    return cls(hour_col=schema.index("hour"), dow_col=schema.index("dow"))


def _dump_model(family: str, est, X, y) -> dict:
    if family in TREE_FAMILIES:
        return est.model_.to_dict()
    if family == "myopic":
        return {"lag_col": est.lag_col, "n_features": int(X.shape[1])}
    return {
        "hour_col": est.hour_col,
        "dow_col": est.dow_col,
        "hours": X[:, est.hour_col].astype(int).tolist(),
        "dows": X[:, est.dow_col].astype(int).tolist(),
        "counts": [float(v) for v in y],
    }


def _load_model(family: str, payload: dict):
    if family in ("rf", "qrf"):
        est = TREE_FAMILIES[family]()
        est.model_ = ForestModel.from_dict(payload)
        est.n_features_in_ = est.model_.n_features
        return est
    if family == "boost":
        est = TREE_FAMILIES[family]()
        est.model_ = BoostModel.from_dict(payload)
        est.n_features_in_ = est.model_.n_features
        return est
    if family == "myopic":
        return MyopicRegressor(payload["lag_col"]).fit(np.zeros((1, payload["n_features"])))
    cls = SeasonalQuantileRegressor if family == "seasonal_quantile" else SeasonalAverageRegressor
    h, d = payload["hour_col"], payload["dow_col"]
    X = np.zeros((len(payload["counts"]), max(h, d) + 1))
    X[:, h] = payload["hours"]
    X[:, d] = payload["dows"]
    return cls(hour_col=h, dow_col=d).fit(X, np.asarray(payload["counts"], dtype=float))


# -- commands ----------------------------------------------------------------------


def cmd_generate(cfg: PipelineConfig) -> None:
    """Synthetic orders, weather and holidays from the ``synthetic`` section."""
    registry = _registry(cfg)
    syn = cfg.section("synthetic")
    first = dt.date.fromisoformat(syn["first_day"])
    days = [first + dt.timedelta(days=i) for i in range(syn["days"])]
    open_m, close_m = cfg.section("data")["business_hours"]
    grid = IntervalGrid(open_m, close_m, days)
    rng = np.random.default_rng(cfg.seed)
    levels = rng.uniform(*syn["level_range"], size=registry.n_zones)
    events = random_level_shifts(registry.n_zones, len(grid), syn["n_events"], rng)
    orders = generate_synthetic(registry, grid, seasonal_profile(registry, levels, events), cfg.seed)
    for name in ("orders", "weather", "holidays"):
        cfg.path(name).parent.mkdir(parents=True, exist_ok=True)
    write_orders(orders, cfg.path("orders"))
    write_weather(generate_weather(days, cfg.seed), cfg.path("weather"))
    write_holidays([dt.date.fromisoformat(d) for d in syn["holidays"]], cfg.path("holidays"))
    _write_json(cfg, cfg.output_dir / "synthetic.json", {
        "n_orders": len(orders),
        "levels": [float(v) for v in levels],
        "events": [asdict(e) for e in events],
    })


def cmd_train(cfg: PipelineConfig) -> None:
    """Tune (chronological CV) and fit one model per pick-up zone on the training days."""
    model = cfg.section("model")
    ds = _load_data(cfg, model["weather"])
    tables = _features(cfg, ds)
    zones = {}
    for z, table in tables.items():
        train, _ = _split(table, ds.test_start)
        X, y = table.X[train], table.y[train]
        if not len(y):
            raise ConfigError("data.test_start", f"zone {z} has no training rows before {ds.test_start}")
        base = _estimator(model["family"], model["params"], cfg.seed, table.schema)
        grid = model["grid"] or {}
        result = grid_search_cv(X, y, base, grid, k=model["cv_k"], seed=cfg.seed)
        result.write_csv(_ensure_dir(cfg.output_dir / "tuning") / f"zone_{z}.csv")
        est = _estimator(model["family"], {**model["params"], **result.best_params}, cfg.seed, table.schema)
        est.fit(X, y)
        zones[str(z)] = {
            "params": result.best_params,
            "cv_mse": result.best_score,
            "n_train": int(len(y)),
            "model": _dump_model(model["family"], est, X, y),
        }
    _write_json(cfg, cfg.output_dir / "model.json", {
        "family": model["family"],
        "lagged": model["lagged"],
        "weather": model["weather"],
        "schema": list(next(iter(tables.values())).schema) if tables else [],
        "test_start": ds.test_start.isoformat(),
        "zones": zones,
    })


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_predict(cfg: PipelineConfig) -> None:
    """Forecast every test interval; lags come from observed counts (no refitting)."""
    with open(_require(cfg.output_dir / "model.json", "run train first"), encoding="utf-8") as fh:
        saved = json.load(fh)
    model = cfg.section("model")
    family = saved["family"]
    if family != model["family"] or saved["lagged"] != model["lagged"] or saved["weather"] != model["weather"]:
        raise ConfigError("model", "model.json was trained with a different model section; run train again")
    ds = _load_data(cfg, model["weather"])
    tables = _features(cfg, ds)
    quantile = family in QUANTILE_FAMILIES
    rows = []
    for z, table in tables.items():
        if str(z) not in saved["zones"]:
            raise ConfigError("paths.zones", f"zone {z} has no trained model")
        est = _load_model(family, saved["zones"][str(z)]["model"])
        _, test = _split(table, ds.test_start)
        sub = table.subset(test)
        if not len(sub):
            continue
        point = est.predict(sub.X)
        qs = est.predict_quantiles(sub.X, PREDICTION_LEVELS) if quantile else None
        for i, iv in enumerate(sub.intervals):
            minute = ds.grid.start_minute(iv)
            row = [_stamp(iv.day, minute), z, _fmt(sub.y[i]), _fmt(point[i])]
            if quantile:
                row += [_fmt(v) for v in qs[i]]
            rows.append((iv.day, minute, z, row))
    rows.sort(key=lambda r: r[:3])
    header = ["interval", "zone", "actual", "prediction"]
    if quantile:
        header += [f"q{q:g}" for q in PREDICTION_LEVELS]
    fh, w = _csv_writer(cfg.output_dir / "predictions.csv")
    with fh:
        w.writerow(header)
        for r in rows:
            w.writerow(r[3])


@dataclass
class Predictions:
    intervals: list[str]
    zones: list[int]
    actual: np.ndarray  # (T, Z)
    point: np.ndarray  # (T, Z)
    quantiles: np.ndarray | None  # (T, Z, L)
    levels: tuple[float, ...]

    def level_slice(self, levels) -> np.ndarray:
        idx = [self.levels.index(q) for q in levels]
        return self.quantiles[:, :, idx]


def read_predictions(path: Path) -> Predictions:
    with open(_require(path, "run predict first"), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        records = list(reader)
    qcols = [h for h in header[4:]]
    levels = tuple(float(h[1:]) for h in qcols)
    intervals = sorted({r[0] for r in records})
    zones = sorted({int(r[1]) for r in records})
    ti = {s: i for i, s in enumerate(intervals)}
    zi = {z: j for j, z in enumerate(zones)}
    shape = (len(intervals), len(zones))
    actual = np.full(shape, np.nan)
    point = np.full(shape, np.nan)
    quant = np.full(shape + (len(levels),), np.nan) if levels else None
    for r in records:
        i, j = ti[r[0]], zi[int(r[1])]
        actual[i, j] = float(r[2])
        point[i, j] = float(r[3])
        if levels:
            quant[i, j] = [float(v) for v in r[4:]]
    if np.isnan(point).any():
        raise ValueError(f"{path}: every zone needs a prediction for every interval")
    return Predictions(intervals, zones, actual, point, quant, levels)


def _cluster(cfg: PipelineConfig, registry, zones, demand, quantiles=None):
    """Cluster one interval; ``demand`` is per-zone point demand, ``quantiles`` (Z, 3) optional."""
    cl = cfg.section("clustering")
    zones = np.asarray(zones)
    use_q = cl["demand_input"] == "quantiles" and quantiles is not None
    if cl["method"] == "threshold":
        return threshold_clusters(demand)
    if cl["method"] == "ckmc":
        cents = registry.centroids[zones]
        data = ClusterInput.from_quantiles(quantiles, cents) if use_q else ClusterInput.from_point(demand, cents)
        return ckmc(data, tuple(cl["k_range"]), cl["min_cluster_size"], cfg.seed)
    adj = registry.adjacency[np.ix_(zones, zones)]
    d_max = float("inf") if cl["D_max"] == "inf" else float(cl["D_max"])
    feats = quantiles if use_q else np.asarray(demand, dtype=float)[:, None]
    result = cchc_ice(feats, adj, CchcConstraints(cl["K_min"], cl["s_max"], d_max))
    bad = contiguity_check(result.labels, adj)
    if bad:
        raise InvariantError("clustering", "contiguity", f"clusters {bad} are not connected")
    sizes = np.bincount(result.labels)
    if sizes.max() > cl["s_max"]:
        raise InvariantError("clustering", "s_max", f"cluster of size {sizes.max()}")
    return result


def _interval_clusters(cfg, registry, pred: Predictions, source: str):
    """Labels and within-cluster medians per interval, clustering ``source`` demand."""
    labels, medians = [], []
    for t in range(len(pred.intervals)):
        demand = pred.point[t] if source == "predicted" else pred.actual[t]
        q = None
        if source == "predicted" and pred.quantiles is not None:
            q = pred.level_slice(QUANTILE_LEVELS)[t]
        cs = _cluster(cfg, registry, pred.zones, demand, q)
        labels.append(cs.labels)
        medians.append(within_cluster_medians(demand, cs.labels))
    return np.array(labels), np.array(medians)


def cmd_cluster(cfg: PipelineConfig) -> None:
    """Cluster pick-up zones on predicted demand for every test interval."""
    registry = _registry(cfg)
    pred = read_predictions(cfg.output_dir / "predictions.csv")
    labels, medians = _interval_clusters(cfg, registry, pred, "predicted")
    fh, w = _csv_writer(cfg.output_dir / "clusters.csv")
    with fh:
        w.writerow(["interval", "zone", "cluster_id", "within_cluster_median"])
        for t, stamp in enumerate(pred.intervals):
            for j, z in enumerate(pred.zones):
                w.writerow([stamp, z, int(labels[t, j]), _fmt(medians[t, j])])
    cents = registry.centroids
    _write_json(cfg, cfg.output_dir / "heatmap.json", {
        "method": cfg.section("clustering")["method"],
        "demand_input": cfg.section("clustering")["demand_input"],
        "intervals": [
            {
                "interval": stamp,
                "zones": [
                    {"zone": int(z), "lat": float(cents[z, 0]), "lng": float(cents[z, 1]),
                     "cluster_id": int(labels[t, j]), "median_value": float(medians[t, j])}
                    for j, z in enumerate(pred.zones)
                ],
            }
            for t, stamp in enumerate(pred.intervals)
        ],
    })


def cmd_evaluate(cfg: PipelineConfig) -> None:
    """Point metrics, MCRPS and the within-cluster-median comparison."""
    registry = _registry(cfg)
    pred = read_predictions(cfg.output_dir / "predictions.csv")
    actual = {z: pred.actual[:, j] for j, z in enumerate(pred.zones)}
    point = {z: pred.point[:, j] for j, z in enumerate(pred.zones)}
    quant = None
    if pred.quantiles is not None:
        q9 = pred.level_slice(DEFAULT_QUANTILES)
        quant = {z: q9[:, j, :] for j, z in enumerate(pred.zones)}
    report = metric_report(actual, point, quant)
    report.write_csv(cfg.output_dir / "metrics.csv")

    _, med_actual = _interval_clusters(cfg, registry, pred, "actual")
    _, med_pred = _interval_clusters(cfg, registry, pred, "predicted")
    cluster_report = metric_report(
        {z: med_actual[:, j] for j, z in enumerate(pred.zones)},
        {z: med_pred[:, j] for j, z in enumerate(pred.zones)},
    )
    cluster_report.write_csv(cfg.output_dir / "cluster_eval.csv")
    _write_json(cfg, cfg.output_dir / "evaluation.json", {
        "n_intervals": len(pred.intervals),
        "zones": pred.zones,
        "point": {k: list(v) for k, v in report.summary().items()},
        "within_cluster_median": {k: list(v) for k, v in cluster_report.summary().items()},
    })


def cmd_simulate(cfg: PipelineConfig) -> None:
    """Compare relocation policies on one day and write the KPIs."""
    registry = _registry(cfg)
    sim = cfg.section("simulation")
    data = cfg.section("data")
    orders = read_orders(_require(cfg.path("orders")))
    if sim["day"]:
        day = dt.date.fromisoformat(sim["day"])
    elif data["test_start"]:
        day = dt.date.fromisoformat(data["test_start"])
    elif orders:
        day = max(o.day for o in orders) - dt.timedelta(days=6)
    else:
        raise ConfigError("simulation.day", "no orders to pick a day from")
    day_orders = [o for o in orders if o.day == day]
    open_m, close_m = data["business_hours"]
    config = SimConfig(sim["fleet_size"], 1, sim["service_minutes"], sim["idle_threshold"],
                       sim["minutes_per_hop"], open_m, close_m, cfg.seed)
    policies = {
        "none": RelocationPolicy(),
        "nearest_pickup": RelocationPolicy("nearest_pickup"),
        "forward_looking_actual": RelocationPolicy(
            "forward_looking", SlotDemandOracle.from_orders(day_orders, registry, open_m, close_m)
        ),
    }
    pred_path = cfg.output_dir / "predictions.csv"
    if sim["oracle"] == "predicted" or pred_path.is_file():
        policies["forward_looking_predicted"] = RelocationPolicy(
            "forward_looking", _predicted_oracle(pred_path, registry, day, open_m, close_m)
        )
    primary = sim["policy"]
    if primary == "forward_looking":
        primary = f"forward_looking_{sim['oracle']}"
    result = compare_policies(day_orders, registry, config, policies, sim["repetitions"], cfg.seed)
    for name, runs in result.runs.items():
        for r, run in enumerate(runs):
            if run.n_delivered + run.n_rejected != run.n_arrived:
                raise InvariantError("simulator", "conservation", f"policy {name}, repetition {r}")
    result.write_csv(cfg.output_dir / "sim_kpis.csv")
    first = result.runs[primary][0]
    payload = first.to_dict(config, primary)
    payload["day"] = day.isoformat()
    payload["repetitions"] = sim["repetitions"]
    payload["comparison"] = {
        name: {
            "mean_delivery_min": result.mean_delivery_min[name],
            "rejection_rate": result.rejection_rate[name],
            "relocations": result.relocations[name],
            "reduction_vs_none_pct": result.reduction_vs_none_pct[name],
        }
        for name in policies
    }
    _write_json(cfg, cfg.output_dir / "sim_result.json", payload)


def _predicted_oracle(path: Path, registry, day: dt.date, open_m: int, close_m: int) -> SlotDemandOracle:
    pred = read_predictions(path)
    n_slots = (close_m - open_m) // SLOT_MINUTES
    table = np.zeros((n_slots, registry.n_zones))
    found = False
    for t, stamp in enumerate(pred.intervals):
        d, hm = stamp.split("T")
        if dt.date.fromisoformat(d) != day:
            continue
        minute = int(hm[:2]) * 60 + int(hm[3:])
        k = (minute - open_m) // SLOT_MINUTES
        if 0 <= k < n_slots:
            table[k, pred.zones] = pred.point[t]
            found = True
    if not found:
        raise ConfigError("simulation.day",
                          f"no predictions for {day}; pick a test day or set simulation.oracle=actual")
    return SlotDemandOracle(table, open_m)


def cmd_pipeline(cfg: PipelineConfig) -> None:
    for step in (cmd_generate, cmd_train, cmd_predict, cmd_cluster, cmd_evaluate, cmd_simulate):
        step(cfg)


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "cluster": cmd_cluster,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdc", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. clustering.K_min=2 (repeatable)")
    parser.add_argument("--version", action="version", version=f"pdc {__version__}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"pdc: config error: {exc}", file=sys.stderr)
        return 2
    except (MissingFileError, FileNotFoundError) as exc:
        print(f"pdc: {exc}", file=sys.stderr)
        return 3
    except InvariantError as exc:
        print(f"pdc: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"pdc: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
