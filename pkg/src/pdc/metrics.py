"""Forecast evaluation: point errors, CRPS over quantile forecasts, cluster medians."""
from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forest import DEFAULT_QUANTILES


@dataclass(frozen=True)
class PointMetrics:
    mae: float
    rmse: float
    rmsle: float
    resid_std: float

    def as_tuple(self):
        return (self.mae, self.rmse, self.rmsle, self.resid_std)


def point_metrics(actual, predicted) -> PointMetrics:
    """MAE, RMSE, RMSLE (natural log) and population std of the residuals."""
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1:
        raise ValueError(f"actual and predicted must be equal-length vectors ({a.shape} vs {p.shape})")
    if a.size == 0:
        raise ValueError("need at least one prediction")
    if (p <= -1).any() or (a <= -1).any():
        raise ValueError("RMSLE needs values greater than -1")
    if (p < 0).any():
        raise ValueError("predicted demand must be non-negative")
    resid = a - p
    return PointMetrics(
        mae=float(np.mean(np.abs(resid))),
        rmse=float(np.sqrt(np.mean(resid**2))),
        rmsle=float(np.sqrt(np.mean((np.log1p(p) - np.log1p(a)) ** 2))),
        resid_std=float(np.std(resid)),
    )


@dataclass(frozen=True)
class QuantileForecast:
    """Quantile predictions ``values[k]`` at levels ``levels[k]``.

    Values are sorted on construction so crossing quantiles from outside
    sources still describe a valid CDF.
    """

    levels: tuple[float, ...]
    values: tuple[float, ...]

    def __init__(self, levels, values):
        lv = np.asarray(levels, dtype=float)
        vv = np.asarray(values, dtype=float)
        if lv.ndim != 1 or lv.shape != vv.shape or lv.size == 0:
            raise ValueError("levels and values must be equal-length, non-empty vectors")
        if ((lv <= 0) | (lv >= 1)).any() or (np.diff(lv) <= 0).any():
            raise ValueError("levels must be strictly increasing inside (0, 1)")
        if not np.isfinite(vv).all():
            raise ValueError("quantile values must be finite")
        object.__setattr__(self, "levels", tuple(lv.tolist()))
        object.__setattr__(self, "values", tuple(np.sort(vv).tolist()))


@dataclass(frozen=True)
class PiecewiseCDF:
    """Linear interpolation through ``(knots, levels)`` with 0 below, 1 at/above the last knot."""

    knots: np.ndarray
    levels: np.ndarray

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        k, q = self.knots, self.levels
        out = np.interp(v, k, q)
        # np.interp returns the first level on ties; use the right-continuous value
        idx = np.searchsorted(k, v, side="right") - 1
        on_knot = (idx >= 0) & (k[np.clip(idx, 0, None)] == v)
        out = np.where(on_knot, q[np.clip(idx, 0, None)], out)
        out = np.where(v < k[0], 0.0, out)
        return np.where(v >= k[-1], 1.0, out)


def empirical_cdf(f: QuantileForecast) -> PiecewiseCDF:
    return PiecewiseCDF(np.array(f.values), np.array(f.levels))


def _segment_integral(a, b, fa, fb, c):
    """Integral over [a, b] of (F - c)^2 with F linear from fa to fb."""
    u, v = fa - c, fb - c
    return (b - a) * (u * u + u * v + v * v) / 3.0


def crps(f: QuantileForecast, y: float) -> float:
    """Exact CRPS of the piecewise-linear quantile CDF against observation ``y``."""
    Q = np.asarray(f.values)
    q = np.asarray(f.levels)
    y = float(y)
    lo, hi = Q[0], Q[-1]
    total = 0.0
    # F = 0 below the first knot, 1 from the last knot on
    if y < lo:
        total += lo - y
    if y > hi:
        total += y - hi
    for k in range(len(Q) - 1):
        a, b = Q[k], Q[k + 1]
        if b <= a:
            continue
        fa, fb = q[k], q[k + 1]
        if y <= a:
            total += _segment_integral(a, b, fa, fb, 1.0)
        elif y >= b:
            total += _segment_integral(a, b, fa, fb, 0.0)
        else:
            fy = fa + (y - a) / (b - a) * (fb - fa)
            total += _segment_integral(a, y, fa, fy, 0.0)
            total += _segment_integral(y, b, fy, fb, 1.0)
    return float(total)


def mcrps(forecasts: Sequence[QuantileForecast], actuals) -> float:
    actuals = np.asarray(actuals, dtype=float)
    if len(forecasts) != len(actuals):
        raise ValueError("forecasts and actuals must align")
    if not len(actuals):
        raise ValueError("need at least one forecast")
    return float(np.mean([crps(f, y) for f, y in zip(forecasts, actuals)]))


def mcrps_from_arrays(quantile_values, actuals, levels=DEFAULT_QUANTILES) -> float:
    """MCRPS for a ``(T, K)`` array of quantile predictions."""
    qv = np.asarray(quantile_values, dtype=float)
    return mcrps([QuantileForecast(levels, row) for row in qv], actuals)


@dataclass
class MetricReport:
    per_zone: dict[int, PointMetrics]
    mcrps: dict[int, float] = field(default_factory=dict)

    def summary(self) -> dict[str, tuple[float, float]]:
        """(mean across zones, population std across zones) for every metric."""
        out = {}
        names = ("mae", "rmse", "rmsle", "resid_std")
        rows = np.array([m.as_tuple() for m in self.per_zone.values()]).reshape(-1, 4)
        for j, name in enumerate(names):
            out[name] = (float(rows[:, j].mean()), float(rows[:, j].std()))
        if self.mcrps:
            vals = np.array(list(self.mcrps.values()))
            out["mcrps"] = (float(vals.mean()), float(vals.std()))
        return out

    def write_csv(self, path: str | Path) -> None:
        with_mcrps = bool(self.mcrps)
        header = ["zone", "mae", "rmse", "rmsle", "resid_std"] + (["mcrps"] if with_mcrps else [])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for z in sorted(self.per_zone):
                row = [z, *map(repr, self.per_zone[z].as_tuple())]
                if with_mcrps:
                    row.append(repr(self.mcrps.get(z, float("nan"))))
                w.writerow(row)
            s = self.summary()
            mean_row = ["mean"] + [repr(s[k][0]) for k in header[1:]]
            std_row = ["std"] + [repr(s[k][1]) for k in header[1:]]
            w.writerow(mean_row)
            w.writerow(std_row)


def metric_report(actual: Mapping[int, np.ndarray], predicted: Mapping[int, np.ndarray],
                  quantiles: Mapping[int, np.ndarray] | None = None,
                  levels=DEFAULT_QUANTILES) -> MetricReport:
    per_zone = {z: point_metrics(actual[z], predicted[z]) for z in sorted(actual)}
    scores = {}
    if quantiles:
        scores = {z: mcrps_from_arrays(quantiles[z], actual[z], levels) for z in sorted(quantiles)}
    return MetricReport(per_zone, scores)


def _check_partition(labels, n: int, what: str) -> np.ndarray:
    labels = np.asarray(getattr(labels, "labels", labels))
    if labels.shape != (n,):
        raise ValueError(f"{what} does not partition the {n} zones")
    return labels


def within_cluster_medians(demand, labels) -> np.ndarray:
    """For each zone, the median demand over the zones sharing its label."""
    demand = np.asarray(demand, dtype=float)
    labels = _check_partition(labels, len(demand), "labels")
    out = np.empty(len(demand))
    for lab in np.unique(labels):
        members = labels == lab
        out[members] = np.median(demand[members])
    return out


@dataclass
class ClusterMedianEval:
    actual_median: np.ndarray
    predicted_median: np.ndarray
    metrics: PointMetrics


def within_cluster_median_eval(actual_demand, actual_labels, predicted_demand, predicted_labels):
    """Compare zone-level cluster medians: actual-over-actual vs predicted-over-predicted."""
    actual_demand = np.asarray(actual_demand, dtype=float)
    predicted_demand = np.asarray(predicted_demand, dtype=float)
    if actual_demand.shape != predicted_demand.shape:
        raise ValueError("actual and predicted demand must cover the same zones")
    am = within_cluster_medians(actual_demand, actual_labels)
    pm = within_cluster_medians(predicted_demand, predicted_labels)
    return ClusterMedianEval(am, pm, point_metrics(am, pm))
