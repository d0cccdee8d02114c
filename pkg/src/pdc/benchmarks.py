"""Naive and seasonal baselines."""
from __future__ import annotations

from collections import defaultdict

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .forest import DEFAULT_QUANTILES


def myopic_predict(history) -> float:
    """Last observed count, or 0 for an empty history."""
    history = np.asarray(history)
    return float(history[-1]) if history.size else 0.0


def lower_quantile(values, q: float) -> float:
    """inf{y : empirical CDF(y) >= q} over the multiset ``values``."""
    if not 0 < q < 1:
        raise ValueError("quantile level must lie strictly between 0 and 1")
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty sample")
    # smallest k with (k+1)/n >= q
    k = int(np.ceil(q * v.size - 1e-9)) - 1
    return float(v[min(max(k, 0), v.size - 1)])


class SeasonalIndex:
    """Historical counts bucketed by (hour, day of week), plus a global pool."""

    def __init__(self, hours, dows, counts):
        hours = np.asarray(hours, dtype=int)
        dows = np.asarray(dows, dtype=int)
        counts = np.asarray(counts, dtype=float)
        if not len(hours) == len(dows) == len(counts):
            raise ValueError("hours, dows and counts must align")
        buckets = defaultdict(list)
        for h, d, c in zip(hours, dows, counts):
            buckets[(int(h), int(d))].append(float(c))
        self.buckets = {k: np.array(v) for k, v in buckets.items()}
        self.pool = counts.copy()

    def __len__(self):
        return len(self.pool)

    def sample(self, hour: int, dow: int) -> np.ndarray:
        if not len(self.pool):
            raise ValueError("seasonal index is empty")
        b = self.buckets.get((int(hour), int(dow)))
        return b if b is not None and b.size else self.pool


def seasonal_average(index: SeasonalIndex, hour: int, dow: int) -> float:
    return float(index.sample(hour, dow).mean())


def seasonal_quantile(index: SeasonalIndex, hour: int, dow: int, q: float) -> float:
    return lower_quantile(index.sample(hour, dow), q)


class MyopicRegressor(RegressorMixin, BaseEstimator):
    """Predict the most recent count, read from the ``lag_col`` column."""

    def __init__(self, lag_col=-4):
        self.lag_col = lag_col

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "n_features_in_")
        return check_array(X, dtype=float)[:, self.lag_col].copy()


class SeasonalAverageRegressor(RegressorMixin, BaseEstimator):
    def __init__(self, hour_col=0, dow_col=1):
        self.hour_col = hour_col
        self.dow_col = dow_col

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        self.index_ = SeasonalIndex(X[:, self.hour_col], X[:, self.dow_col], y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "index_")
        X = check_array(X, dtype=float)
        return np.array(
            [seasonal_average(self.index_, h, d) for h, d in X[:, [self.hour_col, self.dow_col]]]
        )


class SeasonalQuantileRegressor(SeasonalAverageRegressor):
    """Empirical quantiles of the matching (hour, dow) bucket; ``predict`` is the median."""

    def predict(self, X):
        return self.predict_quantiles(X, [0.5])[:, 0]

    def predict_quantiles(self, X, quantiles=DEFAULT_QUANTILES) -> np.ndarray:
        check_is_fitted(self, "index_")
        X = check_array(X, dtype=float)
        return np.array(
            [
                [seasonal_quantile(self.index_, h, d, q) for q in quantiles]
                for h, d in X[:, [self.hour_col, self.dow_col]]
            ]
        ).reshape(len(X), len(quantiles))
