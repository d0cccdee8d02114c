"""Gradient-boosted regression trees for squared loss."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .trees import RegressionTree, TreeParams, fit_tree

FORMAT_VERSION = 1


@dataclass(frozen=True)
class BoostParams:
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    subsample: float = 1.0
    leaf_l2: float = 1.0
    base_seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if self.leaf_l2 < 0:
            raise ValueError("leaf_l2 must be >= 0")


@dataclass
class BoostModel:
    stages: list[tuple[RegressionTree, float]]
    params: BoostParams
    n_features: int
    train_mse: list[float]

    def to_dict(self) -> dict:
        return {
            "format": "pdc-boost",
            "version": FORMAT_VERSION,
            "params": asdict(self.params),
            "n_features": self.n_features,
            "train_mse": list(self.train_mse),
            "stages": [{"gamma": g, "tree": t.to_dict()} for t, g in self.stages],
        }

    @classmethod
    def from_dict(cls, d: dict) -> BoostModel:
        if d.get("format") != "pdc-boost" or d.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported boost format/version")
        stages = [(RegressionTree.from_dict(s["tree"]), float(s["gamma"])) for s in d["stages"]]
        return cls(stages, BoostParams(**d["params"]), d["n_features"], d["train_mse"])


def fit_boost(X, y, params: BoostParams | None = None) -> BoostModel:
    """Boost from a zero model.

    Each round fits a tree to the current residuals on a subsample, shrinks
    its leaves to ``sum(residual) / (count + leaf_l2)``, then line-searches the
    step on the whole training set.
    """
    params = params or BoostParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n == 0:
        raise ValueError("cannot boost on an empty sample set")
    m = math.ceil(params.subsample * n)
    if m < 1:
        raise ValueError("subsample leaves no rows")

    H = np.zeros(n)
    stages = []
    history = [float(np.mean(y**2))]
    for t in range(params.n_rounds):
        seed = params.base_seed + t
        r = y - H
        if m < n:
            idx = np.sort(np.random.default_rng(seed).choice(n, size=m, replace=False))
        else:
            idx = np.arange(n)
        tree = fit_tree(X, r, idx, TreeParams(max_depth=params.max_depth, seed=seed))
        tree = tree.with_leaf_values(
            {
                int(leaf): float(r[tree.members[leaf]].sum() / (len(tree.members[leaf]) + params.leaf_l2))
                for leaf in tree.leaves
            }
        )
        h = tree.predict(X)
        hh = float(h @ h)
        gamma = float(r @ h) / hh if hh > 0 else 1.0
        H = H + params.learning_rate * gamma * h
        stages.append((tree, gamma))
        history.append(float(np.mean((y - H) ** 2)))
    return BoostModel(stages, params, X.shape[1], history)


def boost_raw(model: BoostModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    out = np.zeros(len(X))
    for tree, gamma in model.stages:
        out += model.params.learning_rate * gamma * tree.predict(X)
    return out


def boost_predict(model: BoostModel, x):
    """Boosted prediction clamped at zero; one row gives a float."""
    out = np.maximum(boost_raw(model, x), 0.0)
    return float(out[0]) if np.ndim(x) == 1 else out


class GradientBoostedDemandRegressor(RegressorMixin, BaseEstimator):
    def __init__(
        self,
        n_estimators=100,
        learning_rate=0.1,
        max_depth=3,
        subsample=1.0,
        reg_lambda=1.0,
        random_state=0,
    ):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.subsample = subsample
        self.reg_lambda = reg_lambda
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        params = BoostParams(
            self.n_estimators,
            self.learning_rate,
            self.max_depth,
            self.subsample,
            self.reg_lambda,
            int(self.random_state or 0),
        )
        self.model_ = fit_boost(X, y, params)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return boost_predict(self.model_, check_array(X, dtype=float))
