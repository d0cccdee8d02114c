"""Random forest and quantile regression forest built on :mod:`pdc.trees`.

Both modes share one fitted model: every leaf keeps its bootstrap members, so
point predictions are weighted sums of training targets and quantiles come from
the same weights.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy import sparse
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .trees import RegressionTree, TreeParams, fit_tree

FORMAT_VERSION = 1
DEFAULT_QUANTILES = tuple(round(0.1 * k, 1) for k in range(1, 10))
# cumulative-weight comparisons absorb float summation error
_CDF_EPS = 1e-12


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    tree: TreeParams = field(default_factory=TreeParams)
    bootstrap: bool = True
    base_seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")


def _fit_one(X, y, params: ForestParams, b: int):
    seed = params.base_seed + b
    n = len(y)
    if params.bootstrap:
        idx = np.random.default_rng(seed).integers(0, n, size=n)
    else:
        idx = np.arange(n)
    return fit_tree(X, y, idx, replace(params.tree, seed=seed))


class ForestModel:
    def __init__(self, trees: list[RegressionTree], y, params: ForestParams, mode: str = "qrf"):
        if mode not in ("rf", "qrf"):
            raise ValueError("mode must be 'rf' or 'qrf'")
        self.trees = list(trees)
        self.y = np.asarray(y, dtype=float)
        self.params = params
        self.mode = mode
        self._leaf_weights = None
        self._sorted = None

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def leaf_weights(self):
        """Per tree: {leaf: (unique member ids, multiplicity / leaf size)}."""
        if self._leaf_weights is None:
            out = []
            for tree in self.trees:
                per_leaf = {}
                for leaf in tree.leaves:
                    ids, cnt = np.unique(tree.members[leaf], return_counts=True)
                    per_leaf[int(leaf)] = (ids, cnt / cnt.sum())
                out.append(per_leaf)
            self._leaf_weights = out
        return self._leaf_weights

    def weights(self, X) -> np.ndarray:
        """Dense ``(n_query, n_train)`` matrix of forest weights."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        W = np.zeros((len(X), len(self.y)))
        B = len(self.trees)
        for tree, per_leaf in zip(self.trees, self.leaf_weights()):
            leaves = tree.apply(X)
            for leaf in np.unique(leaves):
                rows = np.flatnonzero(leaves == leaf)
                ids, w = per_leaf[int(leaf)]
                W[np.ix_(rows, ids)] += w / B
        return W

    def mean_of_trees(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def _support(self):
        if self._sorted is None:
            values, inverse = np.unique(self.y, return_inverse=True)
            onehot = sparse.csr_matrix(
                (np.ones(len(self.y)), (np.arange(len(self.y)), inverse)),
                shape=(len(self.y), len(values)),
            )
            self._sorted = (values, onehot)
        return self._sorted

    def to_dict(self) -> dict:
        p = self.params
        return {
            "format": "pdc-forest",
            "version": FORMAT_VERSION,
            "mode": self.mode,
            "params": {
                "n_estimators": p.n_estimators,
                "bootstrap": p.bootstrap,
                "base_seed": p.base_seed,
                "tree": asdict(p.tree),
            },
            "y": self.y.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ForestModel:
        if d.get("format") != "pdc-forest" or d.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported forest format/version")
        p = d["params"]
        params = ForestParams(p["n_estimators"], TreeParams(**p["tree"]), p["bootstrap"], p["base_seed"])
        return cls([RegressionTree.from_dict(t) for t in d["trees"]], d["y"], params, d["mode"])


def fit_forest(X, y, params: ForestParams | None = None, mode: str = "qrf", n_jobs=None) -> ForestModel:
    """Fit ``n_estimators`` trees; tree ``b`` uses seed ``base_seed + b``.

    ``n_jobs`` fans tree fitting out with joblib; results are identical to a
    sequential fit.
    """
    params = params or ForestParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("cannot fit a forest on an empty sample set")
    if n_jobs in (None, 1):
        trees = [_fit_one(X, y, params, b) for b in range(params.n_estimators)]
    else:
        trees = Parallel(n_jobs=n_jobs)(
            delayed(_fit_one)(X, y, params, b) for b in range(params.n_estimators)
        )
    return ForestModel(trees, y, params, mode)


def _check_query(model: ForestModel, x) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    return X


def forest_weights(model: ForestModel, x) -> np.ndarray:
    """Weight of each training sample for query ``x`` (a single row)."""
    return model.weights(_check_query(model, x))[0]


def forest_point(model: ForestModel, x) -> np.ndarray | float:
    """Weighted mean of training targets, clamped at zero.

    Accepts one row (returns a float) or a 2-D batch.
    """
    X = _check_query(model, x)
    out = np.maximum(model.weights(X) @ model.y, 0.0)
    return float(out[0]) if np.ndim(x) == 1 else out


def forest_cdf(model: ForestModel, x, values) -> np.ndarray:
    """F(v | x) = sum of weights of training targets <= v, for each v."""
    X = _check_query(model, x)
    W = model.weights(X)
    values = np.atleast_1d(np.asarray(values, dtype=float))
    le = model.y[:, None] <= values[None, :]
    out = W @ le
    return out[0] if np.ndim(x) == 1 else out


def _quantiles_from_weights(model: ForestModel, W: np.ndarray, qs: np.ndarray) -> np.ndarray:
    support, onehot = model._support()
    cdf = np.cumsum(np.asarray((onehot.T @ W.T).T), axis=1)
    out = np.empty((len(W), len(qs)))
    for j, q in enumerate(qs):
        hit = cdf >= q - _CDF_EPS
        pos = np.where(hit.any(axis=1), hit.argmax(axis=1), len(support) - 1)
        out[:, j] = support[pos]
    return out


def _check_levels(q) -> np.ndarray:
    qs = np.atleast_1d(np.asarray(q, dtype=float))
    if ((qs <= 0) | (qs >= 1)).any():
        raise ValueError("quantile levels must lie strictly between 0 and 1")
    return qs


def forest_quantile(model: ForestModel, x, q):
    """Smallest training target whose cumulative weight reaches ``q``.

    ``q`` may be a scalar or a sequence of levels; ``x`` one row or a batch.
    """
    qs = _check_levels(q)
    X = _check_query(model, x)
    out = _quantiles_from_weights(model, model.weights(X), qs)
    if np.ndim(x) == 1:
        out = out[0]
        return float(out[0]) if np.ndim(q) == 0 else out
    return out[:, 0] if np.ndim(q) == 0 else out


class RandomForestDemandRegressor(RegressorMixin, BaseEstimator):
    """Bagged CART forest; ``predict`` is the weighted mean of training targets."""

    _mode = "rf"

    def __init__(
        self,
        n_estimators=100,
        max_depth=None,
        min_samples_split=2,
        min_samples_leaf=1,
        max_features="all",
        bootstrap=True,
        random_state=0,
        n_jobs=None,
    ):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _forest_params(self) -> ForestParams:
        tree = TreeParams(self.max_depth, self.min_samples_split, self.min_samples_leaf, self.max_features)
        return ForestParams(self.n_estimators, tree, self.bootstrap, int(self.random_state or 0))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        self.model_ = fit_forest(X, y, self._forest_params(), mode=self._mode, n_jobs=self.n_jobs)
        self.n_features_in_ = X.shape[1]
        return self

    def _validated(self, X):
        check_is_fitted(self, "model_")
        return _check_query(self.model_, check_array(X, dtype=float))

    def predict(self, X):
        X = self._validated(X)
        return np.maximum(self.model_.weights(X) @ self.model_.y, 0.0)


class QuantileForestDemandRegressor(RandomForestDemandRegressor):
    """Quantile regression forest. ``predict`` returns the conditional median."""

    _mode = "qrf"

    def predict(self, X):
        return self.predict_quantiles(X, [0.5])[:, 0]

    def predict_quantiles(self, X, quantiles=DEFAULT_QUANTILES) -> np.ndarray:
        qs = _check_levels(quantiles)
        X = self._validated(X)
        return _quantiles_from_weights(self.model_, self.model_.weights(X), qs)

    def predict_cdf(self, X, values) -> np.ndarray:
        return forest_cdf(self.model_, self._validated(X), values)
