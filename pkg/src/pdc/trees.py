"""CART regression trees with variance-reduction splits.

Leaves keep the (possibly repeated) training indices that reached them, which
is what the quantile forest needs.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

FORMAT_VERSION = 1
MAX_FEATURES_MODES = ("all", "auto", "sqrt")
_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: str = "all"
    seed: int = 0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 (or None for unbounded)")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_features not in MAX_FEATURES_MODES:
            raise ValueError(f"max_features must be one of {MAX_FEATURES_MODES}")

    def n_candidates(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return max(1, math.ceil(math.sqrt(n_features)))
        return n_features


class RegressionTree:
    """Array-backed binary tree. Node 0 is the root; leaves have ``feature == -1``."""

    def __init__(self, feature, threshold, left, right, value, members, n_features):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.members = list(members)
        self.n_features = int(n_features)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf id for every row of ``X``. Ties ``x == threshold`` go left."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected rows with {self.n_features} features, got shape {X.shape}")
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active[rows] = self.feature[node[rows]] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def with_leaf_values(self, values: dict[int, float]) -> RegressionTree:
        value = self.value.copy()
        for leaf, v in values.items():
            value[leaf] = v
        return RegressionTree(
            self.feature, self.threshold, self.left, self.right, value, self.members, self.n_features
        )

    def __eq__(self, other):
        if not isinstance(other, RegressionTree):
            return NotImplemented
        return (
            self.n_features == other.n_features
            and all(
                np.array_equal(getattr(self, a), getattr(other, a), equal_nan=a == "threshold")
                for a in ("feature", "threshold", "left", "right", "value")
            )
            and len(self.members) == len(other.members)
            and all(
                (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
                for a, b in zip(self.members, other.members)
            )
        )

    def to_dict(self) -> dict:
        return {
            "format": "pdc-regression-tree",
            "version": FORMAT_VERSION,
            "n_features": self.n_features,
            "feature": self.feature.tolist(),
            "threshold": [None if np.isnan(t) else t for t in self.threshold.tolist()],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "members": [None if m is None else m.tolist() for m in self.members],
        }

    @classmethod
    def from_dict(cls, d: dict) -> RegressionTree:
        if d.get("format") != "pdc-regression-tree" or d.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported tree format/version")
        return cls(
            d["feature"],
            [np.nan if t is None else t for t in d["threshold"]],
            d["left"],
            d["right"],
            d["value"],
            [None if m is None else np.asarray(m, dtype=np.int64) for m in d["members"]],
            d["n_features"],
        )


def _best_split(X, y, idx, feats, min_leaf):
    """Best (feature, threshold) for the node holding ``idx``, or None.

    Maximises the between-children sum of squares, which is the same as
    minimising the children's summed squared error.
    """
    m = len(idx)
    if m < 2 * min_leaf:
        return None
    yn = y[idx]
    yc = yn - yn.mean()
    Xn = X[idx][:, feats].T  # one row per candidate feature
    order = np.argsort(Xn, axis=1, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=1)
    # only split positions leaving min_leaf samples on both sides
    lo_pos, hi_pos = min_leaf - 1, m - min_leaf
    cs = np.cumsum(yc[order], axis=1)[:, lo_pos:hi_pos]
    n_left = np.arange(min_leaf, m - min_leaf + 1)
    score = cs * cs * (m / (n_left * (m - n_left)))
    ok = xs[:, lo_pos:hi_pos] < xs[:, lo_pos + 1:hi_pos + 1]
    if not ok.any():
        return None
    score[~ok] = -np.inf
    best = score.max()
    tol = _TIE_RTOL * max(best, 0.0) + 1e-300
    # first hit in (feature, threshold) order; feats and rows are ascending
    flat = int(np.argmax(score.ravel() >= best - tol))
    col, pos = divmod(flat, score.shape[1])
    pos += lo_pos
    lo, hi = xs[col, pos], xs[col, pos + 1]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(feats[col]), float(thr)


def fit_tree(X, y, sample_indices=None, params: TreeParams | None = None) -> RegressionTree:
    """Grow a regression tree on rows ``sample_indices`` of ``(X, y)``.

    ``sample_indices`` may repeat rows (bootstrap); repeats count as separate
    samples everywhere, including leaf membership.
    """
    params = params or TreeParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per target")
    idx0 = np.arange(len(y)) if sample_indices is None else np.asarray(sample_indices, dtype=np.int64)
    if len(idx0) == 0:
        raise ValueError("cannot fit a tree on an empty sample set")
    if not np.isfinite(y[idx0]).all():
        raise ValueError("targets must be finite")

    n_features = X.shape[1]
    k = params.n_candidates(n_features)
    rng = np.random.default_rng(params.seed)
    max_depth = params.max_depth if params.max_depth is not None else np.iinfo(np.int64).max

    feature, threshold, left, right, value, members = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        members.append(None)
        return len(feature) - 1

    stack = [(new_node(idx0), idx0, 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        split = None
        if depth < max_depth and len(idx) >= params.min_samples_split and np.ptp(yn) > 0:
            if k < n_features:
                feats = np.sort(rng.choice(n_features, size=k, replace=False))
            else:
                feats = np.arange(n_features)
            split = _best_split(X, y, idx, feats, params.min_samples_leaf)
        if split is None:
            members[node] = np.sort(idx)
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is grown (and draws features) first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return RegressionTree(feature, threshold, left, right, value, members, n_features)


def tree_leaf_of(tree: RegressionTree, x) -> tuple[float, np.ndarray]:
    """(leaf mean, member indices) of the leaf ``x`` falls into."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    leaf = tree.apply(x)[0]
    return float(tree.value[leaf]), tree.members[leaf]


class DemandTreeRegressor(RegressorMixin, BaseEstimator):
    """Single CART regressor with the sklearn estimator interface."""

    def __init__(
        self,
        max_depth=None,
        min_samples_split=2,
        min_samples_leaf=1,
        max_features="all",
        random_state=0,
    ):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.random_state = random_state

    def _tree_params(self) -> TreeParams:
        return TreeParams(
            self.max_depth,
            self.min_samples_split,
            self.min_samples_leaf,
            self.max_features,
            int(self.random_state or 0),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        self.tree_ = fit_tree(X, y, params=self._tree_params())
        self.n_features_in_ = X.shape[1]
        return self

    def apply(self, X):
        check_is_fitted(self, "tree_")
        return self.tree_.apply(check_array(X, dtype=float))

    def predict(self, X):
        check_is_fitted(self, "tree_")
        return self.tree_.predict(check_array(X, dtype=float))


def params_to_dict(params: TreeParams) -> dict:
    return asdict(params)
