"""Dynamic zone clustering on predicted demand.

Two algorithms:

* constrained k-means (CKMC): location plus demand features, a minimum cluster
  size, and the number of clusters picked by mean silhouette;
* contiguity-constrained agglomerative clustering with iterative constraint
  enforcement (CCHC-ICE): average-linkage merges restricted to adjacent
  cluster pairs that respect a maximum size, a distance cap and a minimum
  cluster count.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

POINT_DEMAND_WEIGHT = 3.0
QUANTILE_LEVELS = (0.25, 0.5, 0.75)
_TIE_RTOL = 1e-12


class StopReason(str, Enum):
    K_MIN_REACHED = "k_min_reached"
    DISTANCE_THRESHOLD = "distance_threshold"
    NO_FEASIBLE_PAIR = "no_feasible_pair"
    CONVERGED = "converged"
    VIOLATION_DETECTED = "violation_detected"


@dataclass(frozen=True)
class Merge:
    left: tuple[int, ...]
    right: tuple[int, ...]
    distance: float


@dataclass
class ClusterSet:
    labels: np.ndarray
    stop_reason: StopReason | None = None
    history: list[Merge] = field(default_factory=list)
    silhouettes: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def k(self) -> int:
        return len(np.unique(self.labels))

    @property
    def clusters(self) -> list[list[int]]:
        return [np.flatnonzero(self.labels == lab).tolist() for lab in np.unique(self.labels)]


@dataclass
class ClusterInput:
    """Per-zone features and the per-column weights of the distance."""

    X: np.ndarray
    weights: np.ndarray
    normalize: bool = True

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.X.shape[1],):
            raise ValueError("one weight per feature column is required")
        if (self.weights <= 0).any():
            raise ValueError("feature weights must be positive")
        if not np.isfinite(self.X).all():
            raise ValueError("cluster features must be finite")

    @classmethod
    def from_point(cls, demand, centroids=None, normalize=True) -> ClusterInput:
        """Point forecasts; with locations the demand column weighs 3."""
        demand = np.asarray(demand, dtype=float).reshape(-1, 1)
        if centroids is None:
            return cls(demand, np.ones(1), normalize)
        X = np.hstack([np.asarray(centroids, dtype=float), demand])
        return cls(X, np.array([1.0, 1.0, POINT_DEMAND_WEIGHT]), normalize)

    @classmethod
    def from_quantiles(cls, quantiles, centroids=None, normalize=True) -> ClusterInput:
        """Quantile forecasts (one column per level); all weights equal."""
        q = np.asarray(quantiles, dtype=float)
        X = q if centroids is None else np.hstack([np.asarray(centroids, dtype=float), q])
        return cls(X, np.ones(X.shape[1]), normalize)

    def prepared(self) -> np.ndarray:
        return normalize_features(self.X) if self.normalize else self.X


def weighted_distance(x_i, x_j, w) -> float:
    x_i, x_j, w = (np.asarray(a, dtype=float) for a in (x_i, x_j, w))
    if not x_i.shape == x_j.shape == w.shape:
        raise ValueError("feature vectors and weights must have equal length")
    return float(np.sqrt(np.sum(w * (x_i - x_j) ** 2)))


def pairwise_distances(X, w) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.einsum("ijk,k->ij", diff * diff, np.asarray(w, dtype=float)))


def normalize_features(X) -> np.ndarray:
    """Min-max scale each column to [0, 1]; constant columns become 0."""
    X = np.asarray(X, dtype=float)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    out = np.zeros_like(X)
    ok = span > 0
    out[:, ok] = (X[:, ok] - lo[ok]) / span[ok]
    return out


def _silhouette_from_distances(D, labels) -> float:
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least two clusters")
    masks = [labels == u for u in uniq]
    s = np.zeros(len(labels))
    for i in range(len(labels)):
        own = labels[i]
        a = b = None
        for u, m in zip(uniq, masks):
            if u == own:
                size = m.sum()
                if size == 1:
                    break
                a = D[i, m].sum() / (size - 1)
            else:
                mean = D[i, m].mean()
                b = mean if b is None else min(b, mean)
        else:
            denom = max(a, b)
            s[i] = (b - a) / denom if denom > 0 else 0.0
    return float(s.mean())


def silhouette_mean(X, w, labels) -> float:
    """Mean silhouette under the weighted distance; singletons score 0."""
    return _silhouette_from_distances(pairwise_distances(X, w), labels)


def canonical_labels(labels) -> np.ndarray:
    """Relabel so clusters are numbered by their smallest zone index."""
    labels = np.asarray(labels)
    mapping = {}
    for lab in labels:
        if lab not in mapping:
            mapping[lab] = len(mapping)
    return np.array([mapping[lab] for lab in labels], dtype=np.int64)


# -- constrained k-means ------------------------------------------------------


def _init_centers(Z, k, rng):
    n = len(Z)
    centers = [int(rng.integers(n))]
    d2 = np.sum((Z - Z[centers[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        d2 = np.minimum(d2, np.sum((Z - Z[nxt]) ** 2, axis=1))
    return Z[centers].copy()


def _assign(Z, centers):
    d2 = np.sum((Z[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _update_centers(Z, labels, centers):
    out = centers.copy()
    for c in range(len(centers)):
        m = labels == c
        if m.any():
            out[c] = Z[m].mean(axis=0)
    return out


def _lloyd(Z, k, rng, max_iter):
    centers = _init_centers(Z, k, rng)
    labels = _assign(Z, centers)
    for _ in range(max_iter):
        centers = _update_centers(Z, labels, centers)
        new = _assign(Z, centers)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, centers


def _repair_min_size(Z, labels, centers, min_size):
    """Move nearest zones from clusters above the minimum into deficient clusters."""
    labels = labels.copy()
    k = len(centers)
    for _ in range(k * min_size + 1):
        sizes = np.bincount(labels, minlength=k)
        deficient = np.flatnonzero(sizes < min_size)
        if not len(deficient):
            return labels
        c = int(deficient[np.argmin(sizes[deficient])])
        donors = np.flatnonzero(sizes[labels] > min_size)
        if not len(donors):
            raise RuntimeError("minimum cluster size cannot be met")
        dist = np.sum((Z[donors] - centers[c]) ** 2, axis=1)
        z = int(donors[np.argmin(dist)])
        src = labels[z]
        labels[z] = c
        centers = centers.copy()
        for cl in (c, src):
            m = labels == cl
            if m.any():
                centers[cl] = Z[m].mean(axis=0)
    raise RuntimeError("minimum-size repair did not converge")


def ckmc(
    data: ClusterInput,
    k_range: tuple[int, int] = (3, 6),
    min_cluster_size: int = 1,
    seed: int = 0,
    max_iter: int = 100,
) -> ClusterSet:
    """Constrained k-means with silhouette-selected k.

    Every feasible k (``n_zones >= k * min_cluster_size``) gets a seeded
    k-means++ start, Lloyd iterations and a greedy minimum-size repair. The k
    with the highest mean silhouette wins; ties go to the smaller k.
    """
    k_lo, k_hi = k_range
    if k_lo < 2 or k_hi < k_lo:
        raise ValueError(f"k_range must satisfy 2 <= k_lo <= k_hi, got {k_range}")
    if min_cluster_size < 1:
        raise ValueError("min_cluster_size must be >= 1")
    Xp = data.prepared()
    Z = Xp * np.sqrt(data.weights)
    n = len(Z)
    D = pairwise_distances(Xp, data.weights)
    best = None
    scores = {}
    for k in range(k_lo, k_hi + 1):
        if k > n or n < k * min_cluster_size:
            continue
        rng = np.random.default_rng([seed, k])
        labels, centers = _lloyd(Z, k, rng, max_iter)
        labels = _repair_min_size(Z, labels, centers, min_cluster_size)
        if len(np.unique(labels)) < 2:
            continue
        scores[k] = _silhouette_from_distances(D, labels)
        if best is None or scores[k] > scores[best[0]]:
            best = (k, labels)
    if best is None:
        raise ValueError(
            f"no feasible k in {k_range} for {n} zones with min_cluster_size={min_cluster_size}"
        )
    return ClusterSet(canonical_labels(best[1]), StopReason.CONVERGED, silhouettes=scores)


# -- contiguity-constrained hierarchical clustering ----------------------------


@dataclass(frozen=True)
class CchcConstraints:
    k_min: int = 3
    s_max: int = 9
    d_max: float = 9.0

    def __post_init__(self):
        if self.k_min < 1 or self.s_max < 1:
            raise ValueError("k_min and s_max must be >= 1")
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")


@dataclass
class IceMatrices:
    same_cluster: np.ndarray  # C_e
    mergeable: np.ndarray  # C_p
    distance: np.ndarray  # D_z


def _membership(labels):
    uniq, inv = np.unique(labels, return_inverse=True)
    M = np.zeros((len(labels), len(uniq)))
    M[np.arange(len(labels)), inv] = 1.0
    return uniq, inv, M


def feasible_cluster_pairs(labels, adjacency, s_max) -> np.ndarray:
    """K x K boolean: clusters touch and their combined size is at most ``s_max``."""
    _, _, M = _membership(labels)
    touch = (M.T @ np.asarray(adjacency, dtype=float) @ M) > 0
    np.fill_diagonal(touch, False)
    sizes = M.sum(axis=0)
    return touch & (sizes[:, None] + sizes[None, :] <= s_max)


def cchc_constraint_matrices(labels, adjacency, s_max, X, w) -> IceMatrices:
    labels = np.asarray(labels)
    _, inv, _ = _membership(labels)
    same = labels[:, None] == labels[None, :]
    pair_ok = feasible_cluster_pairs(labels, adjacency, s_max)
    mergeable = pair_ok[inv][:, inv]
    dist = np.where(same, 0.0, np.where(mergeable, pairwise_distances(X, w), np.inf))
    return IceMatrices(same.astype(np.int8), mergeable.astype(np.int8), dist)


def contiguity_check(labels, adjacency) -> list[int]:
    """Labels of clusters whose zones do not form a connected subgraph."""
    labels = np.asarray(labels)
    adjacency = np.asarray(adjacency, dtype=bool)
    bad = []
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        inside = set(members.tolist())
        seen = {int(members[0])}
        queue = deque(seen)
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(adjacency[i]):
                j = int(j)
                if j in inside and j not in seen:
                    seen.add(j)
                    queue.append(j)
        if len(seen) != len(members):
            bad.append(int(lab))
    return bad


def cchc_ice(
    demand_features,
    adjacency,
    constraints: CchcConstraints = CchcConstraints(),
    weights=None,
    normalize: bool = True,
) -> ClusterSet:
    """Agglomerate singletons one merge at a time under the ICE constraints.

    Each round rebuilds the constraint matrices, takes the feasible pair with
    the smallest average-linkage distance (ties: smallest member zone indices)
    and merges it, unless that would go below ``k_min`` clusters, exceed
    ``d_max`` or break contiguity.
    """
    X = np.asarray(demand_features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    adjacency = np.asarray(adjacency, dtype=bool)
    n = len(X)
    if n < 1:
        raise ValueError("need at least one zone")
    w = np.ones(X.shape[1]) if weights is None else np.asarray(weights, dtype=float)
    Xn = normalize_features(X) if normalize else X
    labels = np.arange(n)  # label = smallest zone index in the cluster
    history = []
    reason = StopReason.CONVERGED
    while True:
        uniq, _, M = _membership(labels)
        if len(uniq) <= constraints.k_min:
            reason = StopReason.K_MIN_REACHED
            break
        mats = cchc_constraint_matrices(labels, adjacency, constraints.s_max, Xn, w)
        pair_ok = feasible_cluster_pairs(labels, adjacency, constraints.s_max)
        if not pair_ok.any():
            reason = StopReason.NO_FEASIBLE_PAIR
            break
        finite = np.where(np.isfinite(mats.distance), mats.distance, 0.0)
        sizes = M.sum(axis=0)
        linkage = (M.T @ finite @ M) / np.outer(sizes, sizes)
        linkage = np.where(np.triu(pair_ok, 1), linkage, np.inf)
        d_min = linkage.min()
        if d_min > constraints.d_max:
            reason = StopReason.DISTANCE_THRESHOLD
            break
        tied = np.argwhere(linkage <= d_min + _TIE_RTOL * max(1.0, d_min))
        # uniq is sorted by smallest member index, so the first row obeys the tie rule
        a, b = (int(v) for v in tied[0])
        la, lb = uniq[a], uniq[b]
        merged = np.where(labels == lb, la, labels)
        if contiguity_check(merged, adjacency):
            reason = StopReason.VIOLATION_DETECTED
            break
        history.append(
            Merge(
                tuple(np.flatnonzero(labels == la).tolist()),
                tuple(np.flatnonzero(labels == lb).tolist()),
                float(linkage[a, b]),
            )
        )
        labels = merged
    return ClusterSet(canonical_labels(labels), reason, history=history)


def threshold_clusters(demand, cuts=(0.25, 0.5, 0.75)) -> ClusterSet:
    """Band zones by empirical percentiles of demand; a value on a cut joins the lower band."""
    demand = np.asarray(demand, dtype=float)
    if demand.size == 0:
        raise ValueError("need at least one zone")
    cut_values = np.quantile(demand, sorted(cuts))
    bands = np.searchsorted(cut_values, demand, side="left")
    return ClusterSet(bands, StopReason.CONVERGED)


# -- estimator wrappers --------------------------------------------------------


class ConstrainedKMeans(ClusterMixin, BaseEstimator):
    """CKMC with the sklearn clustering interface. Columns of X are weighted by ``feature_weights``."""

    def __init__(self, k_range=(3, 6), min_cluster_size=1, feature_weights=None, normalize=True,
                 random_state=0):
        self.k_range = k_range
        self.min_cluster_size = min_cluster_size
        self.feature_weights = feature_weights
        self.normalize = normalize
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        w = np.ones(X.shape[1]) if self.feature_weights is None else self.feature_weights
        result = ckmc(ClusterInput(X, w, self.normalize), tuple(self.k_range),
                      self.min_cluster_size, int(self.random_state or 0))
        self.labels_ = result.labels
        self.n_clusters_ = result.k
        self.silhouettes_ = result.silhouettes
        return self


class ContiguityConstrainedClustering(ClusterMixin, BaseEstimator):
    """CCHC-ICE with the sklearn clustering interface."""

    def __init__(self, adjacency=None, k_min=3, s_max=9, d_max=9.0, normalize=True):
        self.adjacency = adjacency
        self.k_min = k_min
        self.s_max = s_max
        self.d_max = d_max
        self.normalize = normalize

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if self.adjacency is None:
            raise ValueError("adjacency is required")
        result = cchc_ice(X, self.adjacency, CchcConstraints(self.k_min, self.s_max, self.d_max),
                          normalize=self.normalize)
        self.labels_ = result.labels
        self.n_clusters_ = result.k
        self.stop_reason_ = result.stop_reason
        self.merges_ = result.history
        return self
