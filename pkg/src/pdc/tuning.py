"""Grid search with chronological k-fold cross-validation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import clone
from sklearn.model_selection import KFold, ParameterGrid

from .boosting import GradientBoostedDemandRegressor
from .forest import QuantileForestDemandRegressor, RandomForestDemandRegressor

FOREST_GRID = {
    "n_estimators": list(range(50, 201, 25)),
    "max_features": ["auto", "sqrt"],
    "max_depth": [3, 4, 5, 6, 7],
    "min_samples_split": [4, 6, 8, 10],
    "min_samples_leaf": [2, 3, 4, 5, 10],
}
BOOST_GRID = {
    "n_estimators": list(range(50, 201, 25)),
    "learning_rate": [0.1, 0.15, 0.2, 0.25, 0.3],
    "max_depth": [3, 4, 5, 6, 7],
    "subsample": [0.5, 0.75, 1.0],
}
FAMILIES = {
    "rf": RandomForestDemandRegressor,
    "qrf": QuantileForestDemandRegressor,
    "boost": GradientBoostedDemandRegressor,
}
DEFAULT_GRIDS = {"rf": FOREST_GRID, "qrf": FOREST_GRID, "boost": BOOST_GRID}


@dataclass
class SearchResult:
    best_params: dict
    best_score: float
    candidates: list[dict]
    scores: list[float]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["candidate_id", "params_json", "mean_cv_mse"])
            for i, (p, s) in enumerate(zip(self.candidates, self.scores)):
                w.writerow([i, json.dumps(p, sort_keys=True), repr(float(s))])


def chronological_folds(n: int, k: int = 10) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous validation blocks; sizes differ by at most one."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < k:
        raise ValueError(f"{n} samples cannot be split into {k} folds")
    return list(KFold(n_splits=k, shuffle=False).split(np.arange(n)))


def grid_search_cv(X, y, estimator, grid: dict | None = None, k: int = 10, seed: int = 0) -> SearchResult:
    """Score every grid candidate by mean validation MSE over chronological folds.

    ``estimator`` is an unfitted estimator or a family name (``rf``, ``qrf``,
    ``boost``). Ties go to the earliest candidate in grid order.
    """
    if isinstance(estimator, str):
        base = FAMILIES[estimator](random_state=seed)
        grid = DEFAULT_GRIDS[estimator] if grid is None else grid
    else:
        base = clone(estimator)
        if "random_state" in base.get_params():
            base.set_params(random_state=seed)
    grid = grid or {}
    if any(len(v) == 0 for v in grid.values()):
        raise ValueError("every grid entry needs at least one candidate")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    folds = chronological_folds(len(y), k)
    candidates = list(ParameterGrid(grid))
    scores = []
    for params in candidates:
        total = 0.0
        for train, valid in folds:
            model = clone(base).set_params(**params).fit(X[train], y[train])
            total += float(np.mean((model.predict(X[valid]) - y[valid]) ** 2))
        scores.append(total / len(folds))
    best = int(np.argmin(scores))
    return SearchResult(candidates[best], scores[best], candidates, scores)
