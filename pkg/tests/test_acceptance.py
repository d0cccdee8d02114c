"""Acceptance criteria, one test each, with their tolerances and runtime budgets.

Every test records a pass/fail line that the terminal summary prints.
"""
import contextlib
import csv
import shutil
import time

import numpy as np
import pytest

from pdc.benchmarks import MyopicRegressor, SeasonalQuantileRegressor
from pdc.boosting import BoostParams, fit_boost
from pdc.cli import BUNDLED_SCENARIO, main
from pdc.clustering import (
    CchcConstraints,
    ClusterInput,
    cchc_ice,
    ckmc,
    contiguity_check,
)
from pdc.forest import (
    ForestParams,
    QuantileForestDemandRegressor,
    fit_forest,
    forest_cdf,
    forest_quantile,
)
from pdc.ingest import aggregate_orders, assemble_features
from pdc.metrics import QuantileForecast, crps, mcrps_from_arrays
from pdc.scenarios import forecast_scenario, hotspot_day
from pdc.simulator import (
    RelocationPolicy,
    SimConfig,
    SlotDemandOracle,
    compare_policies,
)
from pdc.trees import TreeParams, fit_tree

from conftest import ACCEPTANCE, random_connected_adjacency
from oracles import best_pair, forest_weights, minmax, replay_cchc, trapezoid_crps

pytestmark = pytest.mark.acceptance

LEVELS = tuple(round(0.1 * k, 1) for k in range(1, 10))


class Criterion:
    def __init__(self):
        self.detail = ""


@contextlib.contextmanager
def criterion(number, title, budget_s):
    c = Criterion()
    start = time.perf_counter()
    passed = False
    try:
        yield c
        elapsed = time.perf_counter() - start
        assert elapsed < budget_s, f"took {elapsed:.1f} s, budget {budget_s} s"
        passed = True
    except AssertionError as exc:
        c.detail = (c.detail + "; " if c.detail else "") + str(exc).splitlines()[0]
        raise
    finally:
        elapsed = time.perf_counter() - start
        ACCEPTANCE.append((number, title, passed, elapsed, c.detail))
        print(f"[{'PASS' if passed else 'FAIL'}] #{number} {title} ({elapsed:.1f} s) {c.detail}")


def test_01_forest_weight_form():
    with criterion(1, "forest weight form equals mean of trees", 10) as c:
        rng = np.random.default_rng(101)
        worst_mu = worst_sum = worst_oracle = 0.0
        for case in range(200):
            n = int(rng.integers(2, 65))
            p = int(rng.integers(1, 5))
            X = rng.normal(size=(n, p))
            y = rng.normal(3, 2, size=n).round(int(rng.integers(0, 3)))
            params = ForestParams(int(rng.integers(1, 16)),
                                  TreeParams(min_samples_leaf=int(rng.integers(1, 5)),
                                             max_features=str(rng.choice(["all", "sqrt"]))),
                                  base_seed=case)
            model = fit_forest(X, y, params)
            x = rng.normal(size=p) if case % 2 else X[int(rng.integers(n))]
            w = model.weights(x[None, :])[0]
            worst_mu = max(worst_mu, abs(model.mean_of_trees(x[None, :])[0] - w @ y))
            worst_sum = max(worst_sum, abs(w.sum() - 1))
            worst_oracle = max(worst_oracle, np.abs(w - forest_weights(model, x)).max())
        assert worst_mu <= 1e-9, f"max |mu - sum w y| = {worst_mu:.2e}"
        assert worst_sum <= 1e-9, f"max |sum w - 1| = {worst_sum:.2e}"
        assert worst_oracle <= 1e-12, f"weights differ from the per-tree oracle by {worst_oracle:.2e}"
        c.detail = f"max |mu - sum w y| = {worst_mu:.1e}, max |sum w - 1| = {worst_sum:.1e}"


def test_02_qrf_quantile_law():
    with criterion(2, "QRF quantiles monotone, in training set, CDF reaches 1", 10) as c:
        rng = np.random.default_rng(202)
        for case in range(200):
            n = int(rng.integers(2, 65))
            X = rng.normal(size=(n, 3))
            y = rng.poisson(3.0, size=n).astype(float)
            model = fit_forest(X, y, ForestParams(int(rng.integers(1, 16)),
                                                  TreeParams(min_samples_leaf=int(rng.integers(1, 6))),
                                                  base_seed=case))
            x = rng.normal(size=3)
            qs = np.sort(rng.uniform(0.001, 0.999, size=int(rng.integers(1, 20))))
            values = forest_quantile(model, x, qs)
            assert (np.diff(values) >= 0).all(), f"case {case}: quantiles decrease"
            assert set(values.tolist()) <= set(y.tolist()), f"case {case}: quantile outside training targets"
            grid = np.unique(np.concatenate([y, rng.uniform(y.min() - 1, y.max() + 1, size=10)]))
            F = forest_cdf(model, x, grid)
            assert (np.diff(F) >= -1e-12).all(), f"case {case}: CDF decreases"
            assert abs(forest_cdf(model, x, [y.max()])[0] - 1) <= 1e-9, f"case {case}: F(max y) != 1"
        c.detail = "200 cases"


def test_03_crps_oracle():
    with criterion(3, "closed-form CRPS matches trapezoid integration", 30) as c:
        rng = np.random.default_rng(303)
        worst = 0.0
        for case in range(1200):
            kind = case % 4
            if kind == 0:
                values = np.full(9, rng.uniform(0, 8))  # degenerate point mass
            elif kind == 1:
                values = np.sort(rng.integers(0, 6, size=9)).astype(float)  # ties
            else:
                values = np.sort(rng.uniform(0, 8, size=9))
            y = float(rng.uniform(-2, 10)) if case % 5 else float(rng.choice(values))
            got = crps(QuantileForecast(LEVELS, values), y)
            worst = max(worst, abs(got - trapezoid_crps(values, LEVELS, y, step=1e-4)))
            if kind == 0:
                assert got == abs(values[0] - y), f"point mass at {values[0]} vs {y}: {got}"
        assert worst <= 1e-6, f"max deviation {worst:.2e}"
        c.detail = f"1200 forecasts, max deviation {worst:.1e}"


def test_04_tree_interpolation():
    with criterion(4, "a fully grown tree interpolates its training data", 5) as c:
        rng = np.random.default_rng(404)
        for case in range(50):
            if case % 2:
                X = rng.normal(size=(int(rng.integers(2, 200)), int(rng.integers(1, 6))))
            else:
                X = np.unique(rng.integers(0, 4, size=(int(rng.integers(2, 60)), 3)), axis=0).astype(float)
            y = rng.poisson(4.0, size=len(X)).astype(float)
            tree = fit_tree(X, y, params=TreeParams(max_depth=None, min_samples_leaf=1, max_features="all"))
            assert np.array_equal(tree.predict(X), y), f"dataset {case} not reproduced"
        c.detail = "50 datasets"


def test_05_boosting_monotone():
    with criterion(5, "boosting training MSE never increases", 20) as c:
        rng = np.random.default_rng(505)
        worst = -np.inf
        for case in range(20):
            n = int(rng.integers(20, 150))
            X = rng.normal(size=(n, int(rng.integers(1, 6))))
            y = rng.poisson(np.exp(X[:, 0].clip(-2, 2))).astype(float) * 2
            model = fit_boost(X, y, BoostParams(n_rounds=100, learning_rate=float(rng.choice([0.1, 0.3, 1.0])),
                                                max_depth=int(rng.integers(1, 5)), subsample=1.0,
                                                leaf_l2=float(rng.choice([0.0, 1.0])), base_seed=case))
            steps = np.diff(model.train_mse)
            worst = max(worst, steps.max())
            assert (steps <= 1e-12).all(), f"dataset {case}: MSE rose by {steps.max():.2e}"
        c.detail = f"largest step {worst:.1e}"


def _random_cchc_instance(rng, n_max, n_min=1, d_choices=(0.05, 0.2, 0.5, 1.0, 9.0, np.inf)):
    n = int(rng.integers(n_min, n_max + 1))
    adj = random_connected_adjacency(n, rng, extra=float(rng.uniform(0, 0.4)))
    if rng.random() < 0.5:
        X = rng.integers(0, 5, size=(n, int(rng.integers(1, 4)))).astype(float)
    else:
        X = rng.gamma(2.0, 2.0, size=(n, int(rng.integers(1, 4))))
    k_min = int(rng.integers(1, 5))
    s_max = int(rng.integers(1, 7))
    d_max = float(rng.choice(d_choices))
    return X, adj, k_min, s_max, d_max


def test_06_cchc_constraints():
    with criterion(6, "CCHC-ICE output is contiguous, size-capped, K >= K_min", 30) as c:
        rng = np.random.default_rng(606)
        reasons = {}
        for case in range(500):
            X, adj, k_min, s_max, d_max = _random_cchc_instance(rng, 12)
            res = cchc_ice(X, adj, CchcConstraints(k_min, s_max, d_max))
            clusters = [tuple(cl) for cl in res.clusters]
            assert not contiguity_check(res.labels, adj), f"case {case}: disconnected cluster"
            assert max(map(len, clusters)) <= s_max, f"case {case}: cluster above s_max"
            assert res.k >= min(k_min, len(X)), f"case {case}: K below K_min"
            # the stop reason must describe the final state
            reason = res.stop_reason.value
            reasons[reason] = reasons.get(reason, 0) + 1
            pick = best_pair(clusters, minmax(X), adj, s_max)
            if reason == "k_min_reached":
                assert res.k <= k_min, f"case {case}: stopped at K={res.k} > K_min"
            elif reason == "no_feasible_pair":
                assert pick is None, f"case {case}: a feasible pair was left"
            elif reason == "distance_threshold":
                assert pick is not None and pick[0] > d_max, f"case {case}: mergeable pair within D_max"
            elif reason == "violation_detected":
                assert pick is not None and not contiguity_check(res.labels, adj)
            else:
                raise AssertionError(f"case {case}: unexpected stop reason {reason}")
        c.detail = ", ".join(f"{k}: {v}" for k, v in sorted(reasons.items()))


def test_07_cchc_greedy_oracle():
    with criterion(7, "every CCHC-ICE merge is the exhaustive best feasible pair", 30) as c:
        rng = np.random.default_rng(707)
        merges = 0
        for case in range(100):
            # bias towards long merge sequences so the oracle sees many merges
            X, adj, k_min, s_max, d_max = _random_cchc_instance(rng, 10, n_min=5, d_choices=(0.5, 1.0, np.inf))
            res = cchc_ice(X, adj, CchcConstraints(k_min, s_max, d_max))
            try:
                replay_cchc(res, X, adj, k_min, s_max, d_max)
            except AssertionError as exc:
                raise AssertionError(f"case {case}: {exc}") from None
            merges += len(res.history)
        c.detail = f"{merges} merges checked"


def test_08_ckmc():
    with criterion(8, "CKMC respects min size, silhouette in range, planted groups found", 30) as c:
        rng = np.random.default_rng(808)
        for case in range(200):
            n = int(rng.integers(4, 25))
            min_size = int(rng.integers(1, max(2, n // 4) + 1))
            data = ClusterInput.from_point(rng.poisson(5, size=n), centroids=rng.normal(size=(n, 2)))
            res = ckmc(data, (2, 6), min_cluster_size=min_size, seed=case)
            assert np.bincount(res.labels).min() >= min_size, f"case {case}: cluster below minimum size"
            assert all(-1 <= s <= 1 for s in res.silhouettes.values()), f"case {case}: silhouette out of range"
        for case in range(20):
            a, b = (int(v) for v in rng.integers(2, 10, size=2))
            loc = np.vstack([rng.normal(0, 0.05, size=(a, 2)), rng.normal(5, 0.05, size=(b, 2))])
            demand = np.concatenate([rng.normal(2, 0.05, size=a), rng.normal(20, 0.05, size=b)])
            order = rng.permutation(a + b)
            res = ckmc(ClusterInput.from_point(demand[order], loc[order]), (2, 6), seed=case)
            truth = (order >= a).astype(int)
            assert res.k == 2, f"planted case {case}: chose k={res.k}"
            assert len(set(zip(res.labels.tolist(), truth.tolist()))) == 2, f"planted case {case}: groups mixed"
        c.detail = "200 random + 20 planted instances"


def _forecast_seed(seed):
    sc = forecast_scenario(seed)
    series, _ = aggregate_orders(sc.orders, sc.registry, sc.grid)
    params = dict(n_estimators=50, min_samples_leaf=5, max_depth=7, max_features="all", random_state=seed)
    out = {k: [] for k in ("ld_mae", "qrf_mae", "myopic_mae", "ld_mcrps", "sq_mcrps")}
    for s in series.values():
        table = assemble_features(s, sc.weather, sc.holidays, include_lags=True, include_weather=True)
        train = np.array([iv.day < sc.test_start for iv in table.intervals])
        test = ~train
        y = table.y
        no_lags = [i for i, name in enumerate(table.schema) if not name.startswith("lag_")]
        ld = QuantileForestDemandRegressor(**params).fit(table.X[train], y[train])
        ld_q = ld.predict_quantiles(table.X[test], LEVELS)
        qrf = QuantileForestDemandRegressor(**params).fit(table.X[train][:, no_lags], y[train])
        myopic = MyopicRegressor(lag_col=table.schema.index("lag_0")).fit(table.X[train])
        sq = SeasonalQuantileRegressor(table.schema.index("hour"), table.schema.index("dow"))
        sq.fit(table.X[train], y[train])
        out["ld_mae"].append(np.mean(np.abs(ld_q[:, LEVELS.index(0.5)] - y[test])))
        out["qrf_mae"].append(np.mean(np.abs(qrf.predict(table.X[test][:, no_lags]) - y[test])))
        out["myopic_mae"].append(np.mean(np.abs(myopic.predict(table.X[test]) - y[test])))
        out["ld_mcrps"].append(mcrps_from_arrays(ld_q, y[test], LEVELS))
        out["sq_mcrps"].append(mcrps_from_arrays(sq.predict_quantiles(table.X[test], LEVELS), y[test], LEVELS))
    return {k: float(np.mean(v)) for k, v in out.items()}


def test_09_forecast_ordering():
    with criterion(9, "LD-QRF beats Myopic and QRF on MAE, Seasonal Quantile on MCRPS", 300) as c:
        rows = []
        for seed in range(5):
            r = _forecast_seed(seed)
            rows.append(r)
            tag = f"seed {seed}: " + ", ".join(f"{k}={v:.3f}" for k, v in r.items())
            assert r["ld_mae"] < r["myopic_mae"], tag
            assert r["ld_mae"] <= r["qrf_mae"], tag
            assert r["ld_mcrps"] < r["sq_mcrps"], tag
        mean = {k: np.mean([r[k] for r in rows]) for k in rows[0]}
        c.detail = ("mean MAE LD-QRF {ld_mae:.3f} / QRF {qrf_mae:.3f} / Myopic {myopic_mae:.3f}; "
                    "MCRPS LD-QRF {ld_mcrps:.3f} / SQ {sq_mcrps:.3f}").format(**mean)


def test_10_relocation_reduces_delivery_time():
    with criterion(10, "forward-looking relocation cuts delivery time by >= 10%", 180) as c:
        registry, orders = hotspot_day(seed=0)
        actual = SlotDemandOracle.from_orders(orders, registry, 630, 1290)
        policies = {
            "none": RelocationPolicy(),
            "nearest_pickup": RelocationPolicy("nearest_pickup"),
            "forward_looking": RelocationPolicy("forward_looking", actual),
        }
        result = compare_policies(orders, registry, SimConfig(fleet_size=30), policies, repetitions=100, seed=0)
        for name, runs in result.runs.items():
            for r, run in enumerate(runs):
                assert run.n_delivered + run.n_rejected == run.n_arrived, f"{name} repetition {r} lost orders"
        red = result.reduction_vs_none_pct
        c.detail = (f"reduction forward-looking {red['forward_looking']:.1f}%, "
                    f"nearest-pickup {red['nearest_pickup']:.1f}%")
        assert red["forward_looking"] >= 10.0, c.detail
        assert red["forward_looking"] >= red["nearest_pickup"], c.detail


def _copy_scenario(dest):
    shutil.copytree(BUNDLED_SCENARIO, dest)
    return str(dest / "config.json")


def test_11_cluster_median_closure(tmp_path):
    with criterion(11, "cluster-median evaluation is exactly zero when predictions equal actuals", 10) as c:
        cfg = _copy_scenario(tmp_path / "s")
        fast = ["--set", "model.family=myopic", "--set", "model.params={}"]
        for cmd in ("generate", "train", "predict"):
            assert main([cmd, "--config", cfg, *fast]) == 0, cmd
        pred_path = tmp_path / "s" / "out" / "predictions.csv"
        with open(pred_path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        actual = header.index("actual")
        for row in rows[1:]:
            for j in range(actual + 1, len(header)):
                row[j] = row[actual]
        with open(pred_path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        for method in ("cchc_ice", "ckmc", "threshold"):
            assert main(["evaluate", "--config", cfg, *fast, "--set", f"clustering.method={method}"]) == 0
            with open(tmp_path / "s" / "out" / "cluster_eval.csv", newline="") as fh:
                report = list(csv.DictReader(fh))
            for r in report:
                for metric in ("mae", "rmse", "rmsle"):
                    assert float(r[metric]) == 0.0, f"{method}: zone {r['zone']} {metric} = {r[metric]}"
        c.detail = "cchc_ice, ckmc and threshold"


def test_12_pipeline_determinism(tmp_path):
    with criterion(12, "two pipeline runs give byte-identical artifacts", 120) as c:
        outputs = []
        for name in ("a", "b"):
            cfg = _copy_scenario(tmp_path / name)
            assert main(["pipeline", "--config", cfg, "--seed", "7"]) == 0
            out = tmp_path / name / "out"
            outputs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
        a, b = outputs
        assert a.keys() == b.keys(), "different artifact sets"
        differ = [str(k) for k in a if a[k] != b[k]]
        assert not differ, f"artifacts differ: {differ}"
        c.detail = f"{len(a)} artifacts compared"
