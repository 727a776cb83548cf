"""Error metrics, k-fold cross-validation, grid search and baseline comparison."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import SampleTable, train_test_folds
from .ensembles import BRT, FORMAT_VERSION, RF, XGB, build_params, fit
from .trees import importance

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    RF: {
        "n_trees": [100, 300],
        "max_depth": [10, 20, None],
        "mtry": ["sqrt", "third"],
        "min_samples_leaf": [1, 5],
    },
    BRT: {
        "n_trees": [100, 300],
        "learning_rate": [0.05, 0.1],
        "max_depth": [3, 6],
        "subsample": [0.5, 1.0],
    },
    XGB: {
        "n_trees": [100, 300],
        "learning_rate": [0.05, 0.1],
        "max_depth": [3, 6],
        "subsample": [0.5, 1.0],
        "reg_lambda": [0.0, 1.0],
        "gamma": [0.0],
    },
}


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("metrics need at least one value")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(truth - pred)))


def r2(pred, truth) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot."""
    pred, truth = _pair(pred, truth)
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("zero variance")
    return 1.0 - float(np.sum((truth - pred) ** 2)) / ss_tot


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    r2: float

    @classmethod
    def of(cls, pred, truth) -> Metrics:
        return cls(rmse(pred, truth), mae(pred, truth), r2(pred, truth))

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "r2": self.r2}


@dataclass
class CVResult:
    per_fold: list[Metrics]
    aggregate: Metrics
    oof: np.ndarray
    folds: list[np.ndarray]


class FoldError(RuntimeError):
    pass


def _fit_fold(table, technique, flat, seed, train_rows, test_rows, fold_no):
    try:
        params = build_params(technique, flat, seed, table.n_features)
        model = fit(table.subset(train_rows), technique, params)
    except Exception as exc:
        raise FoldError(f"fold {fold_no}: {exc}") from exc
    return model.predict(table.X[test_rows])


def cross_validate(
    table: SampleTable,
    technique: str,
    params: Mapping,
    k: int = 5,
    seed: int = 0,
    threads: int = 1,
    folds: Sequence[np.ndarray] | None = None,
) -> CVResult:
    """k-fold CV in the table's target space; the aggregate pools all held-out predictions.

    ``params`` is a flat grid point; ``seed`` drives both the fold shuffle and model RNG.
    """
    folds = list(folds) if folds is not None else train_test_folds(table.n_samples, k, seed)
    all_rows = np.arange(table.n_samples)
    jobs = [(np.setdiff1d(all_rows, f), f, i) for i, f in enumerate(folds)]
    run = lambda job: _fit_fold(table, technique, params, seed, *job)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            preds = list(pool.map(run, jobs))
    else:
        preds = [run(j) for j in jobs]
    oof = np.empty(table.n_samples)
    per_fold = []
    for f, p in zip(folds, preds):
        oof[f] = p
        per_fold.append(Metrics.of(p, table.y[f]))
    return CVResult(per_fold, Metrics.of(oof, table.y), oof, folds)


def _grid_points(grid: Mapping[str, Sequence]) -> list[tuple[tuple[int, ...], dict]]:
    keys = list(grid)
    positions = itertools.product(*(range(len(grid[key])) for key in keys))
    return [(pos, {key: grid[key][i] for key, i in zip(keys, pos)}) for pos in positions]


@dataclass
class GridResult:
    params: dict
    cv: CVResult


def grid_search(
    table: SampleTable,
    technique: str,
    grid: Mapping[str, Sequence],
    k: int = 5,
    seed: int = 0,
    threads: int = 1,
) -> tuple[dict, list[GridResult]]:
    """Exhaustive CV over the Cartesian grid; best = highest pooled R^2.

    Ties go to the point whose values come first in each list's declared order.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("empty grid")
    points = _grid_points(grid)
    if threads > 1 and len(points) > 1:
        with ThreadPoolExecutor(threads) as pool:
            cvs = list(pool.map(lambda pt: cross_validate(table, technique, pt[1], k, seed), points))
    else:
        cvs = [cross_validate(table, technique, flat, k, seed, threads=threads) for _, flat in points]
    results = [GridResult(flat, cv) for (_, flat), cv in zip(points, cvs)]
    best = min(range(len(points)), key=lambda i: (-cvs[i].aggregate.r2, points[i][0]))
    return dict(points[best][1]), results


def baseline_delta(candidate_r2: float, baseline_r2: float) -> float:
    """Percentage change of a candidate's R^2 relative to the baseline's."""
    if not baseline_r2 > 0:
        raise ValueError(f"baseline R^2 must be positive, got {baseline_r2}")
    return 100.0 * (candidate_r2 - baseline_r2) / baseline_r2


@dataclass
class EvalReport:
    model_spec: str
    target: str
    technique: str
    per_fold: list[Metrics]
    aggregate: Metrics
    best_params: dict
    seed: int
    k: int
    importance: dict[str, float] = field(default_factory=dict)
    baseline_delta_pct: float | None = None
    grid: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "model_spec": self.model_spec,
            "target": self.target,
            "technique": self.technique,
            "per_fold": [m.to_dict() for m in self.per_fold],
            "aggregate": self.aggregate.to_dict(),
            "best_params": self.best_params,
            "seed": self.seed,
            "k": self.k,
            "importance": self.importance,
            "baseline_delta_pct": self.baseline_delta_pct,
            "grid": self.grid,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        return cls(
            model_spec=d["model_spec"],
            target=d["target"],
            technique=d["technique"],
            per_fold=[Metrics(**m) for m in d["per_fold"]],
            aggregate=Metrics(**d["aggregate"]),
            best_params=d["best_params"],
            seed=d["seed"],
            k=d["k"],
            importance=d.get("importance", {}),
            baseline_delta_pct=d.get("baseline_delta_pct"),
            grid=d.get("grid", []),
        )

    def grid_csv(self) -> str:
        """One row per grid point for spreadsheet inspection."""
        keys = sorted({key for row in self.grid for key in row["params"]})
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["technique", "model_spec", *keys, "rmse", "mae", "r2"])
        for row in self.grid:
            agg = row["aggregate"]
            writer.writerow(
                [self.technique, self.model_spec, *(row["params"].get(key) for key in keys), agg["rmse"], agg["mae"], agg["r2"]]
            )
        return buf.getvalue()


def feature_importance(model) -> dict[str, float]:
    return {name: float(v) for name, v in zip(model.feature_names, importance(model))}


def compare_reports(reports: Sequence[EvalReport], baselines: Mapping[str, str]) -> list[dict]:
    """Percentage R^2 difference of every report against its target's baseline model, per technique."""
    index = {(r.target, r.technique, r.model_spec): r for r in reports}
    rows = []
    for r in sorted(reports, key=lambda r: (r.target, r.technique, r.model_spec)):
        base_name = baselines.get(r.target)
        if base_name is None:
            continue
        base = index.get((r.target, r.technique, base_name))
        if base is None:
            continue
        rows.append(
            {
                "target": r.target,
                "technique": r.technique,
                "model": r.model_spec,
                "baseline": base_name,
                "r2": r.aggregate.r2,
                "baseline_r2": base.aggregate.r2,
                "delta_pct": baseline_delta(r.aggregate.r2, base.aggregate.r2),
            }
        )
    return rows


def json_safe(value):
    """Replace non-finite floats so reports stay strict JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value
