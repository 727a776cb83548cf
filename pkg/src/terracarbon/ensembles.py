"""Random forest, boosted regression trees and second-order regularised boosting."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from .dataset import SampleTable, TargetTransform
from .trees import VARIANCE, XGB_GAIN, Tree, TreeParams, fit_tree, presort, subset_order

FORMAT_VERSION = 1

RF, BRT, XGB = "RF", "BRT", "XGB"
TECHNIQUES = (BRT, RF, XGB)


@dataclass(frozen=True)
class RFParams:
    n_trees: int = 100
    tree: TreeParams = TreeParams()
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


@dataclass(frozen=True)
class BRTParams:
    n_trees: int = 100
    learning_rate: float = 0.1
    subsample: float = 1.0
    tree: TreeParams = TreeParams(max_depth=3)
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in [0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")


@dataclass(frozen=True)
class XGBParams(BRTParams):
    reg_lambda: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if not (math.isfinite(self.reg_lambda) and math.isfinite(self.gamma)):
            raise ValueError("reg_lambda and gamma must be finite")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("reg_lambda and gamma must be >= 0")


class SquaredError:
    """Squared-error loss with its first and second derivatives in the prediction."""

    @staticmethod
    def loss(pred, y):
        return 0.5 * (pred - y) ** 2

    @staticmethod
    def grad(pred, y):
        return pred - y

    @staticmethod
    def hess(pred, y):
        return np.ones_like(pred)


@dataclass(eq=False)
class EnsembleModel:
    technique: str
    trees: list[Tree]
    base_score: float
    params: Any
    feature_names: tuple[str, ...]
    transform: TargetTransform = TargetTransform.IDENTITY
    learning_rate: float = 1.0
    train_mse: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "technique": self.technique,
            "params": params_to_dict(self.params),
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_names": list(self.feature_names),
            "transform": self.transform.value,
            "trees": [t.to_dict() for t in self.trees],
            **self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleModel:
        known = {"version", "technique", "params", "base_score", "learning_rate", "feature_names", "transform", "trees"}
        return cls(
            technique=d["technique"],
            trees=[Tree.from_dict(t) for t in d["trees"]],
            base_score=float(d["base_score"]),
            params=params_from_dict(d["technique"], d["params"]),
            feature_names=tuple(d["feature_names"]),
            transform=TargetTransform(d["transform"]),
            learning_rate=float(d["learning_rate"]),
            meta={k: v for k, v in d.items() if k not in known},
        )


def params_to_dict(params) -> dict:
    return asdict(params)


def params_from_dict(technique: str, d: dict):
    d = dict(d)
    tree = TreeParams(**d.pop("tree"))
    cls = {RF: RFParams, BRT: BRTParams, XGB: XGBParams}[technique]
    return cls(tree=tree, **d)


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _tree_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63))


def _check_features(model: EnsembleModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise ValueError(f"expected {len(model.feature_names)} feature columns, got shape {X.shape}")
    return X


def predict(model: EnsembleModel, X) -> np.ndarray:
    """Ensemble prediction in the model's (transformed) target space."""
    X = _check_features(model, X)
    if model.technique == RF:
        out = np.zeros(X.shape[0])
        for t in model.trees:
            out += t.predict(X)
        return out / len(model.trees)
    out = np.full(X.shape[0], model.base_score)
    for t in model.trees:
        out += model.learning_rate * t.predict(X)
    return out


def _rf_member(X, y, order, params: RFParams, m: int):
    n = X.shape[0]
    rng = _stream(params.seed, m)
    rows = np.sort(rng.integers(0, n, size=n)) if params.bootstrap else np.arange(n)
    tree = fit_tree(X[rows], y[rows], params.tree, seed=_tree_seed(rng), order=subset_order(order, rows))
    in_bag = np.zeros(n, dtype=bool)
    in_bag[rows] = True
    return tree, in_bag


def fit_rf(table: SampleTable, params: RFParams, threads: int = 1) -> tuple[EnsembleModel, float | None]:
    """Bagged variance trees; returns the model and its out-of-bag R^2 (None when undefined)."""
    X, y = table.X, table.y
    if table.n_samples == 0:
        raise ValueError("cannot fit a forest on an empty table")
    if params.tree.mtry > table.n_features:
        raise ValueError(f"mtry={params.tree.mtry} exceeds {table.n_features} features")
    tree_params = replace(params.tree, objective=VARIANCE)
    params = replace(params, tree=tree_params)
    order = presort(X)
    if threads > 1 and params.n_trees > 1:
        with ThreadPoolExecutor(threads) as pool:
            members = list(pool.map(lambda m: _rf_member(X, y, order, params, m), range(params.n_trees)))
    else:
        members = [_rf_member(X, y, order, params, m) for m in range(params.n_trees)]

    oob_sum = np.zeros(table.n_samples)
    oob_count = np.zeros(table.n_samples, dtype=np.int64)
    for tree, in_bag in members:
        out = ~in_bag
        if out.any():
            oob_sum[out] += tree.predict(X[out])
            oob_count[out] += 1
    model = EnsembleModel(RF, [t for t, _ in members], 0.0, params, table.feature_names, table.transform)
    seen = oob_count > 0
    oob_r2 = None
    if seen.sum() >= 2:
        truth = y[seen]
        ss_tot = float(((truth - truth.mean()) ** 2).sum())
        if ss_tot > 0:
            pred = oob_sum[seen] / oob_count[seen]
            oob_r2 = 1.0 - float(((truth - pred) ** 2).sum()) / ss_tot
    model.meta["oob_r2"] = oob_r2
    return model, oob_r2


def _boost(table: SampleTable, params: BRTParams, technique: str, tree_params: TreeParams) -> EnsembleModel:
    X, y = table.X, table.y
    n = table.n_samples
    if n == 0:
        raise ValueError("cannot boost on an empty table")
    if tree_params.mtry > table.n_features:
        raise ValueError(f"mtry={tree_params.mtry} exceeds {table.n_features} features")
    k = max(1, int(round(params.subsample * n)))
    base = float(y.mean())
    pred = np.full(n, base)
    trees, curve = [], []
    loss = SquaredError
    order = presort(X)
    for m in range(params.n_trees):
        rng = _stream(params.seed, m)
        rows = np.sort(rng.choice(n, size=k, replace=False)) if k < n else np.arange(n)
        tree_seed = _tree_seed(rng)
        if technique == BRT:
            targets = (y - pred)[rows]
        else:
            targets = (loss.grad(pred, y)[rows], loss.hess(pred, y)[rows])
        tree = fit_tree(X[rows], targets, tree_params, seed=tree_seed, order=subset_order(order, rows))
        pred += params.learning_rate * tree.predict(X)
        trees.append(tree)
        curve.append(float(np.mean((y - pred) ** 2)))
    return EnsembleModel(
        technique,
        trees,
        base,
        replace(params, tree=tree_params),
        table.feature_names,
        table.transform,
        params.learning_rate,
        curve,
    )


def fit_brt(table: SampleTable, params: BRTParams) -> EnsembleModel:
    """Stagewise residual fitting with shrinkage and subsampling without replacement."""
    return _boost(table, params, BRT, replace(params.tree, objective=VARIANCE, reg_lambda=0.0, gamma=0.0))


def fit_xgb(table: SampleTable, params: XGBParams) -> EnsembleModel:
    """Second-order boosting: trees fit (g, h) with L2-regularised leaf weights and a split-gain floor."""
    tree_params = replace(params.tree, objective=XGB_GAIN, reg_lambda=params.reg_lambda, gamma=params.gamma)
    return _boost(table, params, XGB, tree_params)


def fit(table: SampleTable, technique: str, params, threads: int = 1) -> EnsembleModel:
    if technique == RF:
        return fit_rf(table, params, threads)[0]
    if technique == BRT:
        return fit_brt(table, params)
    if technique == XGB:
        return fit_xgb(table, params)
    raise ValueError(f"unknown technique {technique!r}")


def resolve_mtry(mtry, n_features: int) -> int:
    """Turn a grid value (int, "sqrt", "third", "all") into a feature count."""
    if mtry in (None, "all", 0):
        return 0
    if mtry == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if mtry == "third":
        return max(1, n_features // 3)
    return min(int(mtry), n_features)


_TREE_KEYS = ("max_depth", "min_samples_split", "min_samples_leaf", "mtry")


def build_params(technique: str, flat: dict, seed: int, n_features: int):
    """Build typed params from a flat grid point such as ``{"n_trees": 100, "max_depth": 6}``."""
    flat = dict(flat)
    if "lambda" in flat:
        flat["reg_lambda"] = flat.pop("lambda")
    tree_kw = {k: flat.pop(k) for k in _TREE_KEYS if k in flat}
    if "mtry" in tree_kw:
        tree_kw["mtry"] = resolve_mtry(tree_kw["mtry"], n_features)
    if technique == RF:
        allowed = {"n_trees", "bootstrap"}
        cls = RFParams
    elif technique == BRT:
        allowed = {"n_trees", "learning_rate", "subsample"}
        cls = BRTParams
        tree_kw.setdefault("max_depth", 3)
    elif technique == XGB:
        allowed = {"n_trees", "learning_rate", "subsample", "reg_lambda", "gamma"}
        cls = XGBParams
        tree_kw.setdefault("max_depth", 3)
    else:
        raise ValueError(f"unknown technique {technique!r}")
    unknown = sorted(set(flat) - allowed)
    if unknown:
        raise ValueError(f"unknown {technique} parameter(s): {', '.join(unknown)}")
    return cls(tree=TreeParams(**tree_kw), seed=seed, **flat)
