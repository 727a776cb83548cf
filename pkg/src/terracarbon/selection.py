"""Pearson screening and iterative VIF-driven removal of collinear features."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dataset import SampleTable

R2_INF_CUTOFF = 1.0 - 1e-12
_JITTER = 1e-10


class ZeroVarianceError(ValueError):
    pass


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson_r needs two equal-length vectors of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("zero variance")
    r = (dx @ dy) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def _standardize(X: np.ndarray, names) -> np.ndarray:
    centered = X - X.mean(axis=0)
    scale = np.sqrt((centered**2).sum(axis=0))
    constant = [n for n, s in zip(names, scale) if s == 0.0]
    if constant:
        raise ZeroVarianceError(f"zero variance in column(s): {', '.join(constant)}")
    return centered / scale


def _solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # normal equations; ridge jitter only when the system is numerically singular
    if np.linalg.cond(gram) < 1e12:
        return np.linalg.solve(gram, rhs)
    jitter = _JITTER * np.trace(gram) / gram.shape[0]
    return np.linalg.solve(gram + jitter * np.eye(gram.shape[0]), rhs)


def vif_scores(X, feature_names) -> dict[str, float]:
    """Variance inflation factor of each column regressed on all others plus an intercept."""
    X = np.asarray(X, dtype=np.float64)
    names = list(feature_names)
    n, p = X.shape
    if p < 2:
        raise ValueError("VIF needs at least two features")
    if n <= p:
        raise ValueError(f"VIF needs more samples ({n}) than features ({p})")
    Z = _standardize(X, names)  # centring absorbs the intercept
    gram = Z.T @ Z
    out = {}
    for j, name in enumerate(names):
        others = [i for i in range(p) if i != j]
        beta = _solve(gram[np.ix_(others, others)], gram[others, j])
        resid = Z[:, j] - Z[:, others] @ beta
        r2 = 1.0 - (resid @ resid) / (Z[:, j] @ Z[:, j])
        out[name] = math.inf if r2 >= R2_INF_CUTOFF else 1.0 / (1.0 - r2)
    return out


def max_abs_r(X: np.ndarray, names: list[str]) -> dict[str, float]:
    """Largest |pearson r| of each column against every other column."""
    Z = _standardize(X, names)
    corr = np.clip(Z.T @ Z, -1.0, 1.0)
    np.fill_diagonal(corr, 0.0)
    return {n: float(v) for n, v in zip(names, np.abs(corr).max(axis=1))}


class EliminationStep(NamedTuple):
    removed_feature: str
    vif_at_removal: float
    max_pairwise_r: float


@dataclass
class EliminationTrace:
    steps: list[EliminationStep] = field(default_factory=list)
    surviving: list[str] = field(default_factory=list)

    @property
    def removed(self) -> list[str]:
        return [s[0] for s in self.steps]

    def to_dict(self) -> dict:
        return {
            "steps": [
                {"removed_feature": f, "vif_at_removal": _json_real(v), "max_pairwise_r": r} for f, v, r in self.steps
            ],
            "surviving": list(self.surviving),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _json_real(v: float):
    return "inf" if math.isinf(v) else v


def eliminate_collinear(table: SampleTable, vif_threshold: float = 10.0, r_threshold: float = 0.9) -> EliminationTrace:
    """Drop the highest-VIF feature one at a time until every survivor has VIF < threshold.

    Ties on VIF go to features whose max |r| against the survivors reaches
    ``r_threshold``, then to the larger max |r|, then to the lexicographically
    smallest name.
    """
    names = list(table.feature_names)
    if len(names) < 2:
        raise ValueError("elimination needs at least two features")
    X = table.X
    trace = EliminationTrace()
    while len(names) >= 2:
        cols = [table.feature_names.index(n) for n in names]
        sub = X[:, cols]
        vifs = vif_scores(sub, names)
        top = max(vifs.values())
        if top < vif_threshold:
            break
        rmax = max_abs_r(sub, names)
        tied = [n for n in names if vifs[n] == top]
        victim = min(tied, key=lambda n: (rmax[n] < r_threshold, -rmax[n], n))
        trace.steps.append(EliminationStep(victim, vifs[victim], rmax[victim]))
        names.remove(victim)
    trace.surviving = names
    return trace
