"""CART regression trees shared by the forest and boosting ensembles.

Trees are grown by an exhaustive greedy split scan over presorted feature
orders, compiled with numba. One kernel serves both objectives: variance
reduction is the second-order gain with ``g = -y``, ``h = 1`` and no
regularisation, so both use the score

    G_L^2 / (H_L + lam) + G_R^2 / (H_R + lam) - G^2 / (H + lam)

scaled by 1 (variance) or 1/2 minus ``gamma`` (second-order), and leaves take
``-G / (H + lam)``. Cost per tree is O(features * n log n) for the presort
plus O(features * n) per depth level.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numba
import numpy as np

VARIANCE = "variance"
XGB_GAIN = "xgb_gain"

_LEAF = -1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


class NoSplitsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TreeParams:
    """Growth limits and split objective.

    ``max_depth=None`` grows until leaves are pure or too small. ``mtry`` is the
    number of candidate features drawn per split; 0 means all of them.
    """

    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    mtry: int = 0
    objective: str = VARIANCE
    reg_lambda: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.mtry < 0:
            raise ValueError("mtry must be >= 0")
        if self.objective not in (VARIANCE, XGB_GAIN):
            raise ValueError(f"unknown split objective {self.objective!r}")
        if not (self.reg_lambda >= 0 and self.gamma >= 0 and math.isfinite(self.reg_lambda) and math.isfinite(self.gamma)):
            raise ValueError("reg_lambda and gamma must be finite and >= 0")


@numba.njit(cache=True, nogil=True)
def _mix(state):
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def _draw_features(p, mtry, seed, node_id):
    # partial Fisher-Yates on a splitmix64 stream keyed by (seed, node id)
    perm = np.arange(p)
    state = _mix(seed ^ (np.uint64(node_id + 1) * _GOLDEN))
    for i in range(mtry):
        state = state + _GOLDEN
        j = i + np.int64(_mix(state) % np.uint64(p - i))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return np.sort(perm[:mtry])


@numba.njit(cache=True, nogil=True)
def _grow(X, order, g, h, max_depth, min_split, min_leaf, mtry, lam, gamma, scale, exact_leaf, seed):
    n, p = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    gain = np.zeros(cap)
    count = np.zeros(cap, np.int64)

    # order[f, lo:hi] holds a node's samples sorted by feature f; splits stable-partition every row
    goes_left = np.zeros(n, np.bool_)
    buf = np.empty(n, np.int64)
    all_features = np.arange(p)

    stack_node = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        m = hi - lo

        G = 0.0
        H = 0.0
        constant = True
        g0 = g[order[0, lo]]
        h0 = h[order[0, lo]]
        for t in range(lo, hi):
            s = order[0, t]
            G += g[s]
            H += h[s]
            if g[s] != g0 or h[s] != h0:
                constant = False
        count[node] = m
        if constant and exact_leaf:
            value[node] = -g0
        else:
            value[node] = -G / (H + lam)

        if constant or m < min_split or m < 2 * min_leaf or (max_depth > 0 and depth >= max_depth):
            continue

        if mtry > 0 and mtry < p:
            candidates = _draw_features(p, mtry, seed, node)
        else:
            candidates = all_features

        parent = G * G / (H + lam)
        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        for f in candidates:
            GL = 0.0
            HL = 0.0
            for t in range(lo, hi - 1):
                s = order[f, t]
                GL += g[s]
                HL += h[s]
                nl = t - lo + 1
                if nl < min_leaf:
                    continue
                if m - nl < min_leaf:
                    break
                a = X[s, f]
                b = X[order[f, t + 1], f]
                if a == b:
                    continue
                GR = G - GL
                HR = H - HL
                score = scale * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma
                if score > best_gain:
                    best_gain = score
                    best_f = f
                    thr = a + (b - a) * 0.5
                    if thr >= b:
                        thr = a
                    best_thr = thr

        if best_f < 0:
            continue

        nl = 0
        for t in range(lo, hi):
            s = order[0, t]
            goes_left[s] = X[s, best_f] <= best_thr
            if goes_left[s]:
                nl += 1
        for f in range(p):
            a_pos = lo
            b_pos = 0
            for t in range(lo, hi):
                s = order[f, t]
                if goes_left[s]:
                    order[f, a_pos] = s
                    a_pos += 1
                else:
                    buf[b_pos] = s
                    b_pos += 1
            for t in range(b_pos):
                order[f, a_pos + t] = buf[t]

        feature[node] = best_f
        threshold[node] = best_thr
        gain[node] = best_gain
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack_node[top] = rc
        stack_lo[top] = lo + nl
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lc
        stack_lo[top] = lo
        stack_hi[top] = lo + nl
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        gain[:n_nodes].copy(),
        count[:n_nodes].copy(),
    )


@numba.njit(cache=True, nogil=True)
def _subset_order(order, rows):
    """Sorted order of ``X[rows]`` derived from the full order of ``X``; ``rows`` must be ascending."""
    p, n = order.shape
    k = rows.shape[0]
    counts = np.zeros(n, np.int64)
    for r in rows:
        counts[r] += 1
    start = np.zeros(n, np.int64)
    acc = 0
    for i in range(n):
        start[i] = acc
        acc += counts[i]
    out = np.empty((p, k), np.int64)
    for f in range(p):
        pos = 0
        for t in range(n):
            s = order[f, t]
            for c in range(counts[s]):
                out[f, pos] = start[s] + c
                pos += 1
    return out


def presort(X: np.ndarray) -> np.ndarray:
    """Stable per-feature sort order, shaped (features, samples)."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T).astype(np.int64, copy=False)


def subset_order(order: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Presorted order for ``X[rows]`` (ascending ``rows``, repeats allowed) without re-sorting."""
    return _subset_order(order, np.ascontiguousarray(rows, dtype=np.int64))


@numba.njit(cache=True, nogil=True)
def _predict(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass(frozen=True, eq=False)
class Tree:
    """A fitted tree as flat node arrays; node 0 is the root, ``feature == -1`` marks leaves."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_splits(self) -> int:
        return int(np.count_nonzero(self.feature >= 0))

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        return _predict(self.feature, self.threshold, self.left, self.right, self.value, X)

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature == _LEAF)

    def to_dict(self, node: int = 0) -> dict:
        """Nested node objects: leaves ``{"value", "n"}``; splits ``{"feature", "threshold", "gain", "left", "right"}``."""
        if self.feature[node] == _LEAF:
            return {"value": float(self.value[node]), "n": int(self.n_samples[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "gain": float(self.gain[node]),
            "n": int(self.n_samples[node]),
            "left": self.to_dict(int(self.left[node])),
            "right": self.to_dict(int(self.right[node])),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        rows: list[list] = []

        def visit(node: dict) -> int:
            i = len(rows)
            rows.append([_LEAF, 0.0, -1, -1, 0.0, 0.0, int(node.get("n", 0))])
            if "feature" in node:
                lc = visit(node["left"])
                rc = visit(node["right"])
                rows[i][:4] = [int(node["feature"]), float(node["threshold"]), lc, rc]
                rows[i][5] = float(node.get("gain", 0.0))
            else:
                rows[i][4] = float(node["value"])
            return i

        visit(d)
        cols = list(zip(*rows))
        return cls(
            np.array(cols[0], np.int64),
            np.array(cols[1], np.float64),
            np.array(cols[2], np.int64),
            np.array(cols[3], np.int64),
            np.array(cols[4], np.float64),
            np.array(cols[5], np.float64),
            np.array(cols[6], np.int64),
        )


def fit_tree(X, targets, params: TreeParams = TreeParams(), seed: int = 0, order: np.ndarray | None = None) -> Tree:
    """Grow one regression tree.

    ``targets`` is the response vector for the variance objective, or a
    ``(g, h)`` pair of per-sample gradients and hessians for ``xgb_gain``.
    ``seed`` keys the per-node feature subsampling stream. ``order`` optionally
    supplies :func:`presort` of ``X`` so ensembles can sort once.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit_tree needs a non-empty 2-D feature matrix")
    n, p = X.shape
    if params.objective == VARIANCE:
        y = np.asarray(targets, dtype=np.float64)
        g = -y
        h = np.ones(n)
        lam, gamma, scale, exact = 0.0, 0.0, 1.0, True
    else:
        g, h = (np.asarray(t, dtype=np.float64) for t in targets)
        lam, gamma, scale, exact = params.reg_lambda, params.gamma, 0.5, False
    if g.shape != (n,) or h.shape != (n,):
        raise ValueError("targets must have one entry per sample")
    if not (np.isfinite(X).all() and np.isfinite(g).all() and np.isfinite(h).all()):
        raise ValueError("fit_tree inputs must be finite")
    if params.mtry > p:
        raise ValueError(f"mtry={params.mtry} exceeds {p} features")
    if order is None:
        order = presort(X)
    elif order.shape != (p, n):
        raise ValueError(f"order shape {order.shape} does not match ({p}, {n})")
    arrays = _grow(
        X,
        np.array(order, dtype=np.int64, order="C"),
        np.ascontiguousarray(g),
        np.ascontiguousarray(h),
        params.max_depth or 0,
        params.min_samples_split,
        params.min_samples_leaf,
        params.mtry,
        float(lam),
        float(gamma),
        scale,
        exact,
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
    )
    return Tree(*arrays)


def predict_tree(tree: Tree, x) -> float:
    """Route one feature vector to its leaf; ``<=`` threshold goes left."""
    node = 0
    while tree.feature[node] != _LEAF:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return float(tree.value[node])


def split_gains(trees: Iterable[Tree], n_features: int) -> np.ndarray:
    total = np.zeros(n_features)
    for t in trees:
        splits = t.feature >= 0
        np.add.at(total, t.feature[splits], t.gain[splits])
    return total


def importance(model, n_features: int | None = None) -> np.ndarray:
    """Per-feature share of summed split gains, in percent.

    Accepts a single :class:`Tree`, a sequence of trees, or any object with
    ``trees`` and ``feature_names``. A model without splits yields zeros and a
    :class:`NoSplitsWarning`.
    """
    if isinstance(model, Tree):
        trees: Sequence[Tree] = [model]
    elif hasattr(model, "trees"):
        trees = model.trees
        n_features = n_features or len(model.feature_names)
    else:
        trees = list(model)
    if n_features is None:
        n_features = max((int(t.feature.max()) + 1 for t in trees), default=0)
    total = split_gains(trees, n_features)
    s = total.sum()
    if s <= 0:
        warnings.warn("no splits", NoSplitsWarning, stacklevel=2)
        return np.zeros(n_features)
    return 100.0 * total / s
