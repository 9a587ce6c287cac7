"""Bagged CART regression trees (a small random forest).

Training rows are put in a canonical order before bootstrapping, so a fitted
ensemble does not depend on the order in which rows were supplied.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InsufficientDataError


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 10
    min_leaf_size: int = 5
    bootstrap: bool = True
    bootstrap_fraction: float = 1.0
    max_features: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 0 or self.min_leaf_size < 1:
            raise ValueError("need n_trees >= 1, max_depth >= 0, min_leaf_size >= 1")
        if not 0 < self.bootstrap_fraction <= 1:
            raise ValueError("bootstrap_fraction must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flat tree: node ``k`` is a leaf when ``feature[k] < 0``; go left when ``x[f] <= threshold``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        node = np.zeros(x.shape[0], dtype=np.int64)
        rows = np.arange(x.shape[0])
        for _ in range(self.max_depth + 1):
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            go_left = x[rows, np.where(inner, f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)
        return self.value[node]


def _best_split(xs, ys, yn, min_leaf, features):
    """Best (feature, threshold) by squared-error reduction, or None.

    ``xs`` and ``ys`` hold each candidate feature's values and the matching
    targets, both sorted by that feature (one column per entry of ``features``);
    ``yn`` is the node's targets in row order.
    """
    n = yn.size
    csum = np.cumsum(ys, axis=0)[:-1]
    k = np.arange(1, n)[:, None]
    total = yn.sum()
    # maximize S_L^2/n_L + S_R^2/n_R, equivalent to minimizing the children's SSE
    score = csum * csum / k + (total - csum) ** 2 / (n - k)
    valid = (xs[1:] > xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    flat = np.argmax(score.T)
    fi, pos = divmod(int(flat), n - 1)
    gain = score[pos, fi] - total * total / n
    if not gain > 1e-12 * max(float(yn @ yn), 1e-300):
        return None
    lo, hi = xs[pos, fi], xs[pos + 1, fi]
    thr = lo + (hi - lo) / 2
    if not lo <= thr < hi:
        thr = lo
    return int(features[fi]), float(thr)


def _keep_rows(order: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Restrict every column of a presorted index matrix to rows with ``keep`` set."""
    cols = order.T
    return cols[keep[cols]].reshape(cols.shape[0], -1).T


def grow_tree(x, y, max_depth: int, min_leaf_size: int, rng: np.random.Generator | None = None,
              max_features: int | None = None) -> RegressionTree:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = x.shape
    feature, threshold, left, right, value = [], [], [], [], []
    # each node carries its rows sorted by every feature; children filter the parent's order
    stack = [(np.argsort(x, axis=0, kind="stable"), 0, -1, False)]
    while stack:
        order, depth, parent, is_right = stack.pop()
        node = len(value)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        idx = np.sort(order[:, 0]) if d else np.arange(n)
        yn = y[idx]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(yn.mean()))
        if d == 0 or depth >= max_depth or idx.size < 2 * min_leaf_size or np.ptp(yn) == 0:
            continue
        if max_features is not None and max_features < d:
            feats = np.sort(rng.choice(d, size=max_features, replace=False))
        else:
            feats = np.arange(d)
        sub = order[:, feats]
        split = _best_split(x[sub, feats], y[sub], yn, min_leaf_size, feats)
        if split is None:
            continue
        f, thr = split
        feature[node] = f
        threshold[node] = thr
        goes_left = np.zeros(n, dtype=bool)
        goes_left[idx] = x[idx, f] <= thr
        goes_right = np.zeros(n, dtype=bool)
        goes_right[idx] = ~goes_left[idx]
        stack.append((_keep_rows(order, goes_right), depth + 1, node, True))
        stack.append((_keep_rows(order, goes_left), depth + 1, node, False))
    return RegressionTree(np.array(feature), np.array(threshold), np.array(left),
                          np.array(right), np.array(value), max_depth)


@dataclass(frozen=True, eq=False)
class TreeEnsembleRegressor:
    trees: tuple[RegressionTree, ...]
    config: ForestConfig

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.mean([t.predict(x) for t in self.trees], axis=0)


def canonical_order(x, y) -> np.ndarray:
    """Row permutation sorting by every column of ``x`` and then ``y``."""
    keys = [y] + [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def fit_tree_ensemble(inputs, targets, cfg: ForestConfig = ForestConfig()) -> TreeEnsembleRegressor:
    """Bagged regression trees; tree ``b`` bootstraps with a generator seeded by ``(seed, b)``."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if y.size == 0:
        raise InsufficientDataError("cannot fit a forest on empty data")
    if x.shape[0] != y.size:
        raise DimensionError("inputs and targets differ in length")
    if y.size < cfg.min_leaf_size:
        raise InsufficientDataError(f"need at least min_leaf_size={cfg.min_leaf_size} rows")
    order = canonical_order(x, y)
    x, y = x[order], y[order]
    n = y.size
    trees = []
    for b in range(cfg.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, b]))
        if cfg.bootstrap:
            size = max(1, int(round(cfg.bootstrap_fraction * n)))
            rows = np.sort(rng.integers(0, n, size=size))
        else:
            rows = np.arange(n)
        trees.append(grow_tree(x[rows], y[rows], cfg.max_depth, cfg.min_leaf_size, rng, cfg.max_features))
    return TreeEnsembleRegressor(tuple(trees), cfg)
