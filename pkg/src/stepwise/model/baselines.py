"""Non-temporal baselines on flattened single-window features."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..cohort import FeatureStats, normalize
from .lstm import sigmoid


def _check_binary(y):
    y = np.asarray(y, dtype=int)
    if np.unique(y).size < 2:
        raise ValueError("training set contains a single class")
    return y


class LogisticRegression:
    """L2-regularized logistic regression fit by full-batch gradient descent.

    Minimizes ``mean BCE + l2 * ||w||^2`` (intercept unpenalized) on
    standardized inputs.
    """

    def __init__(self, l2: float = 1e-2, learning_rate: float = 0.5,
                 max_iter: int = 5000, tol: float = 1e-7):
        self.l2 = l2
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = _check_binary(y)
        self.stats_ = FeatureStats.fit(X)
        Z = normalize(X, self.stats_)
        n, d = Z.shape
        w, b = np.zeros(d), 0.0
        for it in range(self.max_iter):
            p = sigmoid(Z @ w + b)
            err = p - y
            gw = Z.T @ err / n + 2.0 * self.l2 * w
            gb = err.mean()
            w -= self.learning_rate * gw
            b -= self.learning_rate * gb
            if math.sqrt(gw @ gw + gb * gb) < self.tol:
                break
        self.coef_, self.intercept_, self.n_iter_ = w, b, it + 1
        return self

    def predict_proba(self, X):
        Z = normalize(np.asarray(X, dtype=float), self.stats_)
        return sigmoid(Z @ self.coef_ + self.intercept_)

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(int)


def train_logreg(X, y, l2: float = 1e-2) -> LogisticRegression:
    return LogisticRegression(l2=l2).fit(X, y)


def gini(pos: np.ndarray, total: np.ndarray) -> np.ndarray:
    p = np.divide(pos, total, out=np.zeros_like(pos, dtype=float), where=total > 0)
    return 2.0 * p * (1.0 - p)


class DecisionTree:
    """Binary CART classifier with the Gini criterion.

    Nodes are stored in flat arrays; ``feature == -1`` marks a leaf whose
    ``value`` is the positive fraction of its training samples.
    """

    def __init__(self, max_depth: int | None = None, min_leaf: int = 1,
                 max_features: int | None = None, rng: np.random.Generator | None = None):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        self.n_features_ = X.shape[1]
        self._feature, self._threshold, self._left, self._right, self._value = [], [], [], [], []
        self._grow(X, y, np.arange(len(y)), 0)
        self.feature_ = np.array(self._feature)
        self.threshold_ = np.array(self._threshold)
        self.left_ = np.array(self._left)
        self.right_ = np.array(self._right)
        self.value_ = np.array(self._value)
        return self

    def _new_node(self, value):
        self._feature.append(-1)
        self._threshold.append(0.0)
        self._left.append(-1)
        self._right.append(-1)
        self._value.append(value)
        return len(self._value) - 1

    def _best_split(self, X, y, idx):
        d = self.n_features_
        k = d if self.max_features is None else min(self.max_features, d)
        candidates = self.rng.permutation(d)[:k] if k < d else np.arange(d)
        n = len(idx)
        parent = gini(np.array([y[idx].sum()]), np.array([n]))[0]
        # zero-gain splits are allowed so impure nodes can always be refined
        best = (-np.inf, -1, 0.0)
        for f in candidates:
            xs = X[idx, f]
            order = np.argsort(xs, kind="stable")
            xs, ys = xs[order], y[idx][order]
            left_n = np.arange(1, n)
            left_pos = np.cumsum(ys)[:-1]
            valid = (xs[1:] > xs[:-1]) & (left_n >= self.min_leaf) & (n - left_n >= self.min_leaf)
            if not valid.any():
                continue
            right_n = n - left_n
            right_pos = ys.sum() - left_pos
            child = (left_n * gini(left_pos, left_n) + right_n * gini(right_pos, right_n)) / n
            gain = np.where(valid, parent - child, -np.inf)
            j = int(np.argmax(gain))
            if gain[j] > best[0]:
                best = (float(gain[j]), int(f), 0.5 * (xs[j] + xs[j + 1]))
        return best

    def _grow(self, X, y, idx, depth):
        node = self._new_node(float(y[idx].mean()))
        if (self.max_depth is not None and depth >= self.max_depth) or len(idx) < 2 * self.min_leaf:
            return node
        if y[idx].min() == y[idx].max():
            return node
        gain, f, thr = self._best_split(X, y, idx)
        if f < 0:
            return node
        go_left = X[idx, f] <= thr
        self._feature[node] = f
        self._threshold[node] = thr
        self._left[node] = self._grow(X, y, idx[go_left], depth + 1)
        self._right[node] = self._grow(X, y, idx[~go_left], depth + 1)
        return node

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=int)
        while True:
            feat = self.feature_[node]
            internal = feat >= 0
            if not internal.any():
                return node
            rows = np.flatnonzero(internal)
            go_left = X[rows, feat[rows]] <= self.threshold_[node[rows]]
            node[rows] = np.where(go_left, self.left_[node[rows]], self.right_[node[rows]])

    def predict_proba(self, X):
        return self.value_[self.apply(X)]

    def predict(self, X):
        """Leaf majority; an even leaf votes positive."""
        return (self.predict_proba(X) >= 0.5).astype(int)


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = 8
    min_leaf: int = 2
    features_per_split: int | None = None  # None -> ceil(sqrt(feature_dim))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("n_trees", "min_leaf"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")


@dataclass
class RandomForest:
    config: ForestConfig
    trees: list[DecisionTree] = field(default_factory=list)
    bootstrap_indices: list[np.ndarray] = field(default_factory=list)
    oob_indices: list[np.ndarray] = field(default_factory=list)

    def tree_votes(self, X) -> np.ndarray:
        """(n_trees, n_samples) hard 0/1 votes."""
        return np.stack([t.predict(X) for t in self.trees])

    def predict_proba(self, X):
        """Fraction of trees voting positive."""
        return self.tree_votes(X).mean(axis=0)

    def predict(self, X):
        """Majority vote; a tied vote is positive."""
        return (self.predict_proba(X) >= 0.5).astype(int)


def train_forest(X, y, config: ForestConfig | None = None) -> RandomForest:
    """Bootstrap-aggregated CART trees with per-split feature subsampling."""
    config = config or ForestConfig()
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    n, d = X.shape
    mtry = config.features_per_split or math.ceil(math.sqrt(d))
    rng = np.random.default_rng(config.seed)
    forest = RandomForest(config)
    for _ in range(config.n_trees):
        tree_rng = np.random.default_rng(rng.integers(2**63))
        if config.bootstrap:
            sample = tree_rng.integers(0, n, n)
        else:
            sample = np.arange(n)
        tree = DecisionTree(config.max_depth, config.min_leaf, mtry, tree_rng)
        tree.fit(X[sample], y[sample])
        forest.trees.append(tree)
        forest.bootstrap_indices.append(sample)
        forest.oob_indices.append(np.setdiff1d(np.arange(n), sample))
    return forest
