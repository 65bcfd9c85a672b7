"""Small deterministic regressors used by the evaluation harness.

All models take raw feature matrices and standardise them internally on the
training rows (zero mean, unit variance; constant columns left unscaled).
"""
from __future__ import annotations

import math

import numpy as np

from . import kernels

REGRESSOR_KINDS = ("linear", "ridge", "rbf_kernel_ridge", "forest")


class _Standardizer:
    def fit(self, X):
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        return self

    def transform(self, X):
        return (X - self.mean_) / self.scale_


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("need at least one training row and one feature")
    if y.shape != (X.shape[0],):
        raise ValueError("target length must equal the number of rows")
    return X, y


class LinearRegressor:
    """Least squares with intercept via the normal equations.

    If the normal matrix is singular (or numerically so) a ridge jitter of
    1e-8 is added and ``fallback_`` is set.
    """

    jitter = 1e-8

    def __init__(self, penalty: float = 0.0):
        self.penalty = penalty
        self.fallback_ = False

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.std_ = _Standardizer().fit(X)
        Xs = self.std_.transform(X)
        self.intercept_ = y.mean()
        yc = y - self.intercept_
        G = Xs.T @ Xs
        b = Xs.T @ yc
        lam = self.penalty
        if lam == 0.0:
            ev = np.linalg.eigvalsh(G)
            if ev[0] <= 1e-12 * max(ev[-1], 1.0):
                self.fallback_ = True
                lam = self.jitter
        self.coef_ = np.linalg.solve(G + lam * np.eye(G.shape[0]), b)
        return self

    def predict(self, X):
        return self.std_.transform(np.asarray(X, dtype=np.float64)) @ self.coef_ + self.intercept_


class RidgeRegressor(LinearRegressor):
    def __init__(self, penalty: float = 1.0):
        super().__init__(penalty)


class RBFKernelRidge:
    """Kernel ridge regression with ``k(x, x') = exp(-gamma |x - x'|^2)``.

    ``gamma`` defaults to ``1 / n_features`` on standardised inputs.
    """

    def __init__(self, penalty: float = 0.1, gamma: float | None = None):
        self.penalty = penalty
        self.gamma = gamma

    def _kernel(self, A, B):
        d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
        return np.exp(-self.gamma_ * np.maximum(d2, 0.0))

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.std_ = _Standardizer().fit(X)
        self.Xtr_ = self.std_.transform(X)
        self.gamma_ = self.gamma if self.gamma is not None else 1.0 / X.shape[1]
        self.intercept_ = y.mean()
        K = self._kernel(self.Xtr_, self.Xtr_)
        self.dual_ = np.linalg.solve(K + self.penalty * np.eye(len(y)), y - self.intercept_)
        return self

    def predict(self, X):
        Xs = self.std_.transform(np.asarray(X, dtype=np.float64))
        return self._kernel(Xs, self.Xtr_) @ self.dual_ + self.intercept_


class RegressionTree:
    """Unpruned CART regression tree, grown to ``min_leaf`` rows per leaf."""

    def __init__(self, max_features: int | None = None, min_leaf: int = 1, rng=None):
        self.max_features = max_features
        self.min_leaf = min_leaf
        self.rng = rng

    def fit(self, X, y, idx=None):
        X, y = _check_xy(X, y)
        X = np.ascontiguousarray(X)
        p = X.shape[1]
        m = p if self.max_features is None else min(self.max_features, p)
        idx = np.arange(len(y)) if idx is None else np.asarray(idx, dtype=np.int64)
        feat, thr, left, right, value = [], [], [], [], []

        def new_node():
            feat.append(-1)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            return len(feat) - 1

        root = new_node()
        stack = [(root, idx)]
        while stack:
            node, rows = stack.pop()
            value[node] = float(y[rows].mean())
            if len(rows) < 2 * self.min_leaf or np.all(y[rows] == y[rows[0]]):
                continue
            if m < p:
                cand = np.sort(self.rng.choice(p, size=m, replace=False))
                f, t, g = kernels.best_split(X, y, rows, cand)
                if f < 0:
                    f, t, g = kernels.best_split(X, y, rows, np.arange(p))
            else:
                f, t, g = kernels.best_split(X, y, rows, np.arange(p))
            if f < 0:
                continue
            go_left = X[rows, f] <= t
            lrows, rrows = rows[go_left], rows[~go_left]
            if len(lrows) < self.min_leaf or len(rrows) < self.min_leaf:
                continue
            feat[node], thr[node] = f, t
            left[node], right[node] = new_node(), new_node()
            stack.append((right[node], rrows))
            stack.append((left[node], lrows))
        self.feature_ = np.array(feat)
        self.threshold_ = np.array(thr)
        self.left_ = np.array(left)
        self.right_ = np.array(right)
        self.value_ = np.array(value)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature_[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            n = node[rows]
            go_left = X[rows, self.feature_[n]] <= self.threshold_[n]
            node[rows] = np.where(go_left, self.left_[n], self.right_[n])
            active = self.feature_[node] >= 0
        return self.value_[node]


class RandomForest:
    """Bagged regression trees; prediction is the mean over trees.

    Defaults: 10 trees, bootstrap rows, ``ceil(sqrt(p))`` candidate features
    per split, unbounded depth, one row per leaf.
    """

    def __init__(self, n_trees: int = 10, bootstrap: bool = True, max_features="sqrt", seed: int = 0):
        self.n_trees = n_trees
        self.bootstrap = bootstrap
        self.max_features = max_features
        self.seed = seed

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        p = X.shape[1]
        if self.max_features == "sqrt":
            m = math.ceil(math.sqrt(p))
        elif self.max_features is None:
            m = p
        else:
            m = int(self.max_features)
        rng = np.random.default_rng(self.seed)
        n = len(y)
        self.trees_ = []
        for _ in range(self.n_trees):
            rows = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            tree = RegressionTree(max_features=m, rng=rng).fit(X, y, idx=rows)
            self.trees_.append(tree)
        return self

    def predict(self, X):
        return np.mean([t.predict(X) for t in self.trees_], axis=0)


class ConstantRegressor:
    """Training-mean predictor, used when a feature set is empty."""

    def fit(self, X, y):
        self.value_ = float(np.mean(y))
        return self

    def predict(self, X):
        return np.full(len(X), self.value_)


def fit_regressor(kind: str, features, targets, seed: int = 0, **params):
    if kind == "linear":
        model = LinearRegressor()
    elif kind == "ridge":
        model = RidgeRegressor(**params)
    elif kind == "rbf_kernel_ridge":
        model = RBFKernelRidge(**params)
    elif kind == "forest":
        model = RandomForest(seed=seed, **params)
    else:
        raise ValueError(f"unknown regressor kind {kind!r}; expected one of {REGRESSOR_KINDS}")
    return model.fit(features, targets)
