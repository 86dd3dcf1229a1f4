"""Classical comparison models on flattened windows.

All three consume the same scaled (n, window, 13) inputs as the
network, flattened time-major/feature-minor, and predict the raw-kW
target directly. Each is written out in full at small-data scale: KNN
is a brute-force distance scan, Bayesian ridge a closed-form posterior
mean, and the forest an ensemble of greedy variance-reduction CART
trees over bootstrap samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ParameterError
from .tensor import RngState


def flatten_windows(inputs: np.ndarray) -> np.ndarray:
    """(n, window, features) -> (n, window*features), time-major feature-minor."""
    if inputs.ndim != 3:
        raise ParameterError(f"expected (n, window, features), got {inputs.shape}")
    return inputs.reshape(inputs.shape[0], -1)


# --- KNN ---------------------------------------------------------------------


def knn_predict(train_x, train_y, query, k: int, classify: bool = False) -> float:
    """Mean (or majority vote) of the k nearest training targets.

    Distance ties break toward the lower training index; vote ties
    toward label 0.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.float64)
    if train_x.shape[0] == 0:
        raise DataError("knn needs a non-empty training set")
    if not 1 <= k <= train_x.shape[0]:
        raise ParameterError(f"k must be in [1, {train_x.shape[0]}], got {k}")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    diff = train_x - query
    dists = (diff * diff).sum(axis=1)
    nearest = np.argsort(dists, kind="stable")[:k]
    targets = train_y[nearest]
    if classify:
        return 1.0 if (targets == 1.0).sum() > k / 2.0 else 0.0
    return float(targets.mean())


def knn_predict_batch(train_x, train_y, queries, k: int, classify: bool = False) -> np.ndarray:
    return np.array([
        knn_predict(train_x, train_y, q, k, classify) for q in np.asarray(queries, dtype=np.float64)
    ])


# --- Bayesian ridge ------------------------------------------------------------


class BayesianRidge:
    """Posterior-mean linear regression with a Gaussian weight prior.

    With centered X and y, weights solve (lam X'X + alpha I) w = lam X'y;
    the intercept re-attaches the training means.
    """

    def __init__(self, alpha: float = 1e-6, lam: float = 1.0):
        if alpha < 0 or lam <= 0:
            raise ParameterError(f"need alpha >= 0 and lam > 0, got {alpha}, {lam}")
        self.alpha = alpha
        self.lam = lam
        self.weights = None
        self.intercept = None
        self._x_mean = None

    def fit(self, x, y) -> "BayesianRidge":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape[0] == 0:
            raise DataError("bayesian ridge needs at least one sample")
        self._x_mean = x.mean(axis=0)
        y_mean = y.mean()
        xc = x - self._x_mean
        yc = y - y_mean
        gram = self.lam * (xc.T @ xc) + self.alpha * np.eye(x.shape[1])
        try:
            self.weights = np.linalg.solve(gram, self.lam * (xc.T @ yc))
        except np.linalg.LinAlgError:
            raise NumericError(
                "singular system; use a prior precision alpha > 0"
            ) from None
        self.intercept = float(y_mean)
        return self

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self._x_mean) @ self.weights + self.intercept


# --- random forest --------------------------------------------------------------


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    feature_subsample: int | None = None    # None -> round(sqrt(d))
    bootstrap: bool = True
    seed: int = 0

    def validate(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ParameterError(
                f"n_trees, max_depth, min_leaf must be >= 1, got "
                f"{self.n_trees}, {self.max_depth}, {self.min_leaf}"
            )


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.value = value


def best_split(x_col: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best threshold of one feature by sum-of-squares reduction.

    Returns (gain, threshold) or None when no split leaves ``min_leaf``
    rows on both sides. Thresholds sit midway between adjacent distinct
    values; rows with value <= threshold go left. Gain ties resolve to
    the smallest left-side count, so results are order-deterministic.
    """
    order = np.argsort(x_col, kind="stable")
    xs = x_col[order]
    ys = y[order]
    m = xs.size
    if m < 2 * min_leaf:
        return None
    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    total_sse = csq[-1] - csum[-1] ** 2 / m
    p = np.arange(min_leaf, m - min_leaf + 1)          # left-side counts
    distinct = xs[p - 1] != xs[p]
    if not distinct.any():
        return None
    left_sse = csq[p - 1] - csum[p - 1] ** 2 / p
    right_sum = csum[-1] - csum[p - 1]
    right_sse = (csq[-1] - csq[p - 1]) - right_sum ** 2 / (m - p)
    gain = np.where(distinct, total_sse - left_sse - right_sse, -np.inf)
    at = int(np.argmax(gain))
    split = p[at]
    return float(gain[at]), (xs[split - 1] + xs[split]) / 2.0


class RegressionTree:
    """Greedy CART regressor with mean-valued leaves."""

    def __init__(self, max_depth: int = 12, min_leaf: int = 2,
                 feature_subsample: int | None = None, rng: RngState | None = None):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.feature_subsample = feature_subsample
        self.rng = rng
        self.root = None

    def fit(self, x, y) -> "RegressionTree":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape[0] < 2:
            raise DataError("tree needs at least two samples")
        self._d = x.shape[1]
        self.root = self._grow(x, y, 0)
        return self

    def _candidate_features(self) -> np.ndarray:
        d = self._d
        m = self.feature_subsample or max(1, round(np.sqrt(d)))
        m = min(m, d)
        if m == d or self.rng is None:
            return np.arange(d)
        return self.rng.permutation(d)[:m]

    def _grow(self, x, y, depth: int) -> _Node:
        node = _Node(float(y.mean()))
        if depth >= self.max_depth or y.size < 2 * self.min_leaf or np.all(y == y[0]):
            return node
        best = None
        for feat in self._candidate_features():
            found = best_split(x[:, feat], y, self.min_leaf)
            if found is not None and (best is None or found[0] > best[0]):
                best = (found[0], int(feat), found[1])
        if best is None or best[0] <= 0.0:
            return node
        _, node.feature, node.threshold = best
        mask = x[:, node.feature] <= node.threshold
        node.left = self._grow(x[mask], y[mask], depth + 1)
        node.right = self._grow(x[~mask], y[~mask], depth + 1)
        return node

    def predict_one(self, row) -> float:
        node = self.root
        while node.left is not None:
            node = node.left if row[node.feature] <= node.threshold else node.right
        return node.value

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.array([self.predict_one(row) for row in x])


class RandomForest:
    """Bagged CART trees; per-tree streams derive from the master seed."""

    def __init__(self, config: ForestConfig):
        config.validate()
        self.config = config
        self.trees: list[RegressionTree] = []

    def fit(self, x, y) -> "RandomForest":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape[0] < 2:
            raise DataError("forest needs at least two samples")
        master = RngState(self.config.seed)
        n = x.shape[0]
        self.trees = []
        for i in range(self.config.n_trees):
            tree_rng = master.spawn(i)
            if self.config.bootstrap:
                idx = tree_rng.integers(n, n)
                bx, by = x[idx], y[idx]
            else:
                bx, by = x, y
            tree = RegressionTree(self.config.max_depth, self.config.min_leaf,
                                  self.config.feature_subsample, tree_rng)
            self.trees.append(tree.fit(bx, by))
        return self

    def predict(self, x) -> np.ndarray:
        preds = np.stack([tree.predict(x) for tree in self.trees])
        return preds.mean(axis=0)
