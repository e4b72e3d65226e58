"""Random forest regression built on CART trees.

Trees use variance-reduction splits and are expanded until a node holds
fewer than two samples (or is pure). The forest bootstraps rows and
subsamples ceil(sqrt(p)) features per node. All randomness comes from
seeds derived with splitmix64, so fits are reproducible and independent
of platform RNG details.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .seeds import derive_seed


@dataclass
class _Node:
    value: float
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value}
        return {
            "value": self.value,
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "_Node":
        node = cls(value=d["value"])
        if "feature" in d:
            node.feature = d["feature"]
            node.threshold = d["threshold"]
            node.left = cls.from_dict(d["left"])
            node.right = cls.from_dict(d["right"])
        return node


def _best_split(X: np.ndarray, y: np.ndarray, feature_ids: np.ndarray):
    """Lowest weighted child variance over candidate features; None if no split.

    Vectorized over all candidate features at once; exact cost ties resolve
    to the earliest feature in ``feature_ids`` and the earliest threshold.
    """
    n = y.size
    cols = X[:, feature_ids]  # (n, k)
    order = np.argsort(cols, axis=0, kind="stable")
    xs = np.take_along_axis(cols, order, axis=0)
    ys = y[order]
    s1 = np.cumsum(ys, axis=0)
    s2 = np.cumsum(ys * ys, axis=0)
    sizes = np.arange(1, n, dtype=np.float64)[:, None]
    left1, left2 = s1[:-1], s2[:-1]
    right1, right2 = s1[-1] - left1, s2[-1] - left2
    cost = (left2 - left1 * left1 / sizes) + (right2 - right1 * right1 / (n - sizes))
    cost = np.where(np.diff(xs, axis=0) > 0, cost, np.inf)
    rows = np.argmin(cost, axis=0)
    per_feature = cost[rows, np.arange(cost.shape[1])]
    j = int(np.argmin(per_feature))
    if not np.isfinite(per_feature[j]):
        return None
    row = int(rows[j])
    threshold = float((xs[row, j] + xs[row + 1, j]) / 2.0)
    return float(per_feature[j]), int(feature_ids[j]), threshold


def _grow(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, max_features: int) -> _Node:
    node = _Node(value=float(y.mean()))
    if y.size < 2 or np.all(y == y[0]):
        return node
    p = X.shape[1]
    if max_features < p:
        feature_ids = np.sort(rng.choice(p, size=max_features, replace=False))
    else:
        feature_ids = np.arange(p)
    split = _best_split(X, y, feature_ids)
    if split is None:
        return node
    _, j, threshold = split
    mask = X[:, j] <= threshold
    node.feature = j
    node.threshold = threshold
    node.left = _grow(X[mask], y[mask], rng, max_features)
    node.right = _grow(X[~mask], y[~mask], rng, max_features)
    return node


def _predict_node(node: _Node, row: np.ndarray) -> float:
    while not node.is_leaf:
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node.value


@dataclass
class RegressionTree:
    root: _Node | None = None

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int, max_features: int | None = None):
        rng = np.random.default_rng(seed)
        self.root = _grow(X, y, rng, max_features or X.shape[1])
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([_predict_node(self.root, row) for row in np.atleast_2d(X)])


@dataclass
class RandomForestRegressor:
    n_trees: int = 100
    seed: int = 0
    bootstrap: bool = True
    trees: list = field(default_factory=list)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForestRegressor":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
            raise InvalidInput("X must be (n, p) with matching y of length n")
        if self.n_trees < 1:
            raise InvalidInput("need at least one tree")
        n, p = X.shape
        max_features = max(1, math.ceil(math.sqrt(p)))
        self.trees = []
        for i in range(self.n_trees):
            tree_seed = derive_seed(self.seed, "tree", i)
            if self.bootstrap:
                rng = np.random.default_rng(derive_seed(self.seed, "bootstrap", i))
                idx = rng.integers(0, n, size=n)
            else:
                idx = np.arange(n)
            tree = RegressionTree().fit(X[idx], y[idx], seed=tree_seed, max_features=max_features)
            self.trees.append(tree)
        return self

    def tree_predictions(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n_rows) matrix of individual tree predictions."""
        return np.stack([tree.predict(X) for tree in self.trees])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "seed": self.seed,
            "bootstrap": self.bootstrap,
            "trees": [t.root.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForestRegressor":
        forest = cls(n_trees=d["n_trees"], seed=d["seed"], bootstrap=d["bootstrap"])
        forest.trees = [RegressionTree(root=_Node.from_dict(t)) for t in d["trees"]]
        return forest
