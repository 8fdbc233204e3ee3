"""Bagged CART regression forest.

Each tree is grown on a bootstrap resample, choosing at every node the split
with the largest reduction in squared error among `mtry` randomly drawn
features. Leaves store the mean training target, so forest predictions can
never leave the range of the training labels.
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from utils.errors import DimensionMismatchError, RejectedInputError

logger = logging.getLogger(__name__)

LEAF = -1


@dataclass
class RegressionTree:
    """Flat preorder node arrays; feature == LEAF marks a leaf"""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_features: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] != LEAF
        while np.any(active):
            rows = np.nonzero(active)[0]
            current = node[rows]
            go_left = X[rows, self.feature[current]] <= self.threshold[current]
            node[rows] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[node] != LEAF
        return self.value[node]


@dataclass
class ForestConfig:
    n_trees: int = 100
    # 0 selects ceil(p / 3)
    mtry: int = 0
    min_leaf: int = 5
    # 0 means unbounded
    max_depth: int = 0
    bootstrap: bool = True
    seed: int = 42
    n_jobs: int = 1

    @classmethod
    def from_config(cls, forest_cfg, seed: int) -> "ForestConfig":
        return cls(n_trees=forest_cfg.n_trees, mtry=forest_cfg.mtry, min_leaf=forest_cfg.min_leaf,
                   max_depth=forest_cfg.max_depth, bootstrap=forest_cfg.bootstrap, seed=seed,
                   n_jobs=forest_cfg.n_jobs)


@dataclass
class Forest:
    trees: List[RegressionTree]
    tree_seeds: List[int] = field(default_factory=list)
    mtry: int = 1
    n_features: int = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatchError(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)


class _TreeBuilder:
    def __init__(self, X: np.ndarray, y: np.ndarray, mtry: int, min_leaf: int, max_depth: int,
                 rng: np.random.Generator):
        self.X, self.y = X, y
        self.mtry, self.min_leaf, self.max_depth = mtry, min_leaf, max_depth
        self.rng = rng
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def _new_node(self, value: float) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        return len(self.feature) - 1

    def _best_split(self, idx: np.ndarray):
        features = self.rng.choice(self.X.shape[1], size=self.mtry, replace=False)
        Xn = self.X[np.ix_(idx, features)]
        yn = self.y[idx] - self.y[idx].mean()
        m = len(idx)

        order = np.argsort(Xn, axis=0, kind="mergesort")
        xs = np.take_along_axis(Xn, order, axis=0)
        ys = yn[order]
        left_sum = np.cumsum(ys, axis=0)[:-1]
        total = left_sum[-1] + ys[-1] if m > 1 else ys[0]
        n_left = np.arange(1, m, dtype=float)[:, None]
        n_right = m - n_left

        # maximizing this is equivalent to minimizing the children's squared error
        score = left_sum ** 2 / n_left + (total - left_sum) ** 2 / n_right
        valid = (xs[1:] > xs[:-1]) & (n_left >= self.min_leaf) & (n_right >= self.min_leaf)
        if not np.any(valid):
            return None
        score = np.where(valid, score, -np.inf)
        flat = int(np.argmax(score))
        pos, col = divmod(flat, score.shape[1])
        gain = score[pos, col] - total[col] ** 2 / m
        if not gain > 1e-12 * max(1.0, float(np.sum(yn ** 2))):
            return None

        lower, upper = xs[pos, col], xs[pos + 1, col]
        threshold = 0.5 * (lower + upper)
        if threshold >= upper:
            threshold = lower
        column = order[:, col]
        return int(features[col]), float(threshold), idx[column[:pos + 1]], idx[column[pos + 1:]]

    def build(self, idx: np.ndarray, depth: int = 0) -> int:
        targets = self.y[idx]
        node = self._new_node(float(targets.mean()))
        if (len(idx) < 2 * self.min_leaf or (self.max_depth and depth >= self.max_depth)
                or np.all(targets == targets[0])):
            return node
        split = self._best_split(idx)
        if split is None:
            return node
        feature, threshold, left_idx, right_idx = split
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = self.build(left_idx, depth + 1)
        self.right[node] = self.build(right_idx, depth + 1)
        return node

    def tree(self) -> RegressionTree:
        return RegressionTree(
            feature=np.array(self.feature, dtype=int),
            threshold=np.array(self.threshold, dtype=float),
            left=np.array(self.left, dtype=int),
            right=np.array(self.right, dtype=int),
            value=np.array(self.value, dtype=float),
            n_features=self.X.shape[1],
        )


def grow_tree(X: np.ndarray, y: np.ndarray, mtry: int, min_leaf: int, max_depth: int, seed: int,
              bootstrap: bool = True) -> RegressionTree:
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
    builder = _TreeBuilder(X, y, mtry, min_leaf, max_depth, rng)
    builder.build(np.sort(idx))
    return builder.tree()


def train_forest(X: np.ndarray, y: np.ndarray, cfg: Optional[ForestConfig] = None) -> Forest:
    """Fit cfg.n_trees bagged regression trees"""
    cfg = cfg or ForestConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise RejectedInputError(f"need a non-empty training set with one label per row, got {X.shape} and {y.shape}")
    if cfg.n_trees < 1:
        raise RejectedInputError("a forest needs at least one tree")
    p = X.shape[1]
    mtry = cfg.mtry if cfg.mtry > 0 else math.ceil(p / 3)
    mtry = min(mtry, p)
    seeds = [int(s) for s in np.random.default_rng(cfg.seed).integers(0, 2 ** 63 - 1, size=cfg.n_trees)]

    def grow(seed):
        return grow_tree(X, y, mtry, max(1, cfg.min_leaf), cfg.max_depth, seed, cfg.bootstrap)

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            trees = list(pool.map(grow, seeds))
    else:
        trees = [grow(s) for s in seeds]
    logger.info(f"Forest trained: {len(trees)} trees, mtry={mtry}, "
                f"mean nodes {np.mean([t.n_nodes for t in trees]):.0f}")
    return Forest(trees=trees, tree_seeds=seeds, mtry=mtry, n_features=p)


def predict_forest(forest: Forest, x: np.ndarray):
    """Mean of the tree predictions: a scalar for one vector, an array for rows"""
    x = np.asarray(x, dtype=float)
    out = forest.predict(x)
    return float(out[0]) if x.ndim == 1 else out
