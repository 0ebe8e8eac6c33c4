"""CART trees, random forests and second-order gradient boosting."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import expit, softmax

from .data import FeatureMatrix
from .models import ModelError, as_array, check_training_input
from .seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

LEAF = -1
BOOST_LAMBDA = 1.0
MIN_CHILD_WEIGHT = 1.0


@dataclass(frozen=True)
class DecisionTree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf.

    Rows go left when ``x[feature] <= threshold``. ``value`` holds the
    class-probability vector (classification) or the single leaf weight
    (boosting) of every node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Return the leaf index reached by every row."""
        nodes = np.zeros(X.shape[0], dtype=int)
        active = self.feature[nodes] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            current = nodes[rows]
            go_left = X[rows, self.feature[current]] <= self.threshold[current]
            nodes[rows] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[nodes] != LEAF
        return nodes

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DecisionTree":
        return cls(
            feature=np.asarray(data["feature"], dtype=int),
            threshold=np.asarray(data["threshold"], dtype=float),
            left=np.asarray(data["left"], dtype=int),
            right=np.asarray(data["right"], dtype=int),
            value=np.asarray(data["value"], dtype=float),
        )


@dataclass
class _TreeBuilder:
    """Greedy depth-first tree growth shared by both split criteria."""

    X: np.ndarray
    max_depth: int | None
    n_candidate_features: int
    rng: np.random.Generator
    _nodes: list[list[Any]] = field(default_factory=list)

    def build(self, rows: np.ndarray) -> DecisionTree:
        self._nodes = []
        self._grow(rows, depth=0)
        return DecisionTree(
            feature=np.array([n[0] for n in self._nodes], dtype=int),
            threshold=np.array([n[1] for n in self._nodes], dtype=float),
            left=np.array([n[2] for n in self._nodes], dtype=int),
            right=np.array([n[3] for n in self._nodes], dtype=int),
            value=np.array([n[4] for n in self._nodes], dtype=float),
        )

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        node_id = len(self._nodes)
        self._nodes.append([LEAF, 0.0, LEAF, LEAF, self.leaf_value(rows)])
        if self.max_depth is not None and depth >= self.max_depth:
            return node_id
        split = self._find_split(rows)
        if split is None:
            return node_id
        feature, threshold = split
        goes_left = self.X[rows, feature] <= threshold
        left_id = self._grow(rows[goes_left], depth + 1)
        right_id = self._grow(rows[~goes_left], depth + 1)
        self._nodes[node_id][:4] = [feature, threshold, left_id, right_id]
        return node_id

    def _find_split(self, rows: np.ndarray) -> tuple[int, float] | None:
        """Scan a random feature subset; keep drawing past it until a valid split exists."""
        if not self.splittable(rows):
            return None
        order = self.rng.permutation(self.X.shape[1])
        best: tuple[float, int, float] | None = None
        for position, feature in enumerate(order):
            if position >= self.n_candidate_features and best is not None:
                break
            candidate = self._best_threshold(rows, int(feature))
            if candidate is None:
                continue
            score, threshold = candidate
            if best is None or score > best[0] or (score == best[0] and feature < best[1]):
                best = (score, int(feature), threshold)
        if best is None or not self.accept(best[0]):
            return None
        return best[1], best[2]

    def _best_threshold(self, rows: np.ndarray, feature: int) -> tuple[float, float] | None:
        column = self.X[rows, feature]
        order = np.argsort(column, kind="stable")
        xs = column[order]
        if xs[0] == xs[-1]:
            return None
        scores = self.split_scores(rows[order])
        valid = (xs[1:] > xs[:-1]) & np.isfinite(scores)
        if not valid.any():
            return None
        scores = np.where(valid, scores, -np.inf)
        cut = int(np.argmax(scores))
        threshold = (xs[cut] + xs[cut + 1]) / 2.0
        if threshold >= xs[cut + 1]:
            threshold = xs[cut]
        return float(scores[cut]), float(threshold)

    # criterion hooks
    def leaf_value(self, rows: np.ndarray) -> list[float]:
        raise NotImplementedError

    def splittable(self, rows: np.ndarray) -> bool:
        raise NotImplementedError

    def split_scores(self, sorted_rows: np.ndarray) -> np.ndarray:
        """Score of cutting after each of the first n-1 sorted rows (-inf if invalid)."""
        raise NotImplementedError

    def accept(self, score: float) -> bool:
        raise NotImplementedError


@dataclass
class _GiniBuilder(_TreeBuilder):
    """Classification tree: maximizes the weighted Gini impurity decrease."""

    Y: np.ndarray = None
    min_split: int = 2
    min_leaf: int = 1
    _parent_impurity: float = 0.0

    def leaf_value(self, rows: np.ndarray) -> list[float]:
        counts = self.Y[rows].sum(axis=0)
        return (counts / counts.sum()).tolist()

    def splittable(self, rows: np.ndarray) -> bool:
        if len(rows) < self.min_split or len(rows) < 2 * self.min_leaf:
            return False
        p = self.Y[rows].mean(axis=0)
        self._parent_impurity = 1.0 - float(np.sum(p**2))
        return self._parent_impurity > 0.0

    def split_scores(self, sorted_rows: np.ndarray) -> np.ndarray:
        counts = np.cumsum(self.Y[sorted_rows], axis=0)
        n = len(sorted_rows)
        total = counts[-1]
        left = counts[:-1]
        right = total - left
        n_left = np.arange(1, n, dtype=float)
        n_right = n - n_left
        gini_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
        weighted = (n_left * gini_left + n_right * gini_right) / n
        decrease = self._parent_impurity - weighted
        ok = (n_left >= self.min_leaf) & (n_right >= self.min_leaf)
        return np.where(ok, decrease, -np.inf)

    def accept(self, score: float) -> bool:
        # zero-gain splits are allowed so impure nodes keep splitting (e.g. XOR)
        return score >= -1e-12


@dataclass
class _NewtonBuilder(_TreeBuilder):
    """Regression tree on gradients/hessians with L2-regularized leaf weights."""

    grad: np.ndarray = None
    hess: np.ndarray = None
    reg_lambda: float = BOOST_LAMBDA
    min_child_weight: float = MIN_CHILD_WEIGHT
    _parent_score: float = 0.0

    def leaf_value(self, rows: np.ndarray) -> list[float]:
        return [-float(self.grad[rows].sum()) / (float(self.hess[rows].sum()) + self.reg_lambda)]

    def splittable(self, rows: np.ndarray) -> bool:
        G, H = float(self.grad[rows].sum()), float(self.hess[rows].sum())
        self._parent_score = G * G / (H + self.reg_lambda)
        return len(rows) >= 2 and H >= 2 * self.min_child_weight

    def split_scores(self, sorted_rows: np.ndarray) -> np.ndarray:
        g = np.cumsum(self.grad[sorted_rows])
        h = np.cumsum(self.hess[sorted_rows])
        g_left, h_left = g[:-1], h[:-1]
        g_right, h_right = g[-1] - g_left, h[-1] - h_left
        gain = (
            g_left**2 / (h_left + self.reg_lambda)
            + g_right**2 / (h_right + self.reg_lambda)
            - self._parent_score
        )
        ok = (h_left >= self.min_child_weight) & (h_right >= self.min_child_weight)
        return np.where(ok, gain, -np.inf)

    def accept(self, score: float) -> bool:
        return score > 0.0


@dataclass(frozen=True)
class ForestParams:
    """Random forest hyperparameters."""

    n_trees: int = 100
    max_depth: int | None = None
    max_features: str | int | None = "sqrt"
    min_split: int = 2
    min_leaf: int = 1
    bootstrap: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "max_features": self.max_features,
            "min_split": self.min_split,
            "min_leaf": self.min_leaf,
            "bootstrap": self.bootstrap,
        }


def resolve_max_features(rule: str | int | None, n_features: int) -> int:
    """Per-node candidate feature count: ceil(sqrt(d)), a capped fixed count, or all."""
    if rule is None:
        return n_features
    if rule == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    if isinstance(rule, int) and rule > 0:
        return min(rule, n_features)
    raise ModelError(f"Invalid max_features rule: {rule!r}")


@dataclass(frozen=True)
class ForestModel:
    """Bagged Gini trees; prediction is the mean leaf distribution."""

    trees: tuple[DecisionTree, ...]
    tree_seeds: tuple[int, ...]
    max_features: str | int | None
    n_classes: int
    n_features: int

    def predict_proba(self, X: np.ndarray | FeatureMatrix) -> np.ndarray:
        X = as_array(X)
        if not self.trees:
            return np.full((X.shape[0], self.n_classes), 1.0 / self.n_classes)
        total = np.zeros((X.shape[0], self.n_classes))
        for tree in self.trees:
            total += tree.predict_value(X)
        return total / len(self.trees)

    def to_dict(self) -> dict[str, Any]:
        return {
            "trees": [tree.to_dict() for tree in self.trees],
            "tree_seeds": list(self.tree_seeds),
            "max_features": self.max_features,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ForestModel":
        return cls(
            trees=tuple(DecisionTree.from_dict(t) for t in data["trees"]),
            tree_seeds=tuple(int(s) for s in data["tree_seeds"]),
            max_features=data["max_features"],
            n_classes=int(data["n_classes"]),
            n_features=int(data["n_features"]),
        )


def train_forest(
    X: np.ndarray | FeatureMatrix,
    y: np.ndarray,
    params: ForestParams,
    seed: int = 0,
    n_classes: int | None = None,
) -> ForestModel:
    """Fit a random forest of bootstrap-resampled Gini trees.

    Raises:
        ModelError: If ``2 * min_leaf > n`` or the input is degenerate
    """
    X = as_array(X)
    y = np.asarray(y, dtype=int)
    k = check_training_input(X, y, n_classes)
    n, d = X.shape
    if 2 * params.min_leaf > n:
        raise ModelError(f"min_leaf={params.min_leaf} too large for {n} training rows")
    Y = np.eye(k)[y]
    m = resolve_max_features(params.max_features, d)

    trees, seeds = [], []
    for t in range(params.n_trees):
        tree_seed = derive_seed(seed, "tree", t)
        rng = np.random.default_rng(tree_seed)
        rows = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        builder = _GiniBuilder(
            X=X, max_depth=params.max_depth, n_candidate_features=m, rng=rng,
            Y=Y, min_split=params.min_split, min_leaf=params.min_leaf,
        )
        trees.append(builder.build(rows))
        seeds.append(tree_seed)
    logger.debug("Trained forest: %d trees, max_features=%d of %d", len(trees), m, d)
    return ForestModel(
        trees=tuple(trees), tree_seeds=tuple(seeds), max_features=params.max_features,
        n_classes=k, n_features=d,
    )


@dataclass(frozen=True)
class BoostedParams:
    """Gradient boosting hyperparameters."""

    max_depth: int = 3
    learning_rate: float = 0.1
    n_trees: int = 100
    subsample: float = 1.0
    colsample: float = 1.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "n_trees": self.n_trees,
            "subsample": self.subsample,
            "colsample": self.colsample,
        }


@dataclass(frozen=True)
class BoostedModel:
    """Additive tree ensemble on logits.

    Binary models keep one tree per round on the class-1 log-odds; softmax
    models keep one tree per class per round.
    """

    rounds: tuple[tuple[DecisionTree, ...], ...]
    base_score: np.ndarray
    learning_rate: float
    objective: str
    n_classes: int
    n_features: int

    def margins(self, X: np.ndarray | FeatureMatrix) -> np.ndarray:
        X = as_array(X)
        out = np.tile(self.base_score, (X.shape[0], 1))
        for trees in self.rounds:
            for column, tree in enumerate(trees):
                out[:, column] += self.learning_rate * tree.predict_value(X)[:, 0]
        return out

    def predict_proba(self, X: np.ndarray | FeatureMatrix) -> np.ndarray:
        margins = self.margins(X)
        if self.objective == "binary-logistic":
            p = expit(margins[:, 0])
            return np.column_stack([1.0 - p, p])
        return softmax(margins, axis=1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rounds": [[tree.to_dict() for tree in trees] for trees in self.rounds],
            "base_score": self.base_score.tolist(),
            "learning_rate": self.learning_rate,
            "objective": self.objective,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BoostedModel":
        return cls(
            rounds=tuple(
                tuple(DecisionTree.from_dict(t) for t in trees) for trees in data["rounds"]
            ),
            base_score=np.asarray(data["base_score"], dtype=float),
            learning_rate=float(data["learning_rate"]),
            objective=data["objective"],
            n_classes=int(data["n_classes"]),
            n_features=int(data["n_features"]),
        )


def train_boosted(
    X: np.ndarray | FeatureMatrix,
    y: np.ndarray,
    params: BoostedParams,
    seed: int = 0,
    n_classes: int | None = None,
) -> BoostedModel:
    """Fit gradient-boosted trees with Newton leaf weights.

    Binary targets use the logistic loss, K > 2 the softmax loss. Every round
    draws its row and column subsample from ``derive_seed(seed, "round", r)``.

    Raises:
        ModelError: On invalid rates or a degenerate target
    """
    if not 0 < params.learning_rate <= 1:
        raise ModelError(f"learning_rate must be in (0, 1], got {params.learning_rate}")
    if not (0 < params.subsample <= 1 and 0 < params.colsample <= 1):
        raise ModelError("subsample and colsample must be in (0, 1]")
    X = as_array(X)
    y = np.asarray(y, dtype=int)
    k = check_training_input(X, y, n_classes)
    n, d = X.shape
    priors = np.clip(np.bincount(y, minlength=k) / n, 1e-12, None)
    binary = k == 2
    if binary:
        base_score = np.array([np.log(priors[1] / priors[0])])
        objective = "binary-logistic"
    else:
        base_score = np.log(priors)
        objective = "softmax"
    Y = np.eye(k)[y]

    n_rows = max(1, int(round(params.subsample * n)))
    n_cols = max(1, int(round(params.colsample * d)))
    margins = np.tile(base_score, (n, 1))
    rounds = []
    for r in range(params.n_trees):
        rng = rng_for(seed, "round", r)
        rows = np.sort(rng.choice(n, size=n_rows, replace=False))
        columns = np.sort(rng.choice(d, size=n_cols, replace=False))
        if binary:
            p = expit(margins[:, 0])
            grads = [(p - Y[:, 1])]
            hesses = [np.maximum(p * (1.0 - p), 1e-16)]
        else:
            p = softmax(margins, axis=1)
            grads = [p[:, c] - Y[:, c] for c in range(k)]
            hesses = [np.maximum(2.0 * p[:, c] * (1.0 - p[:, c]), 1e-16) for c in range(k)]

        trees = []
        for column_index, (g, h) in enumerate(zip(grads, hesses)):
            builder = _NewtonBuilder(
                X=X[:, columns], max_depth=params.max_depth,
                n_candidate_features=len(columns), rng=rng, grad=g, hess=h,
            )
            local = builder.build(rows)
            global_feature = columns[np.maximum(local.feature, 0)]
            tree = DecisionTree(
                feature=np.where(local.feature == LEAF, LEAF, global_feature),
                threshold=local.threshold, left=local.left, right=local.right, value=local.value,
            )
            trees.append(tree)
            margins[:, column_index] += params.learning_rate * tree.predict_value(X)[:, 0]
        rounds.append(tuple(trees))

    logger.debug("Trained boosted model: %d rounds, objective=%s", len(rounds), objective)
    return BoostedModel(
        rounds=tuple(rounds), base_score=base_score, learning_rate=float(params.learning_rate),
        objective=objective, n_classes=k, n_features=d,
    )
