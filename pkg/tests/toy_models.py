"""Small hand-written predictors with known closed-form behavior."""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from tabular_xai_eval.models import as_array


@dataclass
class ScoreModel:
    """Binary model whose class-1 column is ``score(X)`` and class 0 its complement.

    Scores are not clipped, so affine scores stay exactly affine.
    """

    score: Callable[[np.ndarray], np.ndarray]
    n_features: int
    n_classes: int = 2
    calls: int = field(default=0, compare=False)

    def predict_proba(self, X):
        X = as_array(X)
        self.calls += X.shape[0]
        s = self.score(X)
        return np.column_stack([1.0 - s, s])


def affine_model(w, b: float = 0.5) -> ScoreModel:
    w = np.asarray(w, dtype=float)
    return ScoreModel(score=lambda X: X @ w + b, n_features=len(w))


def constant_model(p: float, n_features: int) -> ScoreModel:
    return ScoreModel(score=lambda X: np.full(X.shape[0], p), n_features=n_features)


def random_game_model(n_features: int, seed: int) -> ScoreModel:
    """Smooth nonlinear class-1 score with pairwise interactions, bounded in (0, 1)."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=n_features)
    pair = rng.normal(scale=0.5, size=(n_features, n_features))

    def score(X):
        z = X @ w + np.einsum("ni,ij,nj->n", X, pair, X)
        return 1.0 / (1.0 + np.exp(-z))

    return ScoreModel(score=score, n_features=n_features)
