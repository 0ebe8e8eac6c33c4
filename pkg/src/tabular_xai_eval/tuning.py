"""Hyperparameter search spaces, model dispatch and seeded random search."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from .data import FeatureMatrix, stratified_split
from .models import ModelError, Predictor, as_array, eval_scores, predict, train_logistic
from .seeding import derive_seed
from .trees import BoostedParams, ForestParams, train_boosted, train_forest

logger = logging.getLogger(__name__)

FAMILIES = ("logistic", "forest", "boosted")
VALIDATION_RATIO = 0.8
LOGISTIC_MAX_ITER = 1000

# Search spaces
LOGISTIC_C_RANGE = (0.1, 10.0)
FOREST_N_TREES = (25, 50, 75, 100, 125, 150)
FOREST_MAX_DEPTH = (None, 3, 4, 5, 6, 7)
FOREST_MAX_FEATURES = ("sqrt", 5, 10)
FOREST_MIN_SPLIT = (2, 3, 4, 5)
FOREST_MIN_LEAF = (1, 2)
BOOSTED_MAX_DEPTH = (2, 3, 4)
BOOSTED_LEARNING_RATE = (0.03, 0.10)
BOOSTED_N_TREES = (50, 300)
BOOSTED_SUBSAMPLE = (0.7, 1.0)
BOOSTED_COLSAMPLE = (0.7, 1.0)

# Fixed parameters used when a family is trained without tuning.
DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "logistic": {"C": 1.0},
    "forest": {
        "n_trees": 50, "max_depth": 6, "max_features": "sqrt", "min_split": 2, "min_leaf": 1,
    },
    "boosted": {
        "max_depth": 3, "learning_rate": 0.1, "n_trees": 100, "subsample": 1.0, "colsample": 1.0,
    },
}


@dataclass(frozen=True)
class TrialResult:
    """One random-search trial."""

    index: int
    params: dict[str, Any]
    f1: float
    seed: int

    def to_dict(self) -> dict[str, Any]:
        return {"index": self.index, "params": self.params, "f1": self.f1, "seed": self.seed}


@dataclass(frozen=True)
class TuneResult:
    """Best parameters plus every trial, in trial order."""

    best_index: int
    trials: tuple[TrialResult, ...]

    @property
    def best_trial(self) -> TrialResult:
        return self.trials[self.best_index]

    @property
    def best_params(self) -> dict[str, Any]:
        return self.best_trial.params


def sample_params(family: str, rng: np.random.Generator) -> dict[str, Any]:
    """Draw one configuration uniformly from the family's search space."""
    if family == "logistic":
        return {"C": float(rng.uniform(*LOGISTIC_C_RANGE))}
    if family == "forest":
        return {
            "n_trees": int(rng.choice(FOREST_N_TREES)),
            "max_depth": FOREST_MAX_DEPTH[int(rng.integers(len(FOREST_MAX_DEPTH)))],
            "max_features": FOREST_MAX_FEATURES[int(rng.integers(len(FOREST_MAX_FEATURES)))],
            "min_split": int(rng.choice(FOREST_MIN_SPLIT)),
            "min_leaf": int(rng.choice(FOREST_MIN_LEAF)),
        }
    if family == "boosted":
        return {
            "max_depth": int(rng.choice(BOOSTED_MAX_DEPTH)),
            "learning_rate": float(rng.uniform(*BOOSTED_LEARNING_RATE)),
            "n_trees": int(rng.integers(BOOSTED_N_TREES[0], BOOSTED_N_TREES[1] + 1)),
            "subsample": float(rng.uniform(*BOOSTED_SUBSAMPLE)),
            "colsample": float(rng.uniform(*BOOSTED_COLSAMPLE)),
        }
    raise ModelError(f"Unknown model family: {family}")


def train_model(
    family: str,
    X: np.ndarray | FeatureMatrix,
    y: np.ndarray,
    params: dict[str, Any],
    seed: int = 0,
    n_classes: int | None = None,
) -> Predictor:
    """Train one model of ``family`` with explicit parameters.

    Raises:
        ModelError: For an unknown family or invalid parameters
    """
    try:
        if family == "logistic":
            return train_logistic(
                X, y, C=params["C"], max_iter=params.get("max_iter", LOGISTIC_MAX_ITER),
                n_classes=n_classes,
            )
        if family == "forest":
            return train_forest(X, y, ForestParams(**params), seed=seed, n_classes=n_classes)
        if family == "boosted":
            return train_boosted(X, y, BoostedParams(**params), seed=seed, n_classes=n_classes)
    except (KeyError, TypeError) as e:
        raise ModelError(f"Invalid parameters for {family}: {e}")
    raise ModelError(f"Unknown model family: {family}")


def tune(
    family: str,
    X: np.ndarray | FeatureMatrix,
    y: np.ndarray,
    n_trials: int = 30,
    seed: int = 0,
    n_classes: int | None = None,
    parallelism: int = 1,
) -> TuneResult:
    """Seeded uniform random search scored by validation macro-F1.

    Trials are evaluated on one stratified 80/20 split of the training data.
    Each trial draws its parameters and training seed from
    ``derive_seed(seed, family, index)``, so results do not depend on
    ``parallelism``. Ties go to the earlier trial.

    Raises:
        ModelError: If ``n_trials < 1`` or the family is unknown
    """
    if n_trials < 1:
        raise ModelError(f"n_trials must be at least 1, got {n_trials}")
    if family not in FAMILIES:
        raise ModelError(f"Unknown model family: {family}")
    X = as_array(X)
    y = np.asarray(y, dtype=int)
    k = int(n_classes) if n_classes is not None else int(y.max()) + 1
    split = stratified_split(y, VALIDATION_RATIO, seed=derive_seed(seed, "validation"))

    def run_trial(index: int) -> TrialResult:
        trial_seed = derive_seed(seed, family, index)
        params = sample_params(family, np.random.default_rng(trial_seed))
        model = train_model(family, X[split.train], y[split.train], params, trial_seed, k)
        f1 = eval_scores(y[split.test], predict(model, X[split.test]), k).f1
        logger.debug("%s trial %d: f1=%.4f params=%s", family, index, f1, params)
        return TrialResult(index=index, params=params, f1=f1, seed=trial_seed)

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        trials = tuple(pool.map(run_trial, range(n_trials)))

    best = trials[0]
    for trial in trials[1:]:
        if trial.f1 > best.f1:
            best = trial
    logger.info("Tuned %s: best trial %d with f1=%.4f", family, best.index, best.f1)
    return TuneResult(best_index=best.index, trials=trials)
