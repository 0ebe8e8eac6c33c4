"""Probabilistic classifier contract, logistic regression and scoring."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol, runtime_checkable

import numpy as np
from scipy.special import logsumexp, softmax
from sklearn.metrics import accuracy_score, precision_recall_fscore_support

from .data import FeatureMatrix

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
GRADIENT_TOLERANCE = 1e-6


class ModelError(Exception):
    """Exception raised for invalid training input or model documents."""

    pass


@runtime_checkable
class Predictor(Protocol):
    """Anything that maps an n-by-d matrix to n-by-K class probabilities."""

    n_classes: int
    n_features: int

    def predict_proba(self, X: np.ndarray | FeatureMatrix) -> np.ndarray:
        ...


def as_array(X: np.ndarray | FeatureMatrix) -> np.ndarray:
    """Return a 2-D float array for a matrix or a single sample."""
    values = X.values if isinstance(X, FeatureMatrix) else X
    values = np.asarray(values, dtype=float)
    return values[None, :] if values.ndim == 1 else values


def predict(model: Predictor, X: np.ndarray | FeatureMatrix) -> np.ndarray:
    """Return argmax class indices (lowest index wins ties)."""
    return np.argmax(model.predict_proba(X), axis=1)


def check_training_input(X: np.ndarray, y: np.ndarray, n_classes: int | None) -> int:
    """Validate features/labels and return the class count.

    Raises:
        ModelError: For non-finite features, length mismatch, or a single class
    """
    if X.shape[0] != len(y):
        raise ModelError(f"X has {X.shape[0]} rows but y has {len(y)} labels")
    if not np.isfinite(X).all():
        raise ModelError("Feature matrix contains non-finite values")
    if len(np.unique(y)) < 2:
        raise ModelError("Degenerate target: training labels contain a single class")
    k = int(n_classes) if n_classes is not None else int(np.max(y)) + 1
    if np.max(y) >= k or np.min(y) < 0:
        raise ModelError(f"Labels must lie in [0, {k})")
    return k


@dataclass(frozen=True)
class LogisticModel:
    """Multinomial logistic regression with one weight row per class."""

    weights: np.ndarray
    bias: np.ndarray
    C: float
    n_iter: int = 0

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def predict_proba(self, X: np.ndarray | FeatureMatrix) -> np.ndarray:
        logits = as_array(X) @ self.weights.T + self.bias
        return softmax(logits, axis=1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "C": self.C,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LogisticModel":
        return cls(
            weights=np.asarray(data["weights"], dtype=float),
            bias=np.asarray(data["bias"], dtype=float),
            C=float(data["C"]),
            n_iter=int(data.get("n_iter", 0)),
        )


def logistic_objective(
    weights: np.ndarray,
    bias: np.ndarray,
    X: np.ndarray,
    Y: np.ndarray,
    C: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed cross-entropy plus ``||W||^2 / (2C)`` and its gradient.

    Args:
        weights: K-by-d weight matrix
        bias: Length-K intercepts (unpenalized)
        X: n-by-d features
        Y: n-by-K one-hot targets
        C: Inverse regularization strength

    Returns:
        Tuple of (objective value, gradient w.r.t. weights, gradient w.r.t. bias)
    """
    logits = X @ weights.T + bias
    log_norm = logsumexp(logits, axis=1)
    value = float(np.sum(log_norm - np.sum(Y * logits, axis=1)))
    value += float(np.sum(weights**2)) / (2.0 * C)
    residual = np.exp(logits - log_norm[:, None]) - Y
    grad_w = residual.T @ X + weights / C
    grad_b = residual.sum(axis=0)
    return value, grad_w, grad_b


def train_logistic(
    X: np.ndarray | FeatureMatrix,
    y: np.ndarray,
    C: float,
    max_iter: int = 1000,
    n_classes: int | None = None,
) -> LogisticModel:
    """Fit L2-regularized multinomial logistic regression.

    Full-batch gradient descent with Armijo backtracking; stops when the
    gradient infinity-norm drops below 1e-6 or after ``max_iter`` steps.

    Raises:
        ModelError: If ``C <= 0``, features are non-finite, or y has one class
    """
    if C <= 0:
        raise ModelError(f"Regularization strength C must be positive, got {C}")
    X = as_array(X)
    y = np.asarray(y, dtype=int)
    k = check_training_input(X, y, n_classes)
    Y = np.eye(k)[y]

    weights = np.zeros((k, X.shape[1]))
    bias = np.zeros(k)
    value, grad_w, grad_b = logistic_objective(weights, bias, X, Y, C)
    step = 1.0
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        grad_norm = max(np.max(np.abs(grad_w), initial=0.0), np.max(np.abs(grad_b)))
        if grad_norm < GRADIENT_TOLERANCE:
            break
        sq_norm = float(np.sum(grad_w**2) + np.sum(grad_b**2))
        while True:
            cand_w = weights - step * grad_w
            cand_b = bias - step * grad_b
            cand_value, cand_gw, cand_gb = logistic_objective(cand_w, cand_b, X, Y, C)
            if cand_value <= value - 0.5 * step * sq_norm or step < 1e-16:
                break
            step *= 0.5
        weights, bias = cand_w, cand_b
        value, grad_w, grad_b = cand_value, cand_gw, cand_gb
        step *= 2.0

    logger.debug("Logistic regression C=%.4g stopped after %d iterations", C, n_iter)
    return LogisticModel(weights=weights, bias=bias, C=float(C), n_iter=n_iter)


@dataclass(frozen=True)
class EvalScores:
    """Macro-averaged classification scores."""

    f1: float
    precision: float
    recall: float
    accuracy: float

    def to_dict(self) -> dict[str, float]:
        return {
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
        }


def eval_scores(
    y_true: np.ndarray, y_pred: np.ndarray, n_classes: int | None = None
) -> EvalScores:
    """Macro F1/precision/recall and accuracy.

    A class without predicted positives contributes precision 0.

    Raises:
        ModelError: If the vectors are empty or differ in length
    """
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if len(y_true) == 0:
        raise ModelError("Cannot score empty label vectors")
    if len(y_true) != len(y_pred):
        raise ModelError(f"Length mismatch: {len(y_true)} labels vs {len(y_pred)} predictions")
    labels = (
        list(range(n_classes)) if n_classes is not None
        else sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    )
    precision, recall, f1, _ = precision_recall_fscore_support(
        y_true, y_pred, labels=labels, average="macro", zero_division=0
    )
    return EvalScores(
        f1=float(f1),
        precision=float(precision),
        recall=float(recall),
        accuracy=float(accuracy_score(y_true, y_pred)),
    )


def model_to_dict(
    model: Predictor,
    family: str,
    params: dict[str, Any],
    seed: int,
    preprocessing_hash: str = "",
) -> dict[str, Any]:
    """Versioned JSON document describing a trained model."""
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "family": family,
        "params": params,
        "seed": seed,
        "preprocessing_hash": preprocessing_hash,
        "n_classes": model.n_classes,
        "n_features": model.n_features,
        "model": model.to_dict(),
    }


def model_from_dict(document: dict[str, Any]) -> Predictor:
    """Rebuild a model from :func:`model_to_dict` output.

    Raises:
        ModelError: For an unknown format version or family
    """
    from .trees import BoostedModel, ForestModel

    if document.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelError(f"Unsupported model format version: {document.get('format_version')}")
    loaders = {
        "logistic": LogisticModel.from_dict,
        "forest": ForestModel.from_dict,
        "boosted": BoostedModel.from_dict,
    }
    family = document.get("family")
    if family not in loaders:
        raise ModelError(f"Unknown model family: {family}")
    return loaders[family](document["model"])


def save_model(path: str | Path, document: dict[str, Any]) -> None:
    """Write a model document produced by :func:`model_to_dict`."""
    Path(path).write_text(json.dumps(document, sort_keys=True), encoding="utf-8")


def load_model(path: str | Path) -> tuple[Predictor, dict[str, Any]]:
    """Read a model document; returns the model and the raw document."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ModelError(f"Cannot read model document {path}: {e}")
    return model_from_dict(document), document
