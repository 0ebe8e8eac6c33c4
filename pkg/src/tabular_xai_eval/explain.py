"""Local feature attributions: Feature Ablation, LIME and Kernel SHAP."""

import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import comb
from sklearn.linear_model import Ridge

from .data import FeatureMatrix
from .models import Predictor, as_array

logger = logging.getLogger(__name__)

TECHNIQUES = ("lime", "kernel_shap", "feature_ablation")
ENUMERATION_LIMIT = 4096

Groups = Sequence[Sequence[int]]


class ExplainError(Exception):
    """Exception raised for invalid explanation requests."""

    pass


@dataclass(frozen=True)
class Attribution:
    """Per-feature importance of one prediction."""

    values: np.ndarray
    explained_class: int
    technique: str
    sample_id: int | str | None = None
    config_fingerprint: str = ""
    flags: tuple[str, ...] = ()

    def to_record(self, dataset: str, model: str) -> dict[str, Any]:
        """JSON-lines record for attribution dumps."""
        return {
            "dataset": dataset,
            "model": model,
            "technique": self.technique,
            "sample_id": self.sample_id,
            "class": self.explained_class,
            "values": [float(v) for v in self.values],
            "flags": list(self.flags),
            "config_fingerprint": self.config_fingerprint,
        }


@dataclass(frozen=True)
class ExplainConfig:
    """Shared explainer settings."""

    n_samples: int = 200
    kernel_width: float = 0.1
    ridge_lambda: float = 1.0
    seed: int = 0
    baseline: np.ndarray | None = field(default=None, compare=False)
    groups: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        """Validate sampling and kernel parameters."""
        if self.n_samples < 1:
            raise ExplainError(f"n_samples must be at least 1, got {self.n_samples}")
        if self.kernel_width <= 0:
            raise ExplainError(f"kernel_width must be positive, got {self.kernel_width}")
        if self.ridge_lambda < 0:
            raise ExplainError(f"ridge_lambda must be non-negative, got {self.ridge_lambda}")

    def fingerprint(self) -> str:
        """Short hash identifying the configuration, baseline included."""
        payload = {
            "n_samples": self.n_samples,
            "kernel_width": self.kernel_width,
            "ridge_lambda": self.ridge_lambda,
            "seed": self.seed,
            "groups": [list(g) for g in self.groups] if self.groups else None,
        }
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8"))
        if self.baseline is not None:
            digest.update(np.ascontiguousarray(self.baseline, dtype=float).tobytes())
        return digest.hexdigest()[:16]


def mean_baseline(X_train: np.ndarray | FeatureMatrix) -> np.ndarray:
    """Per-feature arithmetic mean of the training rows.

    Raises:
        ExplainError: If the training matrix has no rows
    """
    X = as_array(X_train)
    if X.shape[0] == 0:
        raise ExplainError("Cannot compute a baseline from an empty training matrix")
    return X.mean(axis=0)


def _prepare(model: Predictor, x: np.ndarray, baseline: np.ndarray | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if not np.isfinite(x).all():
        raise ExplainError("Sample contains non-finite values")
    if x.shape[0] != model.n_features:
        raise ExplainError(f"Sample has {x.shape[0]} features, model expects {model.n_features}")
    if baseline is not None and np.shape(baseline) != x.shape:
        raise ExplainError(f"Baseline shape {np.shape(baseline)} does not match sample {x.shape}")
    return x


def _check_groups(groups: Groups | None, d: int) -> list[np.ndarray]:
    """Default to singleton groups; otherwise require a partition of the columns."""
    if groups is None:
        return [np.array([i]) for i in range(d)]
    members = sorted(i for g in groups for i in g)
    if members != list(range(d)):
        raise ExplainError("Feature groups must partition all columns exactly once")
    return [np.asarray(g, dtype=int) for g in groups]


def _spread(group_values: np.ndarray, groups: list[np.ndarray], d: int) -> np.ndarray:
    """Split each group's attribution equally over its columns."""
    values = np.zeros(d)
    for value, members in zip(group_values, groups):
        values[members] = value / len(members)
    return values


def class_score(model: Predictor, Z: np.ndarray, cls: int) -> np.ndarray:
    """Probability of class ``cls`` for every row of ``Z``."""
    return model.predict_proba(as_array(Z))[:, cls]


def predicted_class(model: Predictor, x: np.ndarray) -> int:
    return int(np.argmax(model.predict_proba(as_array(x))[0]))


def explain_feature_ablation(
    model: Predictor,
    x: np.ndarray,
    baseline: np.ndarray,
    groups: Groups | None = None,
    sample_id: int | str | None = None,
) -> Attribution:
    """Output drop of the predicted class when each feature is set to baseline.

    All d ablated inputs plus the original are scored in one batch.
    """
    x = _prepare(model, x, baseline)
    d = x.shape[0]
    players = _check_groups(groups, d)
    c = predicted_class(model, x)

    batch = np.tile(x, (len(players) + 1, 1))
    for row, members in enumerate(players, start=1):
        batch[row, members] = baseline[members]
    scores = class_score(model, batch, c)
    deltas = scores[0] - scores[1:]
    return Attribution(
        values=_spread(deltas, players, d) if groups is not None else deltas,
        explained_class=c,
        technique="feature_ablation",
        sample_id=sample_id,
    )


def explain_lime(
    model: Predictor,
    x: np.ndarray,
    config: ExplainConfig,
    sample_id: int | str | None = None,
) -> Attribution:
    """Weighted ridge surrogate fitted on Gaussian perturbations around ``x``.

    Perturbations are ``x + N(0, I)``; similarity is
    ``exp(-||x - z||^2 / (2 * kernel_width^2))``. The intercept is unpenalized.
    When every similarity underflows to zero the penalized solution is the
    zero vector, which is returned directly.

    Raises:
        ExplainError: If ``n_samples < 2`` or the sample is invalid
    """
    if config.n_samples < 2:
        raise ExplainError("LIME needs at least 2 perturbation samples")
    x = _prepare(model, x)
    c = predicted_class(model, x)
    rng = np.random.default_rng(config.seed)

    noise = rng.standard_normal((config.n_samples, x.shape[0]))
    Z = x + noise
    weights = np.exp(-np.sum(noise**2, axis=1) / (2.0 * config.kernel_width**2))
    target = class_score(model, Z, c)

    flags: tuple[str, ...] = ()
    if not np.any(weights > 0):
        logger.debug("LIME kernel weights underflowed for sample %s", sample_id)
        coefficients = np.zeros(x.shape[0])
        flags = ("zero-kernel-weights",)
    else:
        surrogate = Ridge(alpha=config.ridge_lambda, fit_intercept=True)
        surrogate.fit(Z, target, sample_weight=weights)
        coefficients = np.asarray(surrogate.coef_, dtype=float)
    return Attribution(
        values=coefficients,
        explained_class=c,
        technique="lime",
        sample_id=sample_id,
        config_fingerprint=config.fingerprint(),
        flags=flags,
    )


def shapley_kernel_weight(n_players: int, size: int) -> float:
    """Kernel weight of a coalition of ``size`` among ``n_players``."""
    return (n_players - 1) / (comb(n_players, size, exact=True) * size * (n_players - size))


def _enumerate_coalitions(n_players: int) -> tuple[np.ndarray, np.ndarray]:
    masks = np.array(
        [bits for bits in itertools.product((0, 1), repeat=n_players) if 0 < sum(bits) < n_players],
        dtype=bool,
    )
    sizes = masks.sum(axis=1)
    weights = np.array([shapley_kernel_weight(n_players, int(s)) for s in sizes])
    return masks, weights


def _sample_coalitions(
    n_players: int, n_samples: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw coalition sizes by kernel mass, members uniformly; pairs with complements."""
    sizes = np.arange(1, n_players)
    mass = (n_players - 1) / (sizes * (n_players - sizes))
    mass = mass / mass.sum()
    n_pairs = (n_samples + 1) // 2
    masks = np.zeros((2 * n_pairs, n_players), dtype=bool)
    drawn = rng.choice(sizes, size=n_pairs, p=mass)
    for pair, size in enumerate(drawn):
        members = rng.choice(n_players, size=int(size), replace=False)
        masks[2 * pair, members] = True
        masks[2 * pair + 1] = ~masks[2 * pair]
    masks = masks[:n_samples]
    return masks, np.ones(len(masks))


def _solve_constrained(
    masks: np.ndarray, outputs: np.ndarray, weights: np.ndarray, total: float
) -> np.ndarray | None:
    """Weighted least squares for phi subject to sum(phi) == total.

    The last player is eliminated as ``total - sum(others)``. Returns None when
    the reduced system is rank deficient.
    """
    Z = masks.astype(float)
    design = Z[:, :-1] - Z[:, -1:]
    response = outputs - Z[:, -1] * total
    root = np.sqrt(weights)[:, None]
    reduced, _, rank, _ = np.linalg.lstsq(design * root, response * root[:, 0], rcond=None)
    if rank < design.shape[1]:
        return None
    return np.append(reduced, total - reduced.sum())


def explain_kernel_shap(
    model: Predictor,
    x: np.ndarray,
    baseline: np.ndarray,
    n_samples: int = 200,
    seed: int = 0,
    groups: Groups | None = None,
    sample_id: int | str | None = None,
    mode: str = "auto",
) -> Attribution:
    """Kernel SHAP with exact enumeration for small games.

    With at most 4096 coalitions every proper non-empty coalition is used with
    its exact Shapley-kernel weight; otherwise ``n_samples`` coalitions are
    drawn. ``mode`` may force "exact" or "sampled". The fit enforces
    ``sum(phi) == f_c(x) - f_c(baseline)``. An underdetermined sampled system
    falls back to an even split of that total and is flagged ``efficiency-only``.

    Raises:
        ExplainError: If the sample has no features or ``mode`` is unknown
    """
    x = _prepare(model, x, baseline)
    d = x.shape[0]
    if d == 0:
        raise ExplainError("Kernel SHAP needs at least one feature")
    players = _check_groups(groups, d)
    m = len(players)
    c = predicted_class(model, x)
    ends = class_score(model, np.vstack([x, baseline]), c)
    total = float(ends[0] - ends[1])
    flags: tuple[str, ...] = ()

    if m == 1:
        phi = np.array([total])
    else:
        if mode not in ("auto", "exact", "sampled"):
            raise ExplainError(f"Unknown Kernel SHAP mode: {mode}")
        if mode == "exact" or (mode == "auto" and 2**m <= ENUMERATION_LIMIT):
            masks, weights = _enumerate_coalitions(m)
            flags = ("enumerated",)
        else:
            masks, weights = _sample_coalitions(m, n_samples, np.random.default_rng(seed))
            flags = ("sampled",)
        column_mask = np.zeros((len(masks), d), dtype=bool)
        for player, members in enumerate(players):
            column_mask[:, members] = masks[:, [player]]
        hybrid = np.where(column_mask, x, baseline)
        outputs = class_score(model, hybrid, c) - ends[1]
        phi = _solve_constrained(masks, outputs, weights, total)
        if phi is None:
            logger.warning(
                "Kernel SHAP system underdetermined for sample %s; even split", sample_id
            )
            phi = np.full(m, total / m)
            flags = flags + ("efficiency-only",)

    return Attribution(
        values=_spread(phi, players, d) if groups is not None else phi,
        explained_class=c,
        technique="kernel_shap",
        sample_id=sample_id,
        flags=flags,
    )


def explain(
    technique: str,
    model: Predictor,
    x: np.ndarray,
    config: ExplainConfig,
    sample_id: int | str | None = None,
) -> Attribution:
    """Dispatch to one technique using ``config`` (its baseline is required
    for Kernel SHAP and Feature Ablation).

    Raises:
        ExplainError: For an unknown technique or a missing baseline
    """
    if technique == "lime":
        return explain_lime(model, x, config, sample_id=sample_id)
    if technique not in TECHNIQUES:
        raise ExplainError(f"Unknown technique: {technique}")
    if config.baseline is None:
        raise ExplainError(f"{technique} requires a baseline")
    if technique == "kernel_shap":
        attribution = explain_kernel_shap(
            model, x, config.baseline, n_samples=config.n_samples, seed=config.seed,
            groups=config.groups, sample_id=sample_id,
        )
    else:
        attribution = explain_feature_ablation(
            model, x, config.baseline, groups=config.groups, sample_id=sample_id
        )
    return replace(attribution, config_fingerprint=config.fingerprint())


def make_explainer(
    technique: str, model: Predictor, config: ExplainConfig
) -> Callable[[np.ndarray], np.ndarray]:
    """Closure ``x -> attribution values`` with a fixed configuration and seed."""
    if technique not in TECHNIQUES:
        raise ExplainError(f"Unknown technique: {technique}")

    def explainer(x: np.ndarray) -> np.ndarray:
        return explain(technique, model, x, config).values

    return explainer
