"""Explanation quality metrics: faithfulness, selectivity, sensitivity, complexity."""

import logging
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from scipy.stats import entropy, pearsonr

from .explain import Attribution, class_score
from .models import Predictor

logger = logging.getLogger(__name__)

METRICS = ("faithfulness", "selectivity", "avg_sensitivity", "max_sensitivity", "complexity")

DEGENERATE_CORRELATION = "degenerate-correlation"
DEGENERATE_ATTRIBUTION = "degenerate-attribution"
ALL_DRAWS_FAILED = "all-draws-failed"

Explainer = Callable[[np.ndarray], np.ndarray]


class MetricError(Exception):
    """Exception raised for invalid metric input or configuration."""

    pass


@dataclass(frozen=True)
class MetricConfig:
    """Perturbation settings for the sensitivity metrics."""

    n_perturb: int = 20
    lower_bound: float = 0.01
    upper_bound: float = 0.05
    seed: int = 0
    zero_norm_tolerance: float = 1e-12

    def __post_init__(self):
        """Validate perturbation bounds and count."""
        if self.n_perturb < 1:
            raise MetricError(f"n_perturb must be at least 1, got {self.n_perturb}")
        if not 0 < self.lower_bound <= self.upper_bound:
            raise MetricError(
                f"Need 0 < lower_bound <= upper_bound, got ({self.lower_bound}, {self.upper_bound})"
            )


@dataclass(frozen=True)
class MetricValue:
    """A metric result, or ``None`` with the reason it is missing."""

    value: float | None
    reason: str | None = None

    @property
    def present(self) -> bool:
        return self.value is not None

    @classmethod
    def missing(cls, reason: str) -> "MetricValue":
        return cls(value=None, reason=reason)


@dataclass(frozen=True)
class MetricRecord:
    """One metric value for one (dataset, model, technique, sample, group)."""

    dataset: str
    model: str
    technique: str
    sample_id: int | str
    group: str
    metric: str
    value: float | None
    reason: str | None
    f1: float
    f1_bin: str | None

    def to_dict(self) -> dict[str, Any]:
        record = {
            "dataset": self.dataset,
            "model": self.model,
            "f1": self.f1,
            "f1_bin": self.f1_bin,
            "group": self.group,
            "technique": self.technique,
            "sample_id": self.sample_id,
            "metric": self.metric,
            "value": self.value,
        }
        if self.reason is not None:
            record["reason"] = self.reason
        return record

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MetricRecord":
        return cls(
            dataset=str(data["dataset"]),
            model=str(data["model"]),
            technique=str(data["technique"]),
            sample_id=data["sample_id"],
            group=str(data["group"]),
            metric=str(data["metric"]),
            value=None if data["value"] is None else float(data["value"]),
            reason=data.get("reason"),
            f1=float(data["f1"]),
            f1_bin=data["f1_bin"],
        )


def _with_baseline(x: np.ndarray, baseline: np.ndarray, indices: np.ndarray) -> np.ndarray:
    z = np.array(x, dtype=float)
    z[indices] = baseline[indices]
    return z


def _check_dims(x: np.ndarray, attribution: Attribution, baseline: np.ndarray) -> None:
    if not (len(x) == len(attribution.values) == len(baseline)):
        raise MetricError(
            f"Dimension mismatch: sample {len(x)}, attribution {len(attribution.values)}, "
            f"baseline {len(baseline)}"
        )


def faithfulness_estimate(
    model: Predictor,
    x: np.ndarray,
    attribution: Attribution,
    baseline: np.ndarray,
) -> MetricValue:
    """Pearson correlation between attributions and single-feature ablation drops.

    Missing (``degenerate-correlation``) when either vector has zero variance.
    """
    x = np.asarray(x, dtype=float)
    _check_dims(x, attribution, baseline)
    d = len(x)
    batch = np.tile(x, (d + 1, 1))
    batch[np.arange(1, d + 1), np.arange(d)] = baseline
    scores = class_score(model, batch, attribution.explained_class)
    deltas = scores[0] - scores[1:]
    values = np.asarray(attribution.values, dtype=float)
    if d < 2 or np.ptp(values) == 0 or np.ptp(deltas) == 0:
        return MetricValue.missing(DEGENERATE_CORRELATION)
    r = float(pearsonr(values, deltas).statistic)
    if not np.isfinite(r):
        return MetricValue.missing(DEGENERATE_CORRELATION)
    return MetricValue(float(np.clip(r, -1.0, 1.0)))


def selectivity_curve(
    model: Predictor,
    x: np.ndarray,
    attribution: Attribution,
    baseline: np.ndarray,
) -> np.ndarray:
    """Class score after cumulatively replacing the top-k features, k = 0..d.

    Features are ranked by descending signed attribution; ties keep the lower
    index first.
    """
    x = np.asarray(x, dtype=float)
    _check_dims(x, attribution, baseline)
    d = len(x)
    ranking = np.argsort(-np.asarray(attribution.values, dtype=float), kind="stable")
    batch = np.tile(x, (d + 1, 1))
    for k in range(1, d + 1):
        batch[k:, ranking[k - 1]] = baseline[ranking[k - 1]]
    return class_score(model, batch, attribution.explained_class)


def selectivity(
    model: Predictor,
    x: np.ndarray,
    attribution: Attribution,
    baseline: np.ndarray,
) -> MetricValue:
    """Normalized area under the feature-removal decay curve (lower is better)."""
    curve = selectivity_curve(model, x, attribution, baseline)
    return MetricValue(float(np.sum(curve) / len(curve)))


@dataclass(frozen=True)
class SensitivityResult:
    """Average and maximum relative explanation change under perturbation."""

    avg: MetricValue
    max: MetricValue
    n_failed: int = 0
    distances: tuple[float, ...] = ()


def sensitivity_noise(x: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    """The n_perturb signed uniform perturbations drawn from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    shape = (cfg.n_perturb, len(x))
    magnitude = rng.uniform(cfg.lower_bound, cfg.upper_bound, size=shape)
    sign = rng.integers(0, 2, size=shape) * 2 - 1
    return sign * magnitude


def sensitivity(
    explainer: Explainer,
    model: Predictor,
    x: np.ndarray,
    cfg: MetricConfig,
) -> SensitivityResult:
    """Relative change of the explanation over perturbed copies of ``x``.

    ``D_j = ||e(x) - e(x + eta_j)|| / ||e(x)||``; the absolute norm is used when
    ``||e(x)||`` is below ``cfg.zero_norm_tolerance``. Draws whose explanation
    fails are skipped and counted.

    Args:
        explainer: Deterministic function from a sample to attribution values
        model: The explained model (kept for interface symmetry with the other
            metrics; the explainer closes over it)
        x: Sample being explained
        cfg: Perturbation settings

    Returns:
        SensitivityResult; both values missing when every draw failed
    """
    x = np.asarray(x, dtype=float)
    reference = np.asarray(explainer(x), dtype=float)
    norm = float(np.linalg.norm(reference))
    scale = norm if norm >= cfg.zero_norm_tolerance else 1.0

    distances = []
    failed = 0
    for eta in sensitivity_noise(x, cfg):
        try:
            perturbed = np.asarray(explainer(x + eta), dtype=float)
        except Exception as e:
            failed += 1
            logger.warning("Sensitivity draw skipped: %s", e)
            continue
        distances.append(float(np.linalg.norm(reference - perturbed)) / scale)

    if not distances:
        missing = MetricValue.missing(ALL_DRAWS_FAILED)
        return SensitivityResult(avg=missing, max=missing, n_failed=failed)
    avg = float(np.mean(distances))
    peak = float(np.max(distances))
    return SensitivityResult(
        avg=MetricValue(min(avg, peak)),
        max=MetricValue(peak),
        n_failed=failed,
        distances=tuple(distances),
    )


def complexity(attribution: Attribution | np.ndarray) -> MetricValue:
    """Shannon entropy (natural log) of the absolute attribution shares.

    Missing (``degenerate-attribution``) for an all-zero attribution.
    """
    values = attribution.values if isinstance(attribution, Attribution) else attribution
    shares = np.abs(np.asarray(values, dtype=float))
    if not np.isfinite(shares).all() or shares.sum() == 0:
        return MetricValue.missing(DEGENERATE_ATTRIBUTION)
    return MetricValue(float(entropy(shares)))


def evaluate_all(
    model: Predictor,
    x: np.ndarray,
    attribution: Attribution,
    baseline: np.ndarray,
    explainer: Explainer,
    cfg: MetricConfig,
) -> dict[str, MetricValue]:
    """All five metrics for one attribution, keyed by metric id."""
    robustness = sensitivity(explainer, model, x, cfg)
    return {
        "faithfulness": faithfulness_estimate(model, x, attribution, baseline),
        "selectivity": selectivity(model, x, attribution, baseline),
        "avg_sensitivity": robustness.avg,
        "max_sensitivity": robustness.max,
        "complexity": complexity(attribution),
    }
