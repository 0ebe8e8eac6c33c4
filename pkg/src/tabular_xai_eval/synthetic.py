"""Seeded synthetic classification tables for desk-scale benchmark runs."""

import json
import logging
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .seeding import derive_seed

logger = logging.getLogger(__name__)

TARGET_NAME = "target"
CATEGORY_LEVELS = 3


def make_synthetic_frame(
    n_rows: int = 200,
    n_features: int = 4,
    n_classes: int = 2,
    seed: int = 0,
    n_categorical: int = 0,
    noise: float = 0.5,
    missing_rate: float = 0.0,
) -> pd.DataFrame:
    """Linear-signal classification table.

    Numeric columns ``x0..`` are standard normal; categorical columns ``c0..``
    take one of three levels, each level shifting the class scores. The label
    is the argmax of a random linear score plus Gaussian noise, written as
    ``class_<k>``. With ``missing_rate > 0`` that share of feature cells is
    blanked.

    Raises:
        ValueError: If the requested shape is impossible
    """
    if n_rows < 2 or n_classes < 2:
        raise ValueError("Need at least 2 rows and 2 classes")
    if not 0 <= n_categorical <= n_features or n_features < 1:
        raise ValueError(
            f"Invalid column counts: {n_features} features, {n_categorical} categorical"
        )
    rng = np.random.default_rng(seed)
    n_numeric = n_features - n_categorical

    numeric = rng.normal(size=(n_rows, n_numeric))
    levels = rng.integers(0, CATEGORY_LEVELS, size=(n_rows, n_categorical))
    weights = rng.normal(size=(n_numeric, n_classes))
    level_effects = rng.normal(size=(n_categorical, CATEGORY_LEVELS, n_classes))

    scores = numeric @ weights + noise * rng.normal(size=(n_rows, n_classes))
    for j in range(n_categorical):
        scores += level_effects[j, levels[:, j]]
    labels = np.argmax(scores, axis=1)
    # Every class must appear at least twice for a stratified split.
    for cls in range(n_classes):
        if np.count_nonzero(labels == cls) < 2:
            labels[rng.choice(n_rows, size=2, replace=False)] = cls

    columns: dict[str, Any] = {}
    for j in range(n_numeric):
        columns[f"x{j}"] = [repr(float(v)) for v in numeric[:, j]]
    for j in range(n_categorical):
        columns[f"c{j}"] = [f"level_{v}" for v in levels[:, j]]
    frame = pd.DataFrame(columns)
    if missing_rate > 0 and frame.shape[1] > 0:
        mask = rng.random(frame.shape) < missing_rate
        frame = frame.mask(mask, "")
    frame[TARGET_NAME] = [f"class_{v}" for v in labels]
    return frame


def make_synthetic_table(
    path: str | Path,
    n_rows: int = 200,
    n_features: int = 4,
    n_classes: int = 2,
    seed: int = 0,
    n_categorical: int = 0,
    **kwargs: Any,
) -> Path:
    """Write :func:`make_synthetic_frame` output as CSV and return its path."""
    path = Path(path)
    frame = make_synthetic_frame(
        n_rows=n_rows, n_features=n_features, n_classes=n_classes, seed=seed,
        n_categorical=n_categorical, **kwargs,
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def write_synthetic_suite(
    directory: str | Path,
    feature_counts: Sequence[int] = (4, 8, 16, 32, 64),
    seed: int = 0,
    n_rows: int = 200,
    n_classes: int = 2,
    config_overrides: dict[str, Any] | None = None,
) -> Path:
    """Write one dataset per feature count plus a ``config.json`` listing them.

    Dataset files are ``synthetic_d<count>.csv``; each uses its own derived seed.

    Returns:
        Path of the written run configuration
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    datasets = []
    for count in feature_counts:
        name = f"synthetic_d{count}"
        make_synthetic_table(
            directory / f"{name}.csv", n_rows=n_rows, n_features=count,
            n_classes=n_classes, seed=derive_seed(seed, "synthetic", count),
        )
        datasets.append({"name": name, "path": f"{name}.csv", "target_name": TARGET_NAME})
    config = {"datasets": datasets, "seed": seed}
    config.update(config_overrides or {})
    config_path = directory / "config.json"
    config_path.write_text(json.dumps(config, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote %d synthetic datasets to %s", len(datasets), directory)
    return config_path
