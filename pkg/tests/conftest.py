"""Shared fixtures for small, fast benchmark runs."""

import pytest

from tabular_xai_eval.synthetic import write_synthetic_suite


@pytest.fixture
def fast_overrides():
    """Config settings that keep a full pipeline run to a few seconds."""
    return {
        "per_class": 2,
        "n_trials": 1,
        "models": ["logistic", "forest"],
        "model_params": {
            "logistic": {"C": 1.0, "max_iter": 100},
            "forest": {"n_trees": 5, "max_depth": 3},
        },
        "explain": {"n_samples": 40, "kernel_width": 1.0},
        "metric": {"n_perturb": 3, "inner_n_samples": 10},
    }


@pytest.fixture
def synthetic_suite(tmp_path, fast_overrides):
    """Three small synthetic datasets (4, 6 and 8 features) with a fast config."""
    return write_synthetic_suite(
        tmp_path / "suite", feature_counts=(4, 6, 8), seed=5, n_rows=80,
        config_overrides=fast_overrides,
    )
