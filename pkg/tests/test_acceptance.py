"""End-to-end checks against brute-force oracles, analytic identities and trends."""

import itertools
import math

import numpy as np
import pytest

from tabular_xai_eval.bench import aggregate, reported_value, run_benchmark
from tabular_xai_eval.config import load_run_config
from tabular_xai_eval.explain import (
    Attribution,
    ExplainConfig,
    explain_feature_ablation,
    explain_kernel_shap,
    explain_lime,
)
from tabular_xai_eval.metrics import (
    MetricConfig,
    complexity,
    faithfulness_estimate,
    selectivity,
    sensitivity,
)
from tabular_xai_eval.models import train_logistic
from tabular_xai_eval.report import AGGREGATE_FILE, CORRELATION_FILE, RECORDS_FILE, write_outputs
from tabular_xai_eval.synthetic import write_synthetic_suite
from tabular_xai_eval.trees import BoostedParams, ForestParams, train_boosted, train_forest

from .toy_models import affine_model, constant_model, random_game_model


def brute_force_shapley(model, x, baseline, cls):
    """Shapley values by averaging marginal contributions over every coalition."""
    d = len(x)

    def value(coalition):
        z = np.array(baseline, dtype=float)
        z[list(coalition)] = x[list(coalition)]
        return model.predict_proba(z)[0, cls]

    phi = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        for size in range(d):
            weight = math.factorial(size) * math.factorial(d - size - 1) / math.factorial(d)
            for coalition in itertools.combinations(others, size):
                phi[i] += weight * (value(coalition + (i,)) - value(coalition))
    return phi


def random_cases(n_cases, seed):
    rng = np.random.default_rng(seed)
    for case in range(n_cases):
        d = int(rng.integers(2, 9))
        model = random_game_model(d, seed=case + 1000 * seed)
        yield model, rng.normal(size=d), rng.normal(scale=0.5, size=d)


class TestShapleyOracle:
    """Kernel SHAP against brute-force Shapley values."""

    def test_enumeration_matches_exactly(self):
        """Enumeration mode matches the oracle within 1e-6 on 50 random games."""
        for model, x, baseline in random_cases(50, seed=0):
            attribution = explain_kernel_shap(model, x, baseline, mode="exact")
            oracle = brute_force_shapley(model, x, baseline, attribution.explained_class)
            assert np.max(np.abs(attribution.values - oracle)) <= 1e-6

    def test_sampling_is_close(self):
        """Sampled mode with 2000 coalitions stays within 0.05."""
        for model, x, baseline in random_cases(50, seed=1):
            attribution = explain_kernel_shap(
                model, x, baseline, n_samples=2000, seed=7, mode="sampled"
            )
            oracle = brute_force_shapley(model, x, baseline, attribution.explained_class)
            assert np.max(np.abs(attribution.values - oracle)) <= 0.05


class TestLinearity:
    """Attributions of an affine scoring model."""

    @pytest.fixture
    def setup(self):
        rng = np.random.default_rng(4)
        w = rng.normal(scale=0.05, size=6)
        return affine_model(w, b=2.0), w, rng.normal(size=6), rng.normal(size=6)

    def test_ablation_and_shap_recover_weights(self, setup):
        """Both give w_i * (x_i - baseline_i) within 1e-9."""
        model, w, x, baseline = setup
        expected = w * (x - baseline)
        for attribution in (
            explain_feature_ablation(model, x, baseline),
            explain_kernel_shap(model, x, baseline),
        ):
            np.testing.assert_allclose(attribution.values, expected, atol=1e-9)

    def test_lime_direction(self, setup):
        """LIME with 2000 perturbations aligns with w."""
        model, w, x, _ = setup
        values = explain_lime(model, x, ExplainConfig(n_samples=2000, kernel_width=10.0)).values
        assert values @ w / (np.linalg.norm(values) * np.linalg.norm(w)) >= 0.99


class TestCircularity:
    """Faithfulness of Feature Ablation attributions on trained models."""

    def test_every_family(self):
        """Present values are 1.0 and reported as -1.0."""
        rng = np.random.default_rng(6)
        y = np.array([0, 1] * 40)
        X = rng.normal(size=(80, 5)) + y[:, None]
        models = [
            train_logistic(X, y, C=1.0),
            train_forest(X, y, ForestParams(n_trees=10, max_depth=4), seed=0),
            train_boosted(X, y, BoostedParams(n_trees=10, max_depth=3), seed=0),
        ]
        baseline = X.mean(axis=0)
        present = 0
        for model in models:
            for x in X[:10]:
                attribution = explain_feature_ablation(model, x, baseline)
                result = faithfulness_estimate(model, x, attribution, baseline)
                if result.present:
                    present += 1
                    assert result.value == pytest.approx(1.0, abs=1e-9)
                    assert reported_value("faithfulness", result.value) == pytest.approx(-1.0)
        assert present >= 10


class TestEntropyIdentities:
    """Complexity identities."""

    @pytest.mark.parametrize("d", [2, 4, 16, 100])
    def test_uniform(self, d):
        """Uniform attributions give ln d."""
        assert abs(complexity(np.full(d, 0.3)).value - math.log(d)) <= 1e-12

    def test_one_hot(self):
        """One-hot attributions give 0."""
        assert complexity(np.eye(7)[3]).value == 0.0

    def test_scale_invariance(self):
        """Positive scaling leaves the value unchanged."""
        values = np.random.default_rng(2).normal(size=12)
        assert abs(complexity(values).value - complexity(37.5 * values).value) <= 1e-12


class TestSensitivityContracts:
    """Sensitivity contracts over many random cases."""

    def test_constant_explainer(self):
        """A constant explainer has zero sensitivity."""
        result = sensitivity(lambda z: np.ones(3), None, np.zeros(3), MetricConfig())
        assert result.avg.value == result.max.value == 0.0

    def test_average_below_max(self):
        """avg <= max on 1000 random cases."""
        rng = np.random.default_rng(0)
        for case in range(1000):
            d = int(rng.integers(1, 6))
            mixing = rng.normal(size=(d, d))
            x = rng.normal(size=d)
            result = sensitivity(
                lambda z: np.tanh(mixing @ z * 10), None, x, MetricConfig(n_perturb=5, seed=case)
            )
            assert result.avg.value <= result.max.value

    def test_replay_is_bit_identical(self):
        """The same seed replays the same draws exactly."""
        x = np.array([0.4, -1.2, 2.0])
        cfg = MetricConfig(n_perturb=15, seed=123)
        first = sensitivity(lambda z: z**3, None, x, cfg)
        second = sensitivity(lambda z: z**3, None, x, cfg)
        assert first.distances == second.distances


class TestSelectivityContracts:
    """Selectivity contracts over many random cases."""

    def test_constant_model(self):
        """A constant class score p gives p within 1e-12."""
        model = constant_model(0.35, 4)
        attribution = Attribution(np.array([0.1, 0.4, -0.2, 0.0]), 1, "lime")
        value = selectivity(model, np.ones(4), attribution, np.zeros(4)).value
        assert abs(value - 0.35) <= 1e-12

    def test_bounded(self):
        """Probability-valued models give values in [0, 1] on 1000 random cases."""
        rng = np.random.default_rng(1)
        for case in range(1000):
            d = int(rng.integers(1, 7))
            model = random_game_model(d, seed=case)
            attribution = Attribution(rng.normal(size=d), int(rng.integers(0, 2)), "lime")
            value = selectivity(model, rng.normal(size=d), attribution, np.zeros(d)).value
            assert 0.0 <= value <= 1.0


class TestPipeline:
    """Full runs on synthetic suites."""

    def test_byte_identical_outputs(self, synthetic_suite, tmp_path):
        """Two runs with the same seed write identical records, aggregate and correlation."""
        config = load_run_config(synthetic_suite)
        first = write_outputs(tmp_path / "first", run_benchmark(config))
        second = write_outputs(tmp_path / "second", run_benchmark(config))
        for name in (RECORDS_FILE, AGGREGATE_FILE, CORRELATION_FILE):
            assert first[name].read_bytes() == second[name].read_bytes()

    def test_aggregation_audit(self, synthetic_suite):
        """Every aggregate cell matches a recomputation from raw records."""
        report = run_benchmark(load_run_config(synthetic_suite))
        cells = {}
        for record in report.records:
            if record.f1_bin is None:
                continue
            key = (record.f1_bin, record.group, record.technique, record.metric)
            cells.setdefault(key, []).append(record.value)
        assert report.aggregate == aggregate(report.records)
        for row in report.aggregate:
            raw = cells[(row.f1_bin, row.group, row.technique, row.metric)]
            present = [v for v in raw if v is not None]
            sign = -1.0 if row.metric == "faithfulness" else 1.0
            reported = [sign * v for v in present]
            assert row.min == min(reported)
            assert row.max == max(reported)
            assert row.mean == pytest.approx(math.fsum(reported) / len(reported), abs=1e-15)
            assert row.count == len(present)
            assert row.missing_count == len(raw) - len(present)

    def test_complexity_grows_with_feature_count(self, tmp_path):
        """Complexity correlates with feature count (r >= 0.5), above every other metric."""
        overrides = {
            "per_class": 2,
            "models": ["logistic", "forest"],
            "model_params": {
                "logistic": {"C": 1.0, "max_iter": 200},
                "forest": {"n_trees": 10, "max_depth": 4},
            },
            "explain": {"n_samples": 100, "kernel_width": 3.0},
            "metric": {"n_perturb": 2, "inner_n_samples": 10},
        }
        config_path = write_synthetic_suite(
            tmp_path / "trend", feature_counts=(4, 8, 16, 32, 64), seed=0,
            config_overrides=overrides,
        )
        report = run_benchmark(load_run_config(config_path))
        rows = {row.metric: row for row in report.correlations if row.against == "feature_count"}
        assert rows["complexity"].n_points == 5
        assert rows["complexity"].r >= 0.5
        others = [
            row.r for metric, row in rows.items() if metric != "complexity" and row.r is not None
        ]
        assert rows["complexity"].r >= max(others)
