"""Tests for Feature Ablation, LIME and Kernel SHAP."""

import numpy as np
import pytest

from tabular_xai_eval.explain import (
    Attribution,
    ExplainConfig,
    ExplainError,
    explain,
    explain_feature_ablation,
    explain_kernel_shap,
    explain_lime,
    make_explainer,
    mean_baseline,
    shapley_kernel_weight,
)
from tabular_xai_eval.models import LogisticModel

from .toy_models import ScoreModel, affine_model, constant_model, random_game_model


@pytest.fixture
def affine():
    """Affine class-1 score 0.1*x0 - 0.2*x1 + 0.05*x2 + 2, class 1 for moderate inputs."""
    return affine_model([0.1, -0.2, 0.05], b=2.0)


@pytest.fixture
def logistic():
    return LogisticModel(
        weights=np.array([[0.5, -1.0, 0.2, 0.0], [-0.3, 0.8, 0.1, 0.4]]),
        bias=np.array([0.1, -0.1]),
        C=1.0,
    )


class TestMeanBaseline:
    """Tests for mean_baseline."""

    def test_arithmetic_mean(self):
        """Rows (0,2) and (2,0) average to (1,1)."""
        assert mean_baseline(np.array([[0.0, 2.0], [2.0, 0.0]])).tolist() == [1.0, 1.0]

    def test_single_row(self):
        """One row is its own mean."""
        assert mean_baseline(np.array([[3.0, -1.0]])).tolist() == [3.0, -1.0]

    def test_empty_rejected(self):
        """An empty matrix has no baseline."""
        with pytest.raises(ExplainError, match="empty"):
            mean_baseline(np.zeros((0, 3)))


class TestExplainConfig:
    """Tests for ExplainConfig validation."""

    def test_defaults(self):
        """Defaults are 200 samples, width 0.1, lambda 1."""
        config = ExplainConfig()
        assert (config.n_samples, config.kernel_width, config.ridge_lambda) == (200, 0.1, 1.0)

    @pytest.mark.parametrize(
        "kwargs, message",
        [
            ({"n_samples": 0}, "n_samples"),
            ({"kernel_width": 0.0}, "kernel_width"),
            ({"ridge_lambda": -1.0}, "ridge_lambda"),
        ],
    )
    def test_invalid(self, kwargs, message):
        """Out-of-range settings are rejected."""
        with pytest.raises(ExplainError, match=message):
            ExplainConfig(**kwargs)

    def test_fingerprint_tracks_baseline(self):
        """Different baselines give different fingerprints."""
        first = ExplainConfig(baseline=np.zeros(2)).fingerprint()
        second = ExplainConfig(baseline=np.ones(2)).fingerprint()
        assert first != second
        assert first == ExplainConfig(baseline=np.zeros(2)).fingerprint()


class TestFeatureAblation:
    """Tests for explain_feature_ablation."""

    def test_affine_model(self, affine):
        """values[i] = w_i * (x_i - baseline_i) for an affine score."""
        x = np.array([1.0, -2.0, 3.0])
        baseline = np.array([0.5, 0.5, 0.5])
        attribution = explain_feature_ablation(affine, x, baseline)
        expected = np.array([0.1, -0.2, 0.05]) * (x - baseline)
        np.testing.assert_allclose(attribution.values, expected, atol=1e-9)
        assert attribution.explained_class == 1

    def test_sample_equal_to_baseline(self, affine):
        """x = baseline gives a zero vector."""
        x = np.array([0.2, 0.3, 0.4])
        assert np.all(explain_feature_ablation(affine, x, x.copy()).values == 0)

    def test_constant_model(self):
        """A constant model gives a zero vector."""
        model = constant_model(0.7, 3)
        values = explain_feature_ablation(model, np.ones(3), np.zeros(3)).values
        assert np.all(values == 0)

    def test_single_batch_of_d_plus_one(self, affine):
        """Exactly d + 1 rows are scored (plus one for the predicted class)."""
        affine.calls = 0
        explain_feature_ablation(affine, np.ones(3), np.zeros(3))
        assert affine.calls == 1 + 4

    def test_duplicate_columns_get_equal_values(self):
        """Identical duplicated features receive identical attributions."""
        model = LogisticModel(
            weights=np.array([[0.0, 0.0, 0.0], [0.7, 0.7, -0.4]]), bias=np.zeros(2), C=1.0
        )
        attribution = explain_feature_ablation(model, np.array([1.5, 1.5, 0.3]), np.zeros(3))
        assert attribution.values[0] == attribution.values[1]

    def test_non_finite_sample_rejected(self, affine):
        """NaN in the sample is rejected."""
        with pytest.raises(ExplainError, match="non-finite"):
            explain_feature_ablation(affine, np.array([np.nan, 0.0, 0.0]), np.zeros(3))

    def test_dimension_mismatch_rejected(self, affine):
        """The sample must match the model's feature count."""
        with pytest.raises(ExplainError, match="features"):
            explain_feature_ablation(affine, np.zeros(2), np.zeros(2))

    def test_grouped_ablation(self, affine):
        """A group is ablated jointly and its drop split over its columns."""
        x = np.array([1.0, 2.0, 4.0])
        attribution = explain_feature_ablation(affine, x, np.zeros(3), groups=((0,), (1, 2)))
        joint = -0.2 * 2.0 + 0.05 * 4.0
        np.testing.assert_allclose(attribution.values, [0.1, joint / 2, joint / 2], atol=1e-12)

    def test_groups_must_partition(self, affine):
        """Groups that skip a column are rejected."""
        with pytest.raises(ExplainError, match="partition"):
            explain_feature_ablation(affine, np.ones(3), np.zeros(3), groups=((0,), (1,)))


class TestLime:
    """Tests for explain_lime."""

    def test_constant_model_gives_zero(self):
        """A constant target gives coefficients near 0."""
        model = constant_model(0.4, 4)
        config = ExplainConfig(n_samples=200, kernel_width=1.0, seed=1)
        assert np.all(np.abs(explain_lime(model, np.zeros(4), config).values) < 1e-9)

    def test_recovers_affine_direction(self, affine):
        """With 2000 samples and width 10 the coefficients align with w."""
        config = ExplainConfig(n_samples=2000, kernel_width=10.0, seed=3)
        values = explain_lime(affine, np.array([0.5, 0.1, -0.3]), config).values
        w = np.array([0.1, -0.2, 0.05])
        cosine = values @ w / (np.linalg.norm(values) * np.linalg.norm(w))
        assert cosine >= 0.99

    def test_wide_kernel_without_penalty_is_least_squares(self, logistic):
        """Huge width and zero lambda reproduce OLS on the same perturbation cloud."""
        x = np.array([0.3, -0.2, 0.5, 1.0])
        config = ExplainConfig(n_samples=300, kernel_width=1e6, ridge_lambda=0.0, seed=11)
        attribution = explain_lime(logistic, x, config)

        noise = np.random.default_rng(11).standard_normal((300, 4))
        Z = x + noise
        target = logistic.predict_proba(Z)[:, attribution.explained_class]
        design = np.column_stack([Z, np.ones(300)])
        oracle = np.linalg.lstsq(design, target, rcond=None)[0][:4]
        np.testing.assert_allclose(attribution.values, oracle, atol=1e-6)

    def test_underflowing_weights_flagged(self):
        """When every kernel weight is zero, a zero vector is returned and flagged."""
        model = affine_model(np.full(200, 0.001))
        config = ExplainConfig(n_samples=10, kernel_width=0.1, seed=0)
        attribution = explain_lime(model, np.zeros(200), config)
        assert np.all(attribution.values == 0)
        assert "zero-kernel-weights" in attribution.flags

    def test_needs_two_samples(self, affine):
        """n_samples < 2 is rejected."""
        with pytest.raises(ExplainError, match="at least 2"):
            explain_lime(affine, np.zeros(3), ExplainConfig(n_samples=1))

    def test_deterministic(self, logistic):
        """The same seed reproduces the attribution."""
        config = ExplainConfig(n_samples=100, kernel_width=2.0, seed=5)
        x = np.array([0.1, 0.2, 0.3, 0.4])
        assert np.array_equal(
            explain_lime(logistic, x, config).values, explain_lime(logistic, x, config).values
        )


class TestKernelShap:
    """Tests for explain_kernel_shap."""

    def test_kernel_weight(self):
        """Weight of a size-1 coalition among 3 players is 2 / (3 * 1 * 2)."""
        assert shapley_kernel_weight(3, 1) == pytest.approx(1 / 3)

    def test_single_feature(self):
        """d = 1 attributes the whole output difference."""
        model = affine_model([0.3])
        attribution = explain_kernel_shap(model, np.array([2.0]), np.array([0.5]))
        np.testing.assert_allclose(attribution.values, [0.3 * 1.5], atol=1e-12)

    def test_affine_model(self, affine):
        """Shapley values of an affine score are w_i * (x_i - baseline_i)."""
        x = np.array([1.0, -1.0, 2.0])
        baseline = np.array([0.2, 0.0, -0.5])
        attribution = explain_kernel_shap(affine, x, baseline)
        expected = np.array([0.1, -0.2, 0.05]) * (x - baseline)
        np.testing.assert_allclose(attribution.values, expected, atol=1e-9)
        assert attribution.flags == ("enumerated",)

    def test_product_game(self):
        """f = x1 * x2 at (1, 1) with zero baseline splits 0.5 / 0.5."""
        model = ScoreModel(score=lambda X: X[:, 0] * X[:, 1], n_features=2)
        attribution = explain_kernel_shap(model, np.ones(2), np.zeros(2))
        np.testing.assert_allclose(attribution.values, [0.5, 0.5], atol=1e-12)

    @pytest.mark.parametrize("mode", ["exact", "sampled"])
    def test_efficiency(self, mode):
        """Values sum to f_c(x) - f_c(baseline) in both modes."""
        model = random_game_model(6, seed=2)
        x = np.random.default_rng(0).normal(size=6)
        baseline = np.zeros(6)
        attribution = explain_kernel_shap(model, x, baseline, n_samples=64, seed=1, mode=mode)
        proba = model.predict_proba(np.vstack([x, baseline]))[:, attribution.explained_class]
        assert attribution.values.sum() == pytest.approx(proba[0] - proba[1], abs=1e-9)

    def test_underdetermined_falls_back_to_even_split(self):
        """Too few sampled coalitions give an even split flagged efficiency-only."""
        model = random_game_model(5, seed=4)
        x = np.ones(5)
        attribution = explain_kernel_shap(model, x, np.zeros(5), n_samples=1, mode="sampled")
        assert "efficiency-only" in attribution.flags
        assert np.allclose(attribution.values, attribution.values[0])

    def test_grouped_players(self, affine):
        """Grouped columns form one player whose value is split evenly."""
        x = np.array([1.0, 2.0, 4.0])
        attribution = explain_kernel_shap(affine, x, np.zeros(3), groups=((0,), (1, 2)))
        joint = -0.2 * 2.0 + 0.05 * 4.0
        np.testing.assert_allclose(attribution.values, [0.1, joint / 2, joint / 2], atol=1e-9)

    def test_unknown_mode(self, affine):
        """Unknown modes are rejected."""
        with pytest.raises(ExplainError, match="mode"):
            explain_kernel_shap(affine, np.ones(3), np.zeros(3), mode="fast")


class TestDispatch:
    """Tests for explain and make_explainer."""

    def test_requires_baseline(self, affine):
        """Kernel SHAP and ablation need a baseline in the config."""
        with pytest.raises(ExplainError, match="baseline"):
            explain("kernel_shap", affine, np.ones(3), ExplainConfig())

    def test_unknown_technique(self, affine):
        """Unknown techniques are rejected."""
        with pytest.raises(ExplainError, match="Unknown technique"):
            explain("gradcam", affine, np.ones(3), ExplainConfig(baseline=np.zeros(3)))

    @pytest.mark.parametrize("technique", ["lime", "kernel_shap", "feature_ablation"])
    def test_every_technique(self, technique, logistic):
        """Each technique returns a finite vector of length d."""
        config = ExplainConfig(n_samples=50, kernel_width=1.0, seed=2, baseline=np.zeros(4))
        attribution = explain(technique, logistic, np.array([0.5, 0.2, -0.1, 1.0]), config, 7)
        assert isinstance(attribution, Attribution)
        assert attribution.technique == technique
        assert attribution.sample_id == 7
        assert attribution.values.shape == (4,)
        assert np.isfinite(attribution.values).all()

    @pytest.mark.parametrize("technique", ["lime", "kernel_shap", "feature_ablation"])
    def test_every_technique_fingerprints_config(self, technique, logistic):
        """Dispatched attributions carry the config fingerprint, whatever the technique."""
        config = ExplainConfig(n_samples=50, kernel_width=1.0, seed=2, baseline=np.zeros(4))
        attribution = explain(technique, logistic, np.array([0.5, 0.2, -0.1, 1.0]), config)
        assert attribution.config_fingerprint == config.fingerprint()

    def test_make_explainer_is_deterministic(self, logistic):
        """The closure returns identical values on repeated calls."""
        config = ExplainConfig(n_samples=40, kernel_width=1.0, seed=9, baseline=np.zeros(4))
        explainer = make_explainer("lime", logistic, config)
        x = np.array([0.1, 0.0, -0.2, 0.3])
        assert np.array_equal(explainer(x), explainer(x))

    def test_to_record(self, affine):
        """Attribution records carry the JSON-lines fields."""
        attribution = explain_feature_ablation(affine, np.ones(3), np.zeros(3), sample_id=4)
        record = attribution.to_record("iris", "logistic")
        assert set(record) == {
            "dataset", "model", "technique", "sample_id", "class", "values", "flags",
            "config_fingerprint",
        }
        assert record["sample_id"] == 4
        assert record["config_fingerprint"] == ""
