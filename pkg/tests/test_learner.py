import math

import numpy as np
import pytest

from seqcoupon.errors import DegenerateDataError, InputError, SchemaMismatchError
from seqcoupon.domain import FeatureVector, SCHEMA_ROUND1
from seqcoupon.learner import (
    Dataset,
    KIND_BOOSTED,
    KIND_LOGISTIC,
    LearnerConfig,
    Model,
    PROB_CLAMP,
    grid_search,
    predict,
    predict_matrix,
    train,
    weighted_log_loss,
)


def synthetic_dataset(seed: int = 2024, n: int = 400) -> tuple[Dataset, np.ndarray]:
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(n, 3))
    logits = 0.8 * X[:, 0] - 0.5 * X[:, 1] + 0.2
    y = gen.uniform(size=n) < 1 / (1 + np.exp(-logits))
    return Dataset(X, y), np.array([[0.25, -1.0, 2.0]])


class TestDatasetValidation:
    def test_rejects_non_finite_features(self):
        with pytest.raises(InputError):
            Dataset(np.array([[1.0], [np.inf]]), np.array([True, False]))

    def test_rejects_non_positive_weights(self):
        with pytest.raises(InputError):
            Dataset(np.zeros((2, 1)), np.array([True, False]), np.array([1.0, 0.0]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(InputError):
            Dataset(np.zeros((3, 1)), np.array([True, False]))

    def test_rejects_one_dimensional_features(self):
        with pytest.raises(InputError):
            Dataset(np.zeros(3), np.array([True, False, True]))


class TestLearnerConfigValidation:
    def test_unknown_kind(self):
        with pytest.raises(InputError):
            LearnerConfig(kind="forest")

    def test_positive_learning_rate(self):
        with pytest.raises(InputError):
            LearnerConfig(learning_rate=0.0)

    def test_epoch_and_stump_floors(self):
        with pytest.raises(InputError):
            LearnerConfig(epochs=0)
        with pytest.raises(InputError):
            LearnerConfig(max_stumps=0)


class TestLogistic:
    def test_constant_features_learn_the_base_rate(self):
        X = np.zeros((200, 2))
        y = np.array([True] * 50 + [False] * 150)
        model = train(Dataset(X, y), LearnerConfig(learning_rate=1.0, epochs=2000))
        preds = predict_matrix(model, X)
        np.testing.assert_allclose(preds, 0.25, rtol=0, atol=1e-6)

    def test_balanced_constant_data_predicts_half_exactly(self):
        X = np.zeros((10, 1))
        y = np.array([True, False] * 5)
        model = train(Dataset(X, y), LearnerConfig(epochs=50))
        assert np.all(predict_matrix(model, X) == 0.5)

    def test_separable_data_classified_perfectly(self):
        X = np.array([[-2.0], [-1.0], [1.0], [2.0]] * 10)
        y = np.array([False, False, True, True] * 10)
        model = train(Dataset(X, y), LearnerConfig(learning_rate=1.0, epochs=500))
        preds = predict_matrix(model, X)
        assert np.array_equal(preds > 0.5, y)

    def test_recovers_generating_coefficients(self):
        gen = np.random.default_rng(7)
        n = 10_000
        X = gen.normal(size=(n, 2))
        true_coef = np.array([1.0, -0.5])
        true_intercept = 0.3
        p = 1 / (1 + np.exp(-(X @ true_coef + true_intercept)))
        y = gen.uniform(size=n) < p
        model = train(
            Dataset(X, y), LearnerConfig(learning_rate=1.0, l2=0.0, epochs=2000)
        )
        raw, intercept = model.coefficients_raw()
        np.testing.assert_allclose(raw, true_coef, rtol=0, atol=0.1)
        assert abs(intercept - true_intercept) < 0.1

    def test_zero_coefficients_predict_half(self):
        model = Model(
            kind=KIND_LOGISTIC,
            schema_id="adhoc/3",
            feature_mean=np.zeros(3),
            feature_scale=np.ones(3),
            intercept=0.0,
            coef=np.zeros(3),
        )
        X = np.random.default_rng(0).normal(size=(20, 3))
        assert np.all(predict_matrix(model, X) == 0.5)

    def test_single_class_refused(self):
        X = np.random.default_rng(1).normal(size=(30, 2))
        with pytest.raises(DegenerateDataError):
            train(Dataset(X, np.ones(30, dtype=bool)), LearnerConfig())

    def test_raw_coefficients_only_for_logistic(self,ustub=None):
        data, _ = synthetic_dataset(n=80)
        boosted = train(data, LearnerConfig(kind=KIND_BOOSTED, max_stumps=2))
        with pytest.raises(InputError):
            boosted.coefficients_raw()


class TestDeterminismAndWeights:
    def test_retrain_bitwise_identical(self):
        data, _ = synthetic_dataset()
        for config in (
            LearnerConfig(learning_rate=1.0, epochs=200),
            LearnerConfig(kind=KIND_BOOSTED, learning_rate=0.3, max_stumps=15),
        ):
            a = train(data, config)
            b = train(data, config)
            assert a.intercept == b.intercept
            if config.kind == KIND_LOGISTIC:
                assert np.array_equal(a.coef, b.coef)
            else:
                assert a.stumps == b.stumps

    def test_row_order_barely_matters(self):
        data, probe = synthetic_dataset(n=500)
        perm = np.random.default_rng(5).permutation(len(data))
        shuffled = Dataset(data.features[perm], data.labels[perm])
        config = LearnerConfig(learning_rate=1.0, epochs=200)
        p_a = predict_matrix(train(data, config), probe)
        p_b = predict_matrix(train(shuffled, config), probe)
        np.testing.assert_allclose(p_a, p_b, rtol=0, atol=1e-9)

    def test_integer_weights_equal_duplication(self):
        gen = np.random.default_rng(11)
        X = gen.normal(size=(60, 2))
        y = gen.uniform(size=60) < 0.4
        counts = gen.integers(1, 4, size=60)
        weighted = Dataset(X, y, counts.astype(float))
        duplicated = Dataset(np.repeat(X, counts, axis=0), np.repeat(y, counts))
        config = LearnerConfig(learning_rate=1.0, epochs=300)
        m_w = train(weighted, config)
        m_d = train(duplicated, config)
        np.testing.assert_allclose(m_w.coef, m_d.coef, rtol=0, atol=1e-8)
        assert abs(m_w.intercept - m_d.intercept) < 1e-8
        assert abs(
            weighted_log_loss(m_w, weighted) - weighted_log_loss(m_d, duplicated)
        ) < 1e-8

    def test_frozen_regression_values(self):
        data, probe = synthetic_dataset()
        m_log = train(data, LearnerConfig(learning_rate=1.0, epochs=500))
        m_boost = train(
            data, LearnerConfig(kind=KIND_BOOSTED, learning_rate=0.3, max_stumps=25)
        )
        assert float(predict_matrix(m_log, probe)[0]) == pytest.approx(
            0.7164594841307209, rel=1e-12
        )
        assert float(predict_matrix(m_boost, probe)[0]) == pytest.approx(
            0.5869413389834287, rel=1e-12
        )


class TestBoosted:
    def test_training_loss_non_increasing_in_ensemble_size(self):
        data, _ = synthetic_dataset(seed=3, n=300)
        model = train(
            data, LearnerConfig(kind=KIND_BOOSTED, learning_rate=0.3, max_stumps=30)
        )
        losses = []
        for k in range(len(model.stumps) + 1):
            truncated = Model(
                kind=KIND_BOOSTED,
                schema_id=model.schema_id,
                feature_mean=model.feature_mean,
                feature_scale=model.feature_scale,
                intercept=model.intercept,
                stumps=model.stumps[:k],
            )
            losses.append(weighted_log_loss(truncated, data))
        assert all(a >= b - 1e-12 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_single_class_falls_back_to_clamped_prior(self):
        X = np.random.default_rng(2).normal(size=(25, 2))
        model = train(
            Dataset(X, np.ones(25, dtype=bool)),
            LearnerConfig(kind=KIND_BOOSTED, max_stumps=10),
        )
        assert model.stumps == ()
        np.testing.assert_allclose(
            predict_matrix(model, X), 1.0 - PROB_CLAMP, rtol=0, atol=1e-12
        )

    def test_predictions_clamped(self):
        X = np.array([[0.0]] * 50 + [[1.0]] * 50)
        y = np.array([False] * 50 + [True] * 50)
        model = train(
            Dataset(X, y),
            LearnerConfig(kind=KIND_BOOSTED, learning_rate=2.0, max_stumps=400, epochs=400),
        )
        preds = predict_matrix(model, X)
        assert np.all(preds >= PROB_CLAMP) and np.all(preds <= 1.0 - PROB_CLAMP)


class TestSchemaGuards:
    def test_wrong_width_matrix_rejected(self):
        data, _ = synthetic_dataset(n=50)
        model = train(data, LearnerConfig(epochs=10))
        with pytest.raises(SchemaMismatchError):
            predict_matrix(model, np.zeros((4, 7)))

    def test_wrong_schema_id_rejected(self):
        fv = FeatureVector(values=np.zeros(13), schema_id=SCHEMA_ROUND1)
        model = Model(
            kind=KIND_LOGISTIC,
            schema_id="adhoc/13",
            feature_mean=np.zeros(13),
            feature_scale=np.ones(13),
            intercept=0.0,
            coef=np.zeros(13),
        )
        with pytest.raises(SchemaMismatchError):
            predict(model, fv)

    def test_model_coef_length_checked(self):
        with pytest.raises(InputError):
            Model(
                kind=KIND_LOGISTIC,
                schema_id="adhoc/2",
                feature_mean=np.zeros(2),
                feature_scale=np.ones(2),
                intercept=0.0,
                coef=np.zeros(5),
            )


class TestGridSearch:
    def test_singleton_grid_returns_it(self):
        data, _ = synthetic_dataset(n=100)
        config = LearnerConfig(epochs=20)
        best, table = grid_search(data, [config], k_folds=3, seed=0)
        assert best == config and len(table) == 1
        assert len(table[0].fold_losses) == 3
        assert table[0].mean_loss == pytest.approx(np.mean(table[0].fold_losses))

    def test_first_of_equal_configs_wins(self):
        data, _ = synthetic_dataset(n=100)
        config = LearnerConfig(epochs=20)
        best, table = grid_search(data, [config, config], k_folds=3, seed=0)
        assert best == config
        assert table[0].mean_loss == table[1].mean_loss

    def test_crushing_regularisation_loses(self):
        data, _ = synthetic_dataset(n=300)
        sharp = LearnerConfig(learning_rate=1.0, l2=0.0, epochs=200)
        # lr * l2 = 1 zeroes the coefficient carry-over each step: near-base-rate fit
        blunt = LearnerConfig(learning_rate=0.1, l2=10.0, epochs=200)
        best, table = grid_search(data, [blunt, sharp], k_folds=3, seed=0)
        assert best == sharp
        assert table[1].mean_loss < table[0].mean_loss

    def test_diverged_config_ranks_last(self):
        data, _ = synthetic_dataset(n=120)
        sane = LearnerConfig(learning_rate=0.5, epochs=100)
        diverging = LearnerConfig(learning_rate=1.0, l2=1e6, epochs=100)
        with np.errstate(over="ignore", invalid="ignore"):
            best, table = grid_search(data, [diverging, sane], k_folds=3, seed=0)
        assert best == sane
        assert not math.isfinite(table[0].mean_loss)

    def test_single_class_training_fold_flagged(self):
        # Engineer labels so one fold's training complement is single-class.
        n, k_folds, seed = 4, 2, 0
        perm = np.random.default_rng(seed).permutation(n)
        folds = np.array_split(perm, k_folds)
        labels = np.zeros(n, dtype=bool)
        labels[folds[0]] = [True, False]  # fold 1 trains on this mixed half
        labels[folds[1]] = [True, True]  # fold 0 trains on this single-class half
        data = Dataset(np.arange(n, dtype=float)[:, None], labels)
        _, table = grid_search(data, [LearnerConfig(epochs=5)], k_folds=k_folds, seed=seed)
        assert table[0].prior_folds == (0,)

    def test_validation_errors(self):
        data, _ = synthetic_dataset(n=30)
        with pytest.raises(InputError):
            grid_search(data, [], k_folds=2, seed=0)
        with pytest.raises(InputError):
            grid_search(data, [LearnerConfig()], k_folds=1, seed=0)
        small, _ = synthetic_dataset(n=2)
        with pytest.raises(InputError):
            grid_search(small, [LearnerConfig()], k_folds=3, seed=0)
