"""Tests for model families, grid search and evaluation."""

import joblib
import numpy as np
import pytest
from sklearn.metrics import f1_score, precision_score, recall_score

from fedwatch.exceptions import DatasetError, ModelArtifactError, UnsupportedFamilyError
from fedwatch.learners import (
    Dataset,
    EvalMetrics,
    Family,
    HyperGrid,
    TrainedModel,
    all_negative_f1,
    contributions,
    evaluate,
    feature_importance,
    kfold_splits,
    load_model,
    predict_proba,
    save_model,
    train,
)

HEADER = ("signal", "noise")


@pytest.fixture
def separable():
    """40 rows whose label is decided by the first column alone."""
    rng = np.random.default_rng(0)
    signal = np.concatenate([rng.uniform(0, 2, 20), rng.uniform(8, 10, 20)])
    noise = rng.uniform(0, 10, 40)
    y = np.array([0] * 20 + [1] * 20)
    return Dataset(HEADER, np.column_stack([signal, noise]), y,
                   instances=[f"i{n}.example" for n in range(40)])


RF_POINT = HyperGrid.single("rf", n_estimators=50, max_depth=4)


def test_family_from_string():
    """Test family tags are case-insensitive and unknown tags are rejected."""
    assert Family.from_string("RF") is Family.RF
    assert Family.from_string(Family.GBT) is Family.GBT
    assert not Family.MLP.explainable
    with pytest.raises(UnsupportedFamilyError):
        Family.from_string("xgboost")


def test_grid_sizes_and_order():
    """Test each family's grid and that the first parameter varies slowest."""
    assert len(HyperGrid.for_family("lr")) == 7
    assert len(HyperGrid.for_family("mlp")) == 27
    assert len(HyperGrid.for_family("rf")) == 18
    assert len(HyperGrid.for_family("gbt")) == 100
    points = HyperGrid.for_family("rf").points()
    assert points[0] == {"n_estimators": 5, "max_depth": 2}
    assert points[1] == {"n_estimators": 5, "max_depth": 4}
    assert points[-1] == {"n_estimators": 250, "max_depth": None}


def test_grid_single():
    """Test one-point grids must name every parameter."""
    grid = HyperGrid.single("lr", C=1)
    assert grid.points() == [{"C": 1}]
    assert {"C": 1} in HyperGrid.for_family("lr")
    with pytest.raises(DatasetError):
        HyperGrid.single("rf", n_estimators=5)


def test_metrics_confusion():
    """Test metrics from a known confusion matrix."""
    y_true = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    y_pred = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0]
    metrics = EvalMetrics.from_predictions(y_true, y_pred)
    assert (metrics.tp, metrics.fp, metrics.fn, metrics.tn) == (2, 1, 1, 6)
    assert metrics.accuracy == pytest.approx(0.8)
    assert metrics.precision == pytest.approx(2 / 3)
    assert metrics.recall == pytest.approx(2 / 3)
    assert metrics.f1 == pytest.approx(2 / 3)


def test_metrics_no_positive_predictions():
    """Test undefined precision and F1 are 0."""
    metrics = EvalMetrics.from_predictions([1, 0, 0], [0, 0, 0])
    assert metrics.precision == 0.0
    assert metrics.f1 == 0.0
    assert metrics.accuracy == pytest.approx(2 / 3)


def test_metrics_match_sklearn():
    """Test random label vectors against scikit-learn's metrics."""
    rng = np.random.default_rng(11)
    for _ in range(50):
        y_true = rng.integers(0, 2, 30)
        y_pred = rng.integers(0, 2, 30)
        metrics = EvalMetrics.from_predictions(y_true, y_pred)
        assert metrics.f1 == pytest.approx(f1_score(y_true, y_pred, zero_division=0))
        assert metrics.precision == pytest.approx(precision_score(y_true, y_pred, zero_division=0))
        assert metrics.recall == pytest.approx(recall_score(y_true, y_pred, zero_division=0))


def confusion_by_hand(y_true, y_pred):
    tp = fp = fn = tn = 0
    for truth, guess in zip(y_true, y_pred):
        if truth == 1 and guess == 1:
            tp += 1
        elif truth == 0 and guess == 1:
            fp += 1
        elif truth == 1 and guess == 0:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def test_metrics_against_confusion_matrix():
    """Test 1,000 random label vectors against a confusion matrix counted by hand."""
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        y_true = rng.integers(0, 2, n).tolist()
        y_pred = rng.integers(0, 2, n).tolist()
        tp, fp, fn, tn = confusion_by_hand(y_true, y_pred)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

        metrics = EvalMetrics.from_predictions(y_true, y_pred)
        assert (metrics.tp, metrics.fp, metrics.fn, metrics.tn) == (tp, fp, fn, tn)
        assert metrics.accuracy == pytest.approx((tp + tn) / n)
        assert metrics.precision == pytest.approx(precision)
        assert metrics.recall == pytest.approx(recall)
        assert metrics.f1 == pytest.approx(f1)


def test_metrics_errors():
    """Test empty and mismatched inputs."""
    with pytest.raises(DatasetError):
        EvalMetrics.from_predictions([], [])
    with pytest.raises(DatasetError):
        EvalMetrics.from_predictions([0, 1], [0])


def test_kfold_splits():
    """Test ten rows split into five stratified folds of two."""
    labels = [0] * 5 + [1] * 5
    folds = kfold_splits(10, labels, k=5)
    assert len(folds) == 5
    assert all(len(fold) == 2 for fold in folds)
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))
    assert all(sorted(labels[i] for i in fold) == [0, 1] for fold in folds)


def test_kfold_splits_errors():
    """Test too few rows, mismatched labels and thin classes."""
    with pytest.raises(DatasetError):
        kfold_splits(3, [0, 1, 1], k=5)
    with pytest.raises(DatasetError):
        kfold_splits(10, [0, 1], k=5)
    with pytest.raises(DatasetError):
        kfold_splits(10, [0] * 7 + [1] * 3, k=5)


def test_dataset_validation():
    """Test label and shape checks."""
    with pytest.raises(DatasetError):
        Dataset(HEADER, [[1, 2]], [2])
    with pytest.raises(DatasetError):
        Dataset(HEADER, [[1, 2], [3, 4]], [1])
    dataset = Dataset(HEADER, [[1, 2], [3, 4]], [0, 1])
    assert dataset.class_counts == (1, 1)
    assert dataset.drop_columns(["noise"]).header == ("signal",)
    with pytest.raises(DatasetError):
        dataset.drop_columns(["missing"])


def test_dataset_csv(tmp_path):
    """Test a dataset written to CSV reads back with its ids and labels."""
    dataset = Dataset(HEADER, [[1.5, 2.0], [3.0, 0.25]], [0, 1], instances=["a.example", "b.example"],
                      timestamps=[10, 20])
    again = Dataset.from_csv(dataset.to_csv(tmp_path / "d.csv"))
    assert again.header == HEADER
    assert again.instances == ["a.example", "b.example"]
    assert again.timestamps == [10, 20]
    assert np.array_equal(again.X, dataset.X)
    assert again.y.tolist() == [0, 1]


def test_train_rf_separable(separable):
    """Test a forest fits separable data perfectly and ranks the signal first."""
    model = train("rf", separable, grid=RF_POINT)
    assert model.params == {"n_estimators": 50, "max_depth": 4}
    assert evaluate(model, separable).f1 == 1.0
    assert feature_importance(model)[0][0] == "signal"
    assert sum(w for _, w in feature_importance(model)) == pytest.approx(1.0)


def test_train_lr_separable(separable):
    """Test logistic regression weights the signal column highest."""
    model = train("lr", separable, grid=HyperGrid.single("lr", C=1))
    assert evaluate(model, separable).f1 == 1.0
    assert feature_importance(model)[0][0] == "signal"
    assert contributions(model, separable.X[-1])[0][0] == "signal"


def test_lr_score_rises_with_positive_weights(separable):
    """Test raising any positively weighted feature never lowers the logistic score."""
    model = train("lr", separable, grid=HyperGrid.single("lr", C=1))
    weights = model.estimator.named_steps["clf"].coef_[0]
    assert weights[HEADER.index("signal")] > 0
    rng = np.random.default_rng(5)
    for row in separable.X[rng.choice(len(separable), 10, replace=False)]:
        before = predict_proba(model, row)
        for column in np.flatnonzero(weights > 0):
            raised = row.copy()
            raised[column] += float(rng.uniform(0.1, 5.0))
            assert predict_proba(model, raised) >= before


def test_gbt_without_learning_rate_predicts_prior(separable):
    """Test boosting with a zero learning rate scores every row at the training prior."""
    skewed = separable.subset(list(range(30)))
    assert skewed.class_counts == (20, 10)
    model = train("gbt", skewed, grid=HyperGrid.single("gbt", n_estimators=5, max_depth=1, learning_rate=0))
    scores = predict_proba(model, separable.X)
    assert scores == pytest.approx(np.full(len(separable), 1 / 3), abs=1e-9)


def test_train_deterministic(separable):
    """Test equal seeds give equal models."""
    first = train("rf", separable, grid=RF_POINT, seed=3)
    second = train("rf", separable, grid=RF_POINT, seed=3)
    assert np.array_equal(predict_proba(first, separable.X), predict_proba(second, separable.X))


def test_train_needs_both_classes(separable):
    """Test a class smaller than the fold count cannot be trained on."""
    thin = separable.subset(list(range(20)) + [20, 21, 22])
    with pytest.raises(DatasetError):
        train("rf", thin, grid=RF_POINT)


def test_train_grid_family_mismatch(separable):
    """Test a grid for another family is rejected."""
    with pytest.raises(UnsupportedFamilyError):
        train("gbt", separable, grid=RF_POINT)


def test_mlp_has_no_importance():
    """Test the perceptron is not explainable."""
    model = TrainedModel(Family.MLP, estimator=None, params={}, header=HEADER, seed=0)
    with pytest.raises(UnsupportedFamilyError):
        feature_importance(model)


def test_predict_proba_shapes(separable):
    """Test one row gives a float, a matrix gives an array, a wrong width fails."""
    model = train("rf", separable, grid=RF_POINT)
    score = predict_proba(model, [9.0, 1.0])
    assert isinstance(score, float)
    assert score > 0.5
    assert predict_proba(model, separable.X).shape == (40,)
    with pytest.raises(DatasetError):
        predict_proba(model, [1.0])


def test_evaluate_header_mismatch(separable):
    """Test evaluating on other columns is rejected."""
    model = train("rf", separable, grid=RF_POINT)
    with pytest.raises(DatasetError):
        evaluate(model, separable.drop_columns(["noise"]))


def test_all_negative_f1(separable):
    """Test the all-negative baseline scores 0 F1."""
    assert all_negative_f1(separable) == 0.0


def test_save_load_model(separable, tmp_path):
    """Test a saved model predicts the same after loading."""
    model = train("rf", separable, grid=RF_POINT)
    model.lambdas = {"posts_tr": 0.25}
    loaded = load_model(save_model(model, tmp_path / "models" / "rf.joblib"))
    assert loaded.family is Family.RF
    assert loaded.header == HEADER
    assert loaded.lambdas == {"posts_tr": 0.25}
    assert np.array_equal(predict_proba(loaded, separable.X), predict_proba(model, separable.X))


def test_load_model_errors(tmp_path):
    """Test missing files and foreign payloads."""
    with pytest.raises(ModelArtifactError):
        load_model(tmp_path / "missing.joblib")
    foreign = tmp_path / "foreign.joblib"
    joblib.dump({"hello": "world"}, foreign)
    with pytest.raises(ModelArtifactError):
        load_model(foreign)
