"""Model families, grid search and evaluation.

Four families are supported: logistic regression (lr), a single hidden
layer perceptron (mlp), random forest (rf) and gradient boosted trees
(gbt), all from scikit-learn. Model selection is an exhaustive grid
search scored by F1 over stratified 5-fold cross-validation; the best
point (ties to the earliest in grid order) is refit on the whole
training set. LR and MLP see standardised inputs, trees see raw values.
"""

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import joblib
import numpy as np
from sklearn.ensemble import GradientBoostingClassifier, RandomForestClassifier
from sklearn.exceptions import ConvergenceWarning, UndefinedMetricWarning
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler

from .constants import CV_FOLDS, DECISION_THRESHOLD, EXPLAINABLE_FAMILIES, HYPER_GRIDS, MLP_EPOCHS
from .exceptions import DatasetError, ModelArtifactError, UnsupportedFamilyError
from .utils import read_csv, write_csv

logger = logging.getLogger(__name__)

MODEL_FORMAT = "fedwatch-model"
MODEL_FORMAT_VERSION = 1


class Family(Enum):
    """Model family."""
    LR = "lr"
    MLP = "mlp"
    RF = "rf"
    GBT = "gbt"

    @classmethod
    def from_string(cls, value: Union[str, "Family"]) -> "Family":
        """Create Family from its tag.

        Raises:
            UnsupportedFamilyError: If the tag is unknown
        """
        if isinstance(value, cls):
            return value
        for family in cls:
            if family.value == str(value).lower():
                return family
        raise UnsupportedFamilyError(f"Unknown model family {value!r}", family=str(value))

    @property
    def explainable(self) -> bool:
        return self.value in EXPLAINABLE_FAMILIES


@dataclass(frozen=True)
class HyperGrid:
    """Ordered parameter lists of one family; the first parameter varies slowest."""
    family: Family
    params: Tuple[Tuple[str, Tuple[Any, ...]], ...]

    @classmethod
    def for_family(cls, family: Union[str, Family]) -> "HyperGrid":
        family = Family.from_string(family)
        return cls(family, tuple((name, tuple(values)) for name, values in HYPER_GRIDS[family.value].items()))

    @classmethod
    def single(cls, family: Union[str, Family], **point: Any) -> "HyperGrid":
        """A one-point grid; every parameter of the family must be given."""
        family = Family.from_string(family)
        full = cls.for_family(family)
        missing = [name for name, _ in full.params if name not in point]
        if missing or set(point) - {name for name, _ in full.params}:
            raise DatasetError(f"Grid point for {family.value} must set exactly {[n for n, _ in full.params]}")
        return cls(family, tuple((name, (point[name],)) for name, _ in full.params))

    def points(self) -> List[Dict[str, Any]]:
        names = [name for name, _ in self.params]
        return [dict(zip(names, values)) for values in itertools.product(*(v for _, v in self.params))]

    def __contains__(self, point: Mapping[str, Any]) -> bool:
        return any(point == candidate for candidate in self.points())

    def __len__(self) -> int:
        return len(self.points())


@dataclass
class Dataset:
    """Feature rows with labels, in a fixed column order.

    ``lambdas`` records the Box-Cox λ the *_tr columns were computed with.
    """
    header: Tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    instances: List[str] = field(default_factory=list)
    timestamps: List[int] = field(default_factory=list)
    lambdas: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.header = tuple(self.header)
        self.X = np.nan_to_num(np.asarray(self.X, dtype=float).reshape(-1, len(self.header)), nan=0.0)
        self.y = np.asarray(self.y, dtype=int).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise DatasetError(f"{self.X.shape[0]} rows but {self.y.shape[0]} labels")
        if not set(np.unique(self.y)) <= {0, 1}:
            raise DatasetError("Labels must be 0 or 1")
        if not self.instances:
            self.instances = [""] * len(self.y)
        if not self.timestamps:
            self.timestamps = [0] * len(self.y)
        if len(self.instances) != len(self.y) or len(self.timestamps) != len(self.y):
            raise DatasetError("instances/timestamps must have one entry per row")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def class_counts(self) -> Tuple[int, int]:
        positives = int(self.y.sum())
        return len(self) - positives, positives

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.header.index(name)]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = list(indices)
        return Dataset(
            header=self.header,
            X=self.X[indices],
            y=self.y[indices],
            instances=[self.instances[i] for i in indices],
            timestamps=[self.timestamps[i] for i in indices],
            lambdas=dict(self.lambdas),
        )

    def drop_columns(self, names: Iterable[str]) -> "Dataset":
        """Return a copy without ``names``.

        Raises:
            DatasetError: If a column is absent
        """
        names = list(names)
        missing = [name for name in names if name not in self.header]
        if missing:
            raise DatasetError(f"Columns not in dataset: {missing}")
        keep = [i for i, name in enumerate(self.header) if name not in names]
        return Dataset(
            header=tuple(self.header[i] for i in keep),
            X=self.X[:, keep],
            y=self.y.copy(),
            instances=list(self.instances),
            timestamps=list(self.timestamps),
            lambdas=dict(self.lambdas),
        )

    def to_csv(self, path: Union[str, Path]) -> Path:
        rows = (
            [domain, ts] + [repr(float(v)) for v in row] + [int(label)]
            for domain, ts, row, label in zip(self.instances, self.timestamps, self.X, self.y)
        )
        return write_csv(path, ("domain", "timestamp") + self.header + ("label",), rows)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "Dataset":
        """Read a dataset written by ``to_csv``.

        Raises:
            DatasetError: If the header lacks the domain/timestamp/label columns
        """
        header, rows = read_csv(path)
        if header[:2] != ("domain", "timestamp") or header[-1] != "label":
            raise DatasetError(f"{path}: expected domain,timestamp,<features>,label columns")
        return cls(
            header=header[2:-1],
            X=[[float(v) for v in row[2:-1]] for row in rows],
            y=[int(row[-1]) for row in rows],
            instances=[row[0] for row in rows],
            timestamps=[int(row[1]) for row in rows],
        )


@dataclass(frozen=True)
class EvalMetrics:
    """Accuracy, precision, recall and F1 at the decision threshold."""
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @classmethod
    def from_predictions(cls, y_true: Sequence[int], y_pred: Sequence[int]) -> "EvalMetrics":
        """Compute the metrics from the confusion matrix.

        Raises:
            DatasetError: If the inputs are empty or of different length
        """
        truth = np.asarray(y_true, dtype=int)
        pred = np.asarray(y_pred, dtype=int)
        if truth.size == 0:
            raise DatasetError("Cannot evaluate on an empty dataset")
        if truth.shape != pred.shape:
            raise DatasetError(f"{truth.size} labels but {pred.size} predictions")
        tp = int(np.sum((truth == 1) & (pred == 1)))
        fp = int(np.sum((truth == 0) & (pred == 1)))
        fn = int(np.sum((truth == 1) & (pred == 0)))
        tn = int(np.sum((truth == 0) & (pred == 0)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls((tp + tn) / truth.size, precision, recall, f1, tp, fp, fn, tn)

    def to_dict(self) -> Dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
        }


@dataclass
class TrainedModel:
    """A fitted estimator plus everything needed to reuse it."""
    family: Family
    estimator: Any
    params: Dict[str, Any]
    header: Tuple[str, ...]
    seed: int
    cv_score: float = 0.0
    lambdas: Dict[str, float] = field(default_factory=dict)
    column_means: Tuple[float, ...] = ()
    column_stds: Tuple[float, ...] = ()

    def standardize(self, X: np.ndarray) -> np.ndarray:
        """Z-scores against the training columns (constant columns map to 0)."""
        means = np.asarray(self.column_means)
        stds = np.asarray(self.column_stds)
        safe = np.where(stds > 0, stds, 1.0)
        return np.where(stds > 0, (X - means) / safe, 0.0)


def make_estimator(family: Union[str, Family], point: Mapping[str, Any], seed: int):
    """Build the unfitted scikit-learn estimator for one grid point."""
    family = Family.from_string(family)
    if family is Family.LR:
        return Pipeline([
            ("scale", StandardScaler()),
            ("clf", LogisticRegression(C=point["C"], max_iter=1000, random_state=seed)),
        ])
    if family is Family.MLP:
        return Pipeline([
            ("scale", StandardScaler()),
            ("clf", MLPClassifier(
                hidden_layer_sizes=(point["hidden_layer_size"],),
                activation=point["activation"],
                solver="sgd",
                learning_rate=point["learning_rate_schedule"],
                learning_rate_init=0.01,
                max_iter=MLP_EPOCHS,
                n_iter_no_change=MLP_EPOCHS,
                random_state=seed,
            )),
        ])
    if family is Family.RF:
        return RandomForestClassifier(
            n_estimators=point["n_estimators"],
            max_depth=point["max_depth"],
            random_state=seed,
            n_jobs=1,
        )
    return GradientBoostingClassifier(
        n_estimators=point["n_estimators"],
        max_depth=point["max_depth"],
        learning_rate=point["learning_rate"],
        random_state=seed,
    )


def _search_key(family: Family, name: str) -> str:
    """scikit-learn parameter path for a grid parameter."""
    renames = {"hidden_layer_size": "hidden_layer_sizes", "learning_rate_schedule": "learning_rate"}
    name = renames.get(name, name)
    return f"clf__{name}" if family in (Family.LR, Family.MLP) else name


def _search_value(name: str, value: Any) -> Any:
    return (value,) if name == "hidden_layer_size" else value


def check_trainable(y: np.ndarray, folds: int) -> None:
    """Raise DatasetError unless both classes have at least ``folds`` members."""
    positives = int(np.sum(y == 1))
    negatives = int(np.sum(y == 0))
    if positives == 0 or negatives == 0:
        raise DatasetError(f"Training data has a single class ({negatives} negative, {positives} positive)")
    if min(positives, negatives) < folds:
        raise DatasetError(
            f"Stratified {folds}-fold CV needs {folds} members per class; "
            f"got {negatives} negative, {positives} positive"
        )


def kfold_splits(n: int, labels: Sequence[int], k: int = CV_FOLDS, seed: int = 0) -> List[np.ndarray]:
    """Stratified k-fold partition of range(n); returns the test indices of each fold.

    Raises:
        DatasetError: If n < k, the labels do not match n, or a class has fewer than k members
    """
    labels = np.asarray(labels, dtype=int)
    if k < 2 or n < k:
        raise DatasetError(f"Cannot split {n} rows into {k} folds")
    if labels.shape[0] != n:
        raise DatasetError(f"{labels.shape[0]} labels for {n} rows")
    check_trainable(labels, k)
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    return [test for _, test in splitter.split(np.zeros(n), labels)]


def train(family: Union[str, Family], dataset: Dataset, grid: Optional[HyperGrid] = None,
          seed: int = 0, folds: int = CV_FOLDS, n_jobs: int = 1) -> TrainedModel:
    """Grid-search ``family`` on ``dataset`` and refit the best point.

    Args:
        family: Model family tag
        dataset: Training data
        grid: Grid to search; the family's full grid by default
        seed: Seeds both the folds and the estimators
        folds: Number of stratified CV folds
        n_jobs: Parallel fits; the selected point does not depend on it

    Raises:
        DatasetError: If a class is missing or too small to stratify
    """
    family = Family.from_string(family)
    grid = grid or HyperGrid.for_family(family)
    if grid.family is not family:
        raise UnsupportedFamilyError(f"Grid is for {grid.family.value}, not {family.value}", family=family.value)
    check_trainable(dataset.y, folds)
    points = grid.points()
    param_grid = [
        {_search_key(family, name): [_search_value(name, value)] for name, value in point.items()}
        for point in points
    ]
    search = GridSearchCV(
        make_estimator(family, points[0], seed),
        param_grid,
        scoring="f1",
        cv=StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed),
        refit=True,
        error_score=0.0,
        n_jobs=n_jobs,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        search.fit(dataset.X, dataset.y)
    best = points[int(search.best_index_)]
    logger.info("%s: best %s with CV F1 %.3f over %d points", family.value, best,
                search.best_score_, len(points))
    return TrainedModel(
        family=family,
        estimator=search.best_estimator_,
        params=best,
        header=dataset.header,
        seed=seed,
        cv_score=float(search.best_score_),
        lambdas=dict(dataset.lambdas),
        column_means=tuple(float(v) for v in dataset.X.mean(axis=0)),
        column_stds=tuple(float(v) for v in dataset.X.std(axis=0)),
    )


def _matrix(model: TrainedModel, rows: Any) -> np.ndarray:
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != len(model.header):
        raise DatasetError(f"Expected {len(model.header)} columns ({', '.join(model.header)}), got shape {X.shape}")
    return X


def predict_proba(model: TrainedModel, rows: Any) -> Union[float, np.ndarray]:
    """Positive-class score of one row (a float) or of a matrix (an array).

    Raises:
        DatasetError: If the row width does not match the model header
    """
    X = _matrix(model, rows)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scores = model.estimator.predict_proba(X)[:, 1]
    scores = np.clip(np.nan_to_num(scores, nan=0.0), 0.0, 1.0)
    if np.asarray(rows).ndim == 1:
        return float(scores[0])
    return scores


def evaluate(model: TrainedModel, dataset: Dataset) -> EvalMetrics:
    """Metrics of ``model`` on ``dataset`` at threshold 0.5.

    Raises:
        DatasetError: If the dataset is empty or its header differs
    """
    if len(dataset) == 0:
        raise DatasetError("Cannot evaluate on an empty dataset")
    if dataset.header != model.header:
        raise DatasetError(f"Dataset columns {dataset.header} do not match model columns {model.header}")
    predictions = (predict_proba(model, dataset.X) >= DECISION_THRESHOLD).astype(int)
    return EvalMetrics.from_predictions(dataset.y, predictions)


def baseline_metrics(dataset: Dataset) -> EvalMetrics:
    """Metrics of the all-negative predictor."""
    return EvalMetrics.from_predictions(dataset.y, np.zeros(len(dataset), dtype=int))


def all_negative_f1(dataset: Dataset) -> float:
    return baseline_metrics(dataset).f1


def feature_importance(model: TrainedModel) -> List[Tuple[str, float]]:
    """Rank the model's features by weight, descending; ties by name.

    LR uses the absolute coefficients on standardised inputs; RF and GBT
    use impurity-decrease importances normalised to sum to 1.

    Raises:
        UnsupportedFamilyError: For MLP
    """
    if not model.family.explainable:
        raise UnsupportedFamilyError(
            f"Feature importance is not available for {model.family.value}", family=model.family.value
        )
    if model.family is Family.LR:
        weights = np.abs(model.estimator.named_steps["clf"].coef_[0])
    else:
        weights = np.asarray(model.estimator.feature_importances_, dtype=float)
        total = weights.sum()
        if total > 0:
            weights = weights / total
    ranked = [(name, float(w)) for name, w in zip(model.header, weights)]
    return sorted(ranked, key=lambda item: (-item[1], item[0]))


def contributions(model: TrainedModel, row: Sequence[float]) -> List[Tuple[str, float]]:
    """Per-feature contribution to one row's score, largest first.

    LR: coefficient times the standardised value. Trees: importance times
    the absolute z-score of the value against the training columns.

    Raises:
        UnsupportedFamilyError: For MLP
    """
    X = _matrix(model, row)
    if model.family is Family.LR:
        scaled = model.estimator.named_steps["scale"].transform(X)[0]
        coef = model.estimator.named_steps["clf"].coef_[0]
        values = coef * scaled
    else:
        importance = dict(feature_importance(model))
        z = np.abs(model.standardize(X)[0])
        values = np.array([importance[name] for name in model.header]) * z
    ranked = [(name, float(v)) for name, v in zip(model.header, values)]
    return sorted(ranked, key=lambda item: (-item[1], item[0]))


def save_model(model: TrainedModel, path: Union[str, Path]) -> Path:
    """Write a single self-describing model file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump({
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "family": model.family.value,
        "header": list(model.header),
        "params": model.params,
        "seed": model.seed,
        "cv_score": model.cv_score,
        "lambdas": model.lambdas,
        "column_means": list(model.column_means),
        "column_stds": list(model.column_stds),
        "estimator": model.estimator,
    }, path)
    return path


def load_model(path: Union[str, Path]) -> TrainedModel:
    """Read a model file written by ``save_model``.

    Raises:
        ModelArtifactError: If the file is missing or not a fedwatch model
    """
    try:
        payload = joblib.load(path)
    except (OSError, EOFError, ValueError) as e:
        raise ModelArtifactError(f"Cannot read model {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise ModelArtifactError(f"{path} is not a fedwatch model")
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelArtifactError(f"{path}: unsupported model format version {payload.get('format_version')}")
    return TrainedModel(
        family=Family.from_string(payload["family"]),
        estimator=payload["estimator"],
        params=dict(payload["params"]),
        header=tuple(payload["header"]),
        seed=int(payload["seed"]),
        cv_score=float(payload["cv_score"]),
        lambdas=dict(payload["lambdas"]),
        column_means=tuple(payload["column_means"]),
        column_stds=tuple(payload["column_stds"]),
    )
