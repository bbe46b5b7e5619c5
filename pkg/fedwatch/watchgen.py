"""Watchlist generation.

This module turns a store into labelled datasets and trained models:
- Global labels: an instance is positive when any other instance lists
  it as a SimplePolicy target inside the observation window
- Global task: stratified 80:20 split over the whole window
- Time-window task: train on months 1..m, test on the later months
- Local task: one model per instance over its own peers, labelled by the
  actions that instance itself takes, split 8:2 months
- Ablation of the post-volume features
- Ranked watchlists with per-entry contributing features

Months are 30-day blocks from the corpus start. Instances that hide their
policies are left out of every labelled population.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.model_selection import train_test_split

from .analytics import first_policy_times
from .constants import (
    CV_FOLDS,
    DECISION_THRESHOLD,
    GLOBAL_TRAIN_FRACTION,
    GOOD_LOCAL_F1,
    LARGE_INSTANCE_POSTS,
    LOCAL_TRAIN_MONTHS,
    MIN_CLASS_MEMBERS,
    POST_VOLUME_FEATURES,
    SELECTED_FEATURES,
    TOP_CONTRIBUTING_FEATURES,
    WINDOW_MONTHS,
)
from .exceptions import DatasetError, FeatureError
from .features import BoxCoxTransforms, FeatureVector, extract_features
from .learners import (
    Dataset,
    EvalMetrics,
    Family,
    HyperGrid,
    TrainedModel,
    baseline_metrics,
    contributions,
    evaluate,
    feature_importance,
    predict_proba,
    train,
)
from .models import InstanceRef, TimeWindow
from .store import Store
from .utils import month_end, months_spanned

logger = logging.getLogger(__name__)

PolicyTimes = Dict[Tuple[InstanceRef, InstanceRef], int]


@dataclass(frozen=True)
class LabeledInstance:
    """An instance and whether another instance acts against it."""
    instance: InstanceRef
    label: int
    first_targeted_at: Optional[int] = None


@dataclass(frozen=True)
class WatchlistEntry:
    """One ranked watchlist line."""
    instance: InstanceRef
    score: float
    rank: int
    top_contributing_features: Optional[Tuple[str, ...]] = None

    def to_dict(self) -> Dict[str, Any]:
        entry: Dict[str, Any] = {"domain": self.instance.domain, "score": self.score, "rank": self.rank}
        if self.top_contributing_features is not None:
            entry["features"] = list(self.top_contributing_features)
        return entry


@dataclass(frozen=True)
class WindowSplit:
    """Train on months 1..month, test on the months after it."""
    month: int
    train: Dataset
    test: Dataset


# Labels

def inbound_first_times(policy_times: PolicyTimes) -> Dict[InstanceRef, int]:
    """Earliest time any other instance lists each target."""
    first: Dict[InstanceRef, int] = {}
    for (source, target), at in policy_times.items():
        if source == target:
            continue
        if target not in first or at < first[target]:
            first[target] = at
    return first


def _exposed_in(store: Store, instance: InstanceRef, window: TimeWindow) -> bool:
    snapshot = store.latest_snapshot(instance, window=window)
    return snapshot is not None and not snapshot.policy_config.is_unexposed


def _full_window(store: Store) -> TimeWindow:
    _, last = store.time_range()
    return TimeWindow(store.corpus_start, last + 1)


def label_instances(store: Store, until: Optional[int] = None,
                    policy_times: Optional[PolicyTimes] = None) -> List[LabeledInstance]:
    """Label every exposed instance observed before ``until``.

    Args:
        store: Store to read
        until: Exclusive end of the observation window; the whole store by default
        policy_times: Precomputed first (source, target) action times

    Returns:
        Labels sorted by domain
    """
    window = _full_window(store)
    if until is not None:
        window = TimeWindow(window.start, until)
    first = inbound_first_times(policy_times if policy_times is not None else first_policy_times(store))
    labeled = []
    for instance in store.instances():
        if not _exposed_in(store, instance, window):
            continue
        at = first.get(instance)
        hit = at is not None and at < window.end
        labeled.append(LabeledInstance(instance, int(hit), at if hit else None))
    return labeled


# Dataset assembly

def _to_dataset(instances: Sequence[InstanceRef], vectors: Sequence[FeatureVector], labels: Sequence[int],
                timestamps: Sequence[int], transforms: BoxCoxTransforms,
                header: Sequence[str] = SELECTED_FEATURES) -> Dataset:
    rows = []
    for vector in vectors:
        values = transforms.apply(vector).as_dict()
        rows.append([values[name] for name in header])
    return Dataset(
        header=tuple(header),
        X=np.asarray(rows, dtype=float).reshape(-1, len(header)),
        y=list(labels),
        instances=[i.domain for i in instances],
        timestamps=list(timestamps),
        lambdas=transforms.to_dict(),
    )


def build_global_dataset(store: Store, split: float = GLOBAL_TRAIN_FRACTION,
                         seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Stratified train/test split of the whole labelled population.

    Features span the full observation window; Box-Cox λ are fitted on
    the training rows only.

    Raises:
        DatasetError: If either class has fewer than 10 members
    """
    window = _full_window(store)
    labeled = label_instances(store, until=window.end)
    instances, vectors, labels = [], [], []
    for item in labeled:
        try:
            vectors.append(extract_features(store, item.instance, window))
        except FeatureError as e:
            logger.debug("Skipping %s: %s", item.instance, e)
            continue
        instances.append(item.instance)
        labels.append(item.label)
    positives = sum(labels)
    negatives = len(labels) - positives
    if min(positives, negatives) < MIN_CLASS_MEMBERS:
        raise DatasetError(
            f"Global task needs {MIN_CLASS_MEMBERS} instances per class; "
            f"got {negatives} negative, {positives} positive"
        )
    train_idx, test_idx = train_test_split(
        np.arange(len(labels)), train_size=split, stratify=labels, random_state=seed
    )
    train_idx, test_idx = sorted(train_idx), sorted(test_idx)
    transforms = BoxCoxTransforms.fit([vectors[i] for i in train_idx])

    def part(indices):
        return _to_dataset([instances[i] for i in indices], [vectors[i] for i in indices],
                           [labels[i] for i in indices], [window.end - 1] * len(indices), transforms)

    train_set, test_set = part(train_idx), part(test_idx)
    logger.info("Global dataset: %d train (%d positive), %d test (%d positive)",
                len(train_set), train_set.class_counts[1], len(test_set), test_set.class_counts[1])
    return train_set, test_set


def build_window_datasets(store: Store, months: int = WINDOW_MONTHS) -> List[WindowSplit]:
    """One (train, test) pair per training horizon m = 1..months.

    A row is an (instance, month) pair: features from that month alone,
    labelled by whether the instance was targeted before the month ended.
    The final month is never a training horizon since nothing would be
    left to test on; a shorter store yields fewer pairs.
    """
    start = store.corpus_start
    _, last = store.time_range()
    available = months_spanned(start, last)
    horizons = min(months, available - 1)
    if horizons < months:
        logger.warning("Store spans %d months; only %d window experiments are possible",
                       available, max(horizons, 0))
    if horizons < 1:
        return []
    first = inbound_first_times(first_policy_times(store))
    rows: List[Tuple[int, InstanceRef, FeatureVector, int]] = []
    for month in range(1, available + 1):
        window = TimeWindow(month_end(start, month - 1), month_end(start, month))
        for instance in store.instances():
            if not _exposed_in(store, instance, window):
                continue
            try:
                vector = extract_features(store, instance, window)
            except FeatureError:
                continue
            at = first.get(instance)
            rows.append((month, instance, vector, int(at is not None and at < window.end)))

    splits = []
    for horizon in range(1, horizons + 1):
        train_rows = [r for r in rows if r[0] <= horizon]
        test_rows = [r for r in rows if r[0] > horizon]
        transforms = BoxCoxTransforms.fit([r[2] for r in train_rows])

        def part(selected):
            return _to_dataset([r[1] for r in selected], [r[2] for r in selected], [r[3] for r in selected],
                               [month_end(start, r[0]) - 1 for r in selected], transforms)

        splits.append(WindowSplit(horizon, part(train_rows), part(test_rows)))
    return splits


def build_local_dataset(store: Store, instance: InstanceRef, train_months: int = LOCAL_TRAIN_MONTHS,
                        policy_times: Optional[PolicyTimes] = None) -> Tuple[Dataset, Dataset]:
    """Train/test sets over the peers of one instance.

    A peer is positive when ``instance`` itself lists it as a target:
    by the end of month ``train_months`` for the training rows, by the
    end of the store for the test rows. Training features cover the first
    ``train_months`` months, test features the rest.

    Raises:
        DatasetError: If the store is too short, the instance has no usable
            peers, or the training rows hold a single class
    """
    start = store.corpus_start
    _, last = store.time_range()
    cut = month_end(start, train_months)
    if last < cut:
        raise DatasetError(f"Local task needs more than {train_months} months of data")
    train_window = TimeWindow(start, cut)
    test_window = TimeWindow(cut, last + 1)
    times = policy_times if policy_times is not None else first_policy_times(store)
    own = {target: at for (source, target), at in times.items() if source == instance}
    observed = set(store.instances())
    peers = sorted(p for p in store.known_peers(instance) if p in observed and p != instance)
    if not peers:
        raise DatasetError(f"{instance} has no observed peers")

    train_rows, test_rows = [], []
    for peer in peers:
        at = own.get(peer)
        try:
            train_rows.append((peer, extract_features(store, peer, train_window),
                               int(at is not None and at < cut)))
        except FeatureError:
            pass
        try:
            test_rows.append((peer, extract_features(store, peer, test_window),
                              int(at is not None and at < test_window.end)))
        except FeatureError:
            pass
    if not train_rows or not test_rows:
        raise DatasetError(f"{instance}: no peer has features in both periods")
    if len({r[2] for r in train_rows}) < 2:
        raise DatasetError(f"{instance}: training peers hold a single class")
    transforms = BoxCoxTransforms.fit([r[1] for r in train_rows])
    train_set = _to_dataset([r[0] for r in train_rows], [r[1] for r in train_rows],
                            [r[2] for r in train_rows], [cut - 1] * len(train_rows), transforms)
    test_set = _to_dataset([r[0] for r in test_rows], [r[1] for r in test_rows],
                           [r[2] for r in test_rows], [last] * len(test_rows), transforms)
    return train_set, test_set


def ablate_post_features(dataset: Dataset) -> Dataset:
    """Drop posts and posts_tr.

    Raises:
        DatasetError: If either column is absent
    """
    return dataset.drop_columns(POST_VOLUME_FEATURES)


# Experiments

@dataclass
class ExperimentResult:
    """Outcome of one train/evaluate run."""
    task: str
    family: str
    params: Dict[str, Any]
    cv_score: float
    metrics: EvalMetrics
    baseline: EvalMetrics
    n_train: int
    n_test: int
    positives_train: int
    positives_test: int
    importance: List[Tuple[str, float]] = field(default_factory=list)
    month: Optional[int] = None
    lambdas: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        result = {
            "task": self.task,
            "family": self.family,
            "params": self.params,
            "cv_f1": self.cv_score,
            "metrics": self.metrics.to_dict(),
            "baseline": self.baseline.to_dict(),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "positives_train": self.positives_train,
            "positives_test": self.positives_test,
            "importance": [{"feature": name, "weight": w} for name, w in self.importance],
            "lambdas": self.lambdas,
        }
        if self.month is not None:
            result["month"] = self.month
        return result


def _experiment(task: str, family: Family, train_set: Dataset, test_set: Dataset,
                grid: Optional[HyperGrid], seed: int, folds: int = CV_FOLDS, n_jobs: int = 1,
                month: Optional[int] = None) -> Tuple[TrainedModel, ExperimentResult]:
    model = train(family, train_set, grid=grid, seed=seed, folds=folds, n_jobs=n_jobs)
    metrics = evaluate(model, test_set)
    result = ExperimentResult(
        task=task,
        family=family.value,
        params=dict(model.params),
        cv_score=model.cv_score,
        metrics=metrics,
        baseline=baseline_metrics(test_set),
        n_train=len(train_set),
        n_test=len(test_set),
        positives_train=train_set.class_counts[1],
        positives_test=test_set.class_counts[1],
        importance=feature_importance(model) if family.explainable else [],
        month=month,
        lambdas=dict(train_set.lambdas),
    )
    return model, result


def run_global(store: Store, family: Union[str, Family], grid: Optional[HyperGrid] = None, seed: int = 0,
               ablate: bool = False, n_jobs: int = 1,
               split: float = GLOBAL_TRAIN_FRACTION) -> Tuple[TrainedModel, ExperimentResult]:
    """Train and evaluate one family on the global task.

    Args:
        store: Store to read
        family: Model family tag
        grid: Grid to search; the family's full grid by default
        seed: Seeds the split, the folds and the estimator
        ablate: Drop the post-volume features first
        n_jobs: Parallel grid fits
        split: Training fraction

    Returns:
        The refitted model and its test-set result
    """
    family = Family.from_string(family)
    train_set, test_set = build_global_dataset(store, split=split, seed=seed)
    if ablate:
        train_set, test_set = ablate_post_features(train_set), ablate_post_features(test_set)
    task = "global-ablated" if ablate else "global"
    model, result = _experiment(task, family, train_set, test_set, grid, seed, n_jobs=n_jobs)
    logger.info("%s/%s: test F1 %.3f (all-negative baseline %.3f)", task, family.value,
                result.metrics.f1, result.baseline.f1)
    return model, result


def run_windows(store: Store, family: Union[str, Family], grid: Optional[HyperGrid] = None, seed: int = 0,
                months: int = WINDOW_MONTHS, n_jobs: int = 1) -> List[ExperimentResult]:
    """Run the time-window task for every available horizon.

    Horizons whose training rows cannot be stratified are skipped with a
    warning.
    """
    family = Family.from_string(family)
    results = []
    for split in build_window_datasets(store, months=months):
        try:
            _, result = _experiment("window", family, split.train, split.test, grid, seed,
                                    n_jobs=n_jobs, month=split.month)
        except DatasetError as e:
            logger.warning("Skipping window month %d: %s", split.month, e)
            continue
        logger.info("window %d/%s: test F1 %.3f", split.month, family.value, result.metrics.f1)
        results.append(result)
    return results


def best_window(results: Sequence[ExperimentResult]) -> ExperimentResult:
    """The window result with the highest test F1; the earliest month on ties.

    Raises:
        DatasetError: If there are no results
    """
    if not results:
        raise DatasetError("No window experiments to compare")
    return max(results, key=lambda r: (r.metrics.f1, -(r.month or 0)))


@dataclass
class LocalResult:
    """Outcome of one instance's local experiment, or why it was skipped."""
    domain: str
    post_count: int
    n_train: int = 0
    n_test: int = 0
    positives: int = 0
    folds: int = 0
    metrics: Optional[EvalMetrics] = None
    params: Dict[str, Any] = field(default_factory=dict)
    skipped: Optional[str] = None

    @property
    def large(self) -> bool:
        return self.post_count > LARGE_INSTANCE_POSTS

    def to_dict(self) -> Dict[str, Any]:
        return {
            "domain": self.domain,
            "post_count": self.post_count,
            "large": self.large,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "positives": self.positives,
            "folds": self.folds,
            "metrics": self.metrics.to_dict() if self.metrics is not None else None,
            "params": self.params,
            "skipped": self.skipped,
        }


def _local_job(store: Store, instance: InstanceRef, family: Family, grid: Optional[HyperGrid],
               seed: int, policy_times: PolicyTimes) -> LocalResult:
    snapshot = store.latest_snapshot(instance)
    result = LocalResult(instance.domain, snapshot.post_count if snapshot is not None else 0)
    try:
        train_set, test_set = build_local_dataset(store, instance, policy_times=policy_times)
        minority = min(train_set.class_counts)
        if minority < 2:
            raise DatasetError(f"{instance}: only {minority} training peer(s) in the minority class")
        folds = min(CV_FOLDS, minority)
        if folds < CV_FOLDS:
            logger.info("%s: %d-fold cross-validation, minority class has %d peers", instance, folds, minority)
        model = train(family, train_set, grid=grid, seed=seed, folds=folds)
        result.metrics = evaluate(model, test_set)
    except DatasetError as e:
        result.skipped = str(e)
        logger.warning("Skipping local model for %s: %s", instance, e)
        return result
    result.n_train, result.n_test = len(train_set), len(test_set)
    result.positives = train_set.class_counts[1]
    result.folds = folds
    result.params = dict(model.params)
    logger.debug("local %s: test F1 %.3f", instance, result.metrics.f1)
    return result


def run_local(store: Store, family: Union[str, Family], grid: Optional[HyperGrid] = None, seed: int = 0,
              instances: Optional[Iterable[InstanceRef]] = None, max_workers: int = 4) -> List[LocalResult]:
    """Train one model per instance over its own peers.

    Jobs run on a bounded thread pool; results are ordered by domain.
    Instances that cannot be trained are returned with ``skipped`` set.
    """
    family = Family.from_string(family)
    candidates = sorted(instances) if instances is not None else store.instances()
    policy_times = first_policy_times(store)
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        futures = [pool.submit(_local_job, store, i, family, grid, seed, policy_times) for i in candidates]
        results = [f.result() for f in futures]
    return sorted(results, key=lambda r: r.domain)


def local_summary(results: Sequence[LocalResult]) -> Dict[str, Any]:
    """Mean F1, share of good models and the large/small instance split."""
    done = [r for r in results if r.metrics is not None]
    large = [r.metrics.f1 for r in done if r.large]
    small = [r.metrics.f1 for r in done if not r.large]
    good = [r for r in done if r.metrics.f1 >= GOOD_LOCAL_F1]
    return {
        "trained": len(done),
        "skipped": len(results) - len(done),
        "mean_f1": mean(r.metrics.f1 for r in done) if done else None,
        "good_fraction": len(good) / len(done) if done else None,
        "good_large_fraction": sum(r.large for r in good) / len(good) if good else None,
        "large_mean_f1": mean(large) if large else None,
        "small_mean_f1": mean(small) if small else None,
        "large_threshold_posts": LARGE_INSTANCE_POSTS,
    }


# Watchlists

def candidate_dataset(store: Store, model: TrainedModel, window: Optional[TimeWindow] = None) -> Dataset:
    """Feature rows for every instance observed in ``window``, in the model's columns.

    Known global labels are attached; instances outside the labelled
    population get 0.
    """
    window = window or _full_window(store)
    transforms = BoxCoxTransforms(dict(model.lambdas))
    labels = {item.instance: item.label for item in label_instances(store, until=window.end)}
    instances, rows, y = [], [], []
    for instance in store.instances():
        try:
            values = transforms.apply(extract_features(store, instance, window)).as_dict()
        except FeatureError:
            continue
        instances.append(instance.domain)
        rows.append([values[name] for name in model.header])
        y.append(labels.get(instance, 0))
    return Dataset(
        header=model.header,
        X=np.asarray(rows, dtype=float).reshape(-1, len(model.header)),
        y=y,
        instances=instances,
        timestamps=[window.end - 1] * len(y),
        lambdas=dict(model.lambdas),
    )


def generate_watchlist(model: TrainedModel, candidates: Dataset, threshold: float = DECISION_THRESHOLD,
                       top_k: Optional[int] = None, explain: bool = True) -> List[WatchlistEntry]:
    """Rank candidates by score.

    Args:
        model: Trained model
        candidates: Rows in the model's columns
        threshold: Minimum score kept when ``top_k`` is not given
        top_k: Keep the k best instead of thresholding
        explain: Attach the top contributing features (LR, RF, GBT only)

    Returns:
        Entries ranked 1..n by score descending, then domain ascending
    """
    if len(candidates) == 0:
        return []
    scores = np.atleast_1d(predict_proba(model, candidates.X))
    order = sorted(range(len(candidates)), key=lambda i: (-float(scores[i]), candidates.instances[i]))
    if top_k is not None:
        chosen = order[:top_k]
    else:
        chosen = [i for i in order if scores[i] >= threshold]
    entries = []
    for rank, i in enumerate(chosen, start=1):
        features = None
        if explain and model.family.explainable:
            ranked = contributions(model, candidates.X[i])
            features = tuple(name for name, _ in ranked[:TOP_CONTRIBUTING_FEATURES])
        entries.append(WatchlistEntry(InstanceRef(candidates.instances[i]), float(scores[i]), rank, features))
    return entries


def watchlist_to_json(entries: Sequence[WatchlistEntry]) -> str:
    return json.dumps([e.to_dict() for e in entries], indent=2, sort_keys=True) + "\n"


def write_watchlist(entries: Sequence[WatchlistEntry], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(watchlist_to_json(entries), encoding="utf-8")
    return path


def results_to_json(results: Sequence[Any]) -> List[Mapping[str, Any]]:
    return [r.to_dict() for r in results]
