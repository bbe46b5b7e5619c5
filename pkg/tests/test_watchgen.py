"""Tests for labelling, datasets, experiments and watchlists."""

import json
from unittest.mock import Mock

import numpy as np
import pytest

from fedwatch.constants import CV_FOLDS, MONTH_SECONDS, SELECTED_FEATURES
from fedwatch.exceptions import DatasetError
from fedwatch.learners import Dataset, EvalMetrics, Family, HyperGrid, TrainedModel, train
from fedwatch.models import CorpusParams, InstanceRef
from fedwatch.synthcorpus import generate_corpus
from fedwatch.watchgen import (
    ExperimentResult,
    LocalResult,
    ablate_post_features,
    best_window,
    build_global_dataset,
    build_local_dataset,
    build_window_datasets,
    candidate_dataset,
    generate_watchlist,
    inbound_first_times,
    label_instances,
    local_summary,
    run_global,
    run_local,
    run_windows,
    watchlist_to_json,
    write_watchlist,
)

A = InstanceRef("a.example")
B = InstanceRef("b.example")
C = InstanceRef("c.example")

RF_POINT = HyperGrid.single("rf", n_estimators=50, max_depth=8)


def mock_model(scores, header=("x",), family=Family.RF):
    """A TrainedModel whose estimator returns fixed positive-class scores."""
    estimator = Mock()
    estimator.predict_proba.return_value = np.array([[1 - s, s] for s in scores])
    return TrainedModel(family, estimator, params={}, header=header, seed=0)


def candidates(domains):
    return Dataset(("x",), np.zeros((len(domains), 1)), [0] * len(domains), instances=list(domains))


def result(month, f1):
    metrics = EvalMetrics(0.0, 0.0, 0.0, f1)
    return ExperimentResult("window", "rf", {}, 0.0, metrics, metrics, 1, 1, 0, 0, month=month)


def test_inbound_first_times():
    """Test the earliest inbound action wins and self-listing is ignored."""
    times = {(A, B): 300, (C, B): 200, (A, A): 50, (B, C): 400}
    assert inbound_first_times(times) == {B: 200, C: 400}


def test_label_instances(store, make_snapshot):
    """Test labels come from other instances' targets; unexposed instances are left out."""
    store.append_snapshot(make_snapshot("a.example", 100))
    store.append_snapshot(make_snapshot("b.example", 100))
    store.append_snapshot(make_snapshot("c.example", 100, exposed=False))
    store.append_snapshot(make_snapshot("a.example", 200, targets=(("reject", "b.example"),)))
    store.append_snapshot(make_snapshot("b.example", 200))

    labels = {item.instance: item for item in label_instances(store)}
    assert set(labels) == {A, B}
    assert labels[A].label == 0
    assert labels[B].label == 1
    assert labels[B].first_targeted_at == 200

    early = {item.instance: item.label for item in label_instances(store, until=150)}
    assert early == {A: 0, B: 0}


def test_generate_watchlist_threshold():
    """Test entries above the threshold are ranked by score."""
    model = mock_model([0.9, 0.4, 0.6])
    entries = generate_watchlist(model, candidates(["a.example", "b.example", "c.example"]), explain=False)
    assert [(e.instance, e.rank) for e in entries] == [(A, 1), (C, 2)]
    assert entries[0].score == pytest.approx(0.9)
    assert entries[0].top_contributing_features is None


def test_generate_watchlist_top_k_and_ties():
    """Test top_k ignores the threshold and equal scores order by domain."""
    model = mock_model([0.2, 0.3, 0.3])
    entries = generate_watchlist(model, candidates(["z.example", "c.example", "b.example"]), top_k=2,
                                 explain=False)
    assert [e.instance.domain for e in entries] == ["b.example", "c.example"]
    assert [e.rank for e in entries] == [1, 2]


def test_generate_watchlist_empty():
    """Test no candidates give an empty watchlist."""
    assert generate_watchlist(mock_model([]), candidates([])) == []


def test_generate_watchlist_explains():
    """Test explainable families attach their top contributing features."""
    rng = np.random.default_rng(0)
    X = np.column_stack([np.r_[rng.uniform(0, 2, 20), rng.uniform(8, 10, 20)], rng.uniform(0, 1, (40, 3))])
    dataset = Dataset(("signal", "n1", "n2", "n3"), X, [0] * 20 + [1] * 20,
                      instances=[f"i{n:02d}.example" for n in range(40)])
    model = train("rf", dataset, grid=HyperGrid.single("rf", n_estimators=20, max_depth=3))
    entries = generate_watchlist(model, dataset)
    assert len(entries) == 20
    assert all(len(e.top_contributing_features) == 3 for e in entries)
    assert all(e.top_contributing_features[0] == "signal" for e in entries)


def test_watchlist_json(tmp_path):
    """Test the JSON rendering and file output."""
    entries = generate_watchlist(mock_model([0.75]), candidates(["a.example"]), explain=False)
    assert json.loads(watchlist_to_json(entries)) == [{"domain": "a.example", "rank": 1, "score": 0.75}]
    path = write_watchlist(entries, tmp_path / "out" / "watchlist.json")
    assert json.loads(path.read_text())[0]["domain"] == "a.example"


def test_ablate_post_features():
    """Test posts and posts_tr are dropped and nothing else."""
    dataset = Dataset(SELECTED_FEATURES, np.zeros((2, 16)), [0, 1])
    ablated = ablate_post_features(dataset)
    assert len(ablated.header) == 14
    assert "posts" not in ablated.header and "posts_tr" not in ablated.header
    with pytest.raises(DatasetError):
        ablate_post_features(ablated)


def test_best_window():
    """Test the highest F1 wins and ties go to the earliest month."""
    assert best_window([result(1, 0.5), result(2, 0.8), result(3, 0.8)]).month == 2
    with pytest.raises(DatasetError):
        best_window([])


def test_local_summary():
    """Test the large/small split and the share of good models."""
    good = EvalMetrics(0.9, 0.9, 0.9, 0.9)
    poor = EvalMetrics(0.5, 0.2, 0.2, 0.2)
    results = [
        LocalResult("a.example", 60_000, metrics=good),
        LocalResult("b.example", 100, metrics=poor),
        LocalResult("c.example", 100, metrics=good),
        LocalResult("d.example", 100, skipped="no peers"),
    ]
    summary = local_summary(results)
    assert summary["trained"] == 3
    assert summary["skipped"] == 1
    assert summary["mean_f1"] == pytest.approx(2.0 / 3)
    assert summary["good_fraction"] == pytest.approx(2 / 3)
    assert summary["good_large_fraction"] == pytest.approx(0.5)
    assert summary["large_mean_f1"] == pytest.approx(0.9)
    assert summary["small_mean_f1"] == pytest.approx(0.55)


def test_labels_match_manifest(small_corpus):
    """Test store-derived labels equal the generator's ground truth."""
    store, manifest = small_corpus
    labels = {item.instance.domain: item.label for item in label_instances(store)}
    exposed = {d for d, info in manifest.instances.items() if not info["unexposed"]}
    assert set(labels) == exposed
    assert all(labels[d] == manifest.labels[d] for d in exposed)


def test_build_global_dataset(tmp_path):
    """Test the stratified 80:20 split over the selected features."""
    params = CorpusParams(n_instances=60, months=3, cadence_seconds=10 * 86400, seed=5, text_posts=0,
                          controversial_fraction=0.3, response_probability=1.0)
    store, _ = generate_corpus(params, tmp_path / "corpus")
    train_set, test_set = build_global_dataset(store)
    assert train_set.header == SELECTED_FEATURES
    assert len(train_set) + len(test_set) == len(label_instances(store))
    assert len(test_set) == pytest.approx(0.2 * (len(train_set) + len(test_set)), abs=1)
    assert not set(train_set.instances) & set(test_set.instances)
    assert train_set.lambdas == test_set.lambdas


def test_build_window_datasets(small_corpus):
    """Test nine horizons, each testing only on later months."""
    store, _ = small_corpus
    splits = build_window_datasets(store)
    assert [s.month for s in splits] == list(range(1, 10))
    for split in splits:
        assert max(split.train.timestamps) < min(split.test.timestamps)
        assert split.train.header == SELECTED_FEATURES


def test_build_local_dataset_errors(store, make_snapshot):
    """Test a short store cannot be split into local train and test months."""
    store.append_snapshot(make_snapshot("a.example", 100))
    with pytest.raises(DatasetError):
        build_local_dataset(store, A)


HUB = InstanceRef("hub.example")
HUB_T0 = 1_000_000
PEERS = [f"p{i:02d}.example" for i in range(20)]


@pytest.fixture
def hub_store(store, make_snapshot):
    """hub.example federates with 20 peers and rejects the first three in month 2."""
    late = HUB_T0 + 9 * MONTH_SECONDS
    rejected = tuple(("reject", domain) for domain in PEERS[:3])
    for i, domain in enumerate(PEERS):
        store.append_snapshot(make_snapshot(domain, HUB_T0, users=10 + i))
        store.append_snapshot(make_snapshot(domain, late, users=10 + i))
    store.append_snapshot(make_snapshot("hub.example", HUB_T0))
    store.record_peers(HUB, [InstanceRef(d) for d in PEERS], HUB_T0)
    store.append_snapshot(make_snapshot("hub.example", HUB_T0 + MONTH_SECONDS, targets=rejected))
    store.append_snapshot(make_snapshot("hub.example", late, targets=rejected))
    return store


def test_build_local_dataset_rows_and_labels(hub_store):
    """Test one row per peer in each period, positive exactly where the instance acts."""
    train_set, test_set = build_local_dataset(hub_store, HUB)
    assert train_set.instances == PEERS
    assert test_set.instances == PEERS
    assert train_set.class_counts == (17, 3)
    assert test_set.class_counts == (17, 3)
    assert [d for d, y in zip(test_set.instances, test_set.y) if y] == PEERS[:3]


def test_build_local_dataset_ignores_third_party_targets(hub_store, make_snapshot):
    """Test a peer targeted only by another instance stays negative for the local task."""
    late = HUB_T0 + 9 * MONTH_SECONDS
    hub_store.append_snapshot(make_snapshot("third.example", HUB_T0, targets=(("reject", PEERS[19]),)))
    hub_store.append_snapshot(make_snapshot("third.example", late, targets=(("reject", PEERS[19]),)))
    _, test_set = build_local_dataset(hub_store, HUB)
    labels = dict(zip(test_set.instances, test_set.y.tolist()))
    assert labels[PEERS[19]] == 0
    assert test_set.class_counts == (17, 3)
    assert {item.instance.domain: item.label for item in label_instances(hub_store)}[PEERS[19]] == 1


def test_local_labels_agree_with_global_labels_for_a_sole_issuer(hub_store):
    """Test when one instance issues every policy its local labels are the global labels of its peers."""
    _, test_set = build_local_dataset(hub_store, HUB)
    local = dict(zip(test_set.instances, test_set.y.tolist()))
    global_labels = {item.instance.domain: item.label for item in label_instances(hub_store)
                     if item.instance.domain in local}
    assert local == global_labels


def test_local_result_records_folds(small_corpus):
    """Test trained local results report the fold count they were validated with."""
    store, manifest = small_corpus
    moderating = [InstanceRef(d) for d, info in sorted(manifest.instances.items()) if info["moderating"]]
    results = run_local(store, "rf", grid=HyperGrid.single("rf", n_estimators=5, max_depth=2),
                        instances=moderating)
    for result in results:
        record = result.to_dict()
        if result.metrics is None:
            assert record["folds"] == 0
        else:
            assert 2 <= record["folds"] <= CV_FOLDS
            assert record["folds"] == min(CV_FOLDS, record["positives"], record["n_train"] - record["positives"])


def test_run_local_results_are_ordered(small_corpus):
    """Test every requested instance gets a result, trained or skipped."""
    store, manifest = small_corpus
    domains = sorted(manifest.instances)[:4]
    results = run_local(store, "rf", grid=HyperGrid.single("rf", n_estimators=5, max_depth=2),
                        instances=[InstanceRef(d) for d in domains], max_workers=2)
    assert [r.domain for r in results] == domains
    assert all((r.metrics is None) == (r.skipped is not None) for r in results)


def test_candidate_dataset_uses_model_columns(small_corpus):
    """Test candidates are laid out in the model's header."""
    store, _ = small_corpus
    model = mock_model([], header=("posts", "hate_avg"))
    dataset = candidate_dataset(store, model)
    assert dataset.header == ("posts", "hate_avg")
    assert len(dataset) == len(store.instances())


@pytest.mark.slow
def test_global_rf_beats_lr(default_corpus):
    """Test the forest reaches F1 0.7 on the global task and is no worse than LR."""
    store, _ = default_corpus
    _, rf = run_global(store, "rf", grid=RF_POINT)
    _, lr = run_global(store, "lr", grid=HyperGrid.single("lr", C=1))
    assert rf.metrics.f1 >= 0.70
    assert rf.metrics.f1 >= lr.metrics.f1
    assert rf.importance


@pytest.mark.slow
def test_ablation_lowers_f1(default_corpus):
    """Test dropping the post-volume features costs F1 but still beats all-negative."""
    store, _ = default_corpus
    _, full = run_global(store, "rf", grid=RF_POINT)
    _, ablated = run_global(store, "rf", grid=RF_POINT, ablate=True)
    assert ablated.task == "global-ablated"
    assert ablated.metrics.f1 < full.metrics.f1
    assert ablated.metrics.f1 > ablated.baseline.f1


@pytest.mark.slow
def test_watchlist_recalls_controversial(default_corpus):
    """Test planted controversial instances reach the top of the watchlist."""
    store, manifest = default_corpus
    model, _ = run_global(store, "rf", grid=RF_POINT)
    pool = candidate_dataset(store, model)
    top_k = sum(manifest.labels.values())
    listed = {e.instance.domain for e in generate_watchlist(model, pool, top_k=top_k, explain=False)}
    controversial = set(manifest.controversial)
    assert len(listed & controversial) / len(controversial) >= 0.7


@pytest.mark.slow
def test_window_experiments(default_corpus):
    """Test nine window experiments and the best one is at least the first."""
    store, _ = default_corpus
    results = run_windows(store, "rf", grid=RF_POINT)
    assert [r.month for r in results] == list(range(1, 10))
    first = next(r for r in results if r.month == 1)
    assert best_window(results).metrics.f1 >= first.metrics.f1


@pytest.mark.slow
def test_local_experiments(default_corpus):
    """Test per-instance models train on the moderating instances."""
    store, manifest = default_corpus
    moderating = [InstanceRef(d) for d, info in manifest.instances.items() if info["moderating"]]
    results = run_local(store, "rf", grid=RF_POINT, instances=moderating)
    summary = local_summary(results)
    assert summary["trained"] > 0
    assert 0.0 <= summary["mean_f1"] <= 1.0


@pytest.mark.slow
def test_local_models_favour_large_instances(default_corpus):
    """Test large moderating instances get better local models than small ones."""
    store, manifest = default_corpus
    moderating = [InstanceRef(d) for d, info in manifest.instances.items() if info["moderating"]]
    results = run_local(store, "rf", grid=RF_POINT, instances=moderating)
    summary = local_summary(results)
    assert summary["large_mean_f1"] is not None
    assert summary["small_mean_f1"] is not None
    assert summary["large_mean_f1"] > summary["small_mean_f1"]
    assert all(2 <= r.folds <= CV_FOLDS for r in results if r.metrics is not None)


@pytest.mark.slow
def test_post_volume_drives_size_only_labels(tmp_path):
    """Test posts rank among the top features when only size attracts policies."""
    store, _ = generate_corpus(CorpusParams(controversial_fraction=0.0), tmp_path / "corpus")
    _, outcome = run_global(store, "rf", grid=RF_POINT)
    top3 = [name for name, _ in outcome.importance[:3]]
    assert "posts" in top3 or "posts_tr" in top3
