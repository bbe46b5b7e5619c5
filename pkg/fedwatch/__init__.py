"""Fediverse moderation policy toolkit.

This package crawls Pleroma instances over time, parses the moderation
policies they publish, describes how those policies spread and how fast
administrators react, and trains models that suggest a watchlist of
instances likely to attract moderation.

Main Components:
    - Store: Append-only snapshot/edge/post store
    - Crawler: Polite async crawler over the federation API
    - parse_metadata / parse_policies: MRF policy parsing
    - extract_features: The 38-feature instance vector
    - train / evaluate: Grid-searched LR, MLP, RF and GBT models
    - run_global / run_windows / run_local: Labelled experiments
    - generate_watchlist: Ranked watchlists with contributing features
    - generate_corpus: Deterministic synthetic fediverse

Example:
    ```python
    from fedwatch import CorpusParams, generate_corpus, run_global

    store, manifest = generate_corpus(CorpusParams(seed=1), "corpus")
    model, result = run_global(store, "rf", seed=1)
    print(f"Test F1: {result.metrics.f1:.2f}")
    ```
"""

__version__ = "0.1.0"

from .crawler import Crawler, crawl_cycle
from .exceptions import (
    DatasetError,
    FeatureError,
    FedwatchConfigError,
    FedwatchError,
    FetchError,
    InsufficientDataError,
    LexiconError,
    ModelArtifactError,
    PolicyParseError,
    StoreError,
    TimestampRegressionError,
    UndefinedStatisticError,
    UnexposedPolicyError,
    UnsupportedFamilyError,
)
from .features import FeatureVector, HateLexicon, extract_features
from .learners import Dataset, EvalMetrics, Family, HyperGrid, evaluate, load_model, save_model, train
from .models import (
    CorpusParams,
    CrawlConfig,
    CrawlReport,
    FederationEdge,
    FetchOutcome,
    InstanceRef,
    InstanceSnapshot,
    PolicyConfig,
    Post,
    RunConfig,
    SimpleAction,
    TimeWindow,
)
from .policy import parse_metadata, parse_policies
from .store import Store
from .synthcorpus import CorpusManifest, generate_corpus
from .watchgen import generate_watchlist, run_global, run_local, run_windows

__all__ = [
    "Crawler",
    "crawl_cycle",
    "Store",
    "parse_metadata",
    "parse_policies",
    "extract_features",
    "FeatureVector",
    "HateLexicon",
    "Dataset",
    "EvalMetrics",
    "Family",
    "HyperGrid",
    "train",
    "evaluate",
    "save_model",
    "load_model",
    "run_global",
    "run_windows",
    "run_local",
    "generate_watchlist",
    "generate_corpus",
    "CorpusManifest",
    "CorpusParams",
    "CrawlConfig",
    "CrawlReport",
    "FederationEdge",
    "FetchOutcome",
    "InstanceRef",
    "InstanceSnapshot",
    "PolicyConfig",
    "Post",
    "RunConfig",
    "SimpleAction",
    "TimeWindow",
    "FedwatchError",
    "FedwatchConfigError",
    "StoreError",
    "TimestampRegressionError",
    "FetchError",
    "PolicyParseError",
    "UnexposedPolicyError",
    "FeatureError",
    "LexiconError",
    "UndefinedStatisticError",
    "DatasetError",
    "UnsupportedFamilyError",
    "InsufficientDataError",
    "ModelArtifactError",
]
