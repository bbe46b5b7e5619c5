"""Instance feature extraction.

This module computes the 38-feature vector of an instance over a time
window, the 16-feature selected projection, and the Box-Cox machinery
used for the four transformed count features. It also holds the post
tokenizer and hate-lexicon matcher the crawler uses to turn timeline
statuses into anonymous counters.
"""

import logging
import re
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from bs4 import BeautifulSoup
from scipy import optimize, special, stats

from .constants import (
    ACTION_FEATURES,
    BOX_COX_FEATURES,
    BOX_COX_LAMBDA_BOUNDS,
    FEATURE_NAMES,
    HASHTAG_FEATURES,
    SELECTED_FEATURES,
)
from .exceptions import FeatureError, LexiconError, UndefinedStatisticError
from .models import InstanceRef, Post, TimeWindow
from .utils import write_csv

logger = logging.getLogger(__name__)

# Tokenizer

URL_RE = re.compile(r"[a-zA-Z][a-zA-Z0-9+.-]*://\S+")
MENTION_RE = re.compile(r"(?<![\w@/])@(\w+)(?:@([\w-]+(?:\.[\w-]+)+))?")
HASHTAG_RE = re.compile(r"(?<![\w&/])#(\w+)")
TOKEN_RE = re.compile(r"[^\W_]+")

_BLOCK_TAGS = ("p", "div", "li", "blockquote", "pre", "h1", "h2", "h3", "h4", "h5", "h6")


class TokenizedPost(NamedTuple):
    tokens: Tuple[str, ...]
    mention_count: int
    hashtag_count: int
    url_count: int


def strip_markup(content: str) -> str:
    """Return the visible text of an HTML post body."""
    if not content:
        return ""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        soup = BeautifulSoup(content, "html.parser")
    for tag in soup.find_all("br"):
        tag.replace_with("\n")
    for tag in soup.find_all(_BLOCK_TAGS):
        tag.append("\n")
    return soup.get_text()


def tokenize_post(content: str) -> TokenizedPost:
    """Split a post body into lowercase tokens and mention/hashtag/URL counts.

    URLs are removed first, then mentions (``@name`` or ``@name@domain``)
    and hashtags; the remainder is split on anything not alphanumeric.
    """
    text = strip_markup(content)
    if not text.strip():
        return TokenizedPost((), 0, 0, 0)
    text, urls = URL_RE.subn(" ", text)
    text, mentions = MENTION_RE.subn(" ", text)
    text, hashtags = HASHTAG_RE.subn(" ", text)
    tokens = tuple(TOKEN_RE.findall(text.lower()))
    return TokenizedPost(tokens, mentions, hashtags, urls)


@dataclass(frozen=True)
class HateLexicon:
    """Lowercase hate terms; multi-word terms match contiguous token runs."""
    terms: FrozenSet[str]
    _phrases: Dict[str, Tuple[Tuple[str, ...], ...]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        phrases: Dict[str, List[Tuple[str, ...]]] = {}
        for term in self.terms:
            words = tuple(TOKEN_RE.findall(term.lower()))
            if words:
                phrases.setdefault(words[0], []).append(words)
        object.__setattr__(
            self, "_phrases", {k: tuple(sorted(v, key=len)) for k, v in phrases.items()}
        )

    @classmethod
    def from_terms(cls, terms: Iterable[str]) -> "HateLexicon":
        return cls(frozenset(t.strip().lower() for t in terms if t.strip()))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "HateLexicon":
        """Load one term per line; blank lines and ``#`` comments are skipped.

        Raises:
            LexiconError: If the file is missing or holds no terms
        """
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise LexiconError(f"Cannot read lexicon {path}: {e}") from e
        lexicon = cls.from_terms(line for line in lines if not line.lstrip().startswith("#"))
        if not lexicon.terms:
            raise LexiconError(f"Lexicon {path} holds no terms")
        return lexicon

    def __len__(self) -> int:
        return len(self.terms)

    def matches_at(self, tokens: Sequence[str], index: int) -> bool:
        for words in self._phrases.get(tokens[index], ()):
            if tuple(tokens[index:index + len(words)]) == words:
                return True
        return False


def count_hate_words(tokens: Sequence[str], lexicon: HateLexicon) -> int:
    """Count lexicon hits, once per starting token position.

    Raises:
        LexiconError: If the lexicon is empty
    """
    if not lexicon.terms:
        raise LexiconError("Hate lexicon is empty")
    return sum(1 for i in range(len(tokens)) if lexicon.matches_at(tokens, i))


# Box-Cox


def box_cox(value: float, lam: float) -> float:
    """Box-Cox transform of one positive value.

    Raises:
        FeatureError: If ``value`` is not positive
    """
    if not value > 0:
        raise FeatureError(f"Box-Cox requires a positive value, got {value!r}")
    return float(special.boxcox(value, lam))


def fit_box_cox(values: Sequence[float]) -> float:
    """Return the λ in [-5, 5] maximising the Box-Cox log-likelihood.

    Raises:
        FeatureError: If any value is not positive
        UndefinedStatisticError: If the input is constant
    """
    data = np.asarray(values, dtype=float)
    if data.size == 0:
        raise FeatureError("Cannot fit Box-Cox on an empty sample")
    if np.any(data <= 0):
        raise FeatureError("Box-Cox requires strictly positive values")
    if np.ptp(data) == 0:
        raise UndefinedStatisticError("Box-Cox λ is undefined for a constant sample")
    result = optimize.minimize_scalar(
        lambda lam: -stats.boxcox_llf(lam, data),
        bounds=BOX_COX_LAMBDA_BOUNDS,
        method="bounded",
        options={"xatol": 1e-6},
    )
    return float(result.x)


# Feature vector


@dataclass(frozen=True)
class FeatureVector:
    """The 38 features of one instance over one window, in table order."""
    users: int = 0
    posts: int = 0
    hate_count: int = 0
    url_count: int = 0
    reject: int = 0
    nsfw: int = 0
    media_removal: int = 0
    federated_timeline_removal: int = 0
    posts_tr: float = 0.0
    reject_deletes: int = 0
    quaran_inst: int = 0
    mentions_count: int = 0
    hate_avg: float = 0.0
    url_avg: float = 0.0
    hashtags_avg: float = 0.0
    mentions_avg: float = 0.0
    hashtags_count: int = 0
    hate_percent: float = 0.0
    url_percent: float = 0.0
    hashtags_percent: float = 0.0
    mentions_percent: float = 0.0
    followers: int = 0
    following: int = 0
    reblogs_count: int = 0
    replies_count: int = 0
    users_tr: float = 0.0
    hate_tr: float = 0.0
    url_tr: float = 0.0
    accept: int = 0
    report_removal: int = 0
    avatar_removal: int = 0
    banner_removal: int = 0
    followers_only: int = 0
    active_halfyear: int = 0
    active_month: int = 0
    hash_ftr: int = 0
    hash_rej: int = 0
    hash_sen: int = 0

    def as_row(self) -> List[float]:
        return [getattr(self, name) for name in FEATURE_NAMES]

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "FeatureVector":
        kinds = {f.name: f.type for f in fields(cls)}
        return cls(**{
            name: (float(data[name]) if kinds[name] in (float, "float") else int(float(data[name])))
            for name in FEATURE_NAMES if name in data
        })


if tuple(f.name for f in fields(FeatureVector)) != FEATURE_NAMES:
    raise ImportError("FeatureVector fields do not match FEATURE_NAMES")


@dataclass(frozen=True)
class SelectedFeatures:
    """A named projection of a FeatureVector."""
    names: Tuple[str, ...]
    values: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.names)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, self.values))


def select_features(fv: FeatureVector, drop: Iterable[str] = ()) -> SelectedFeatures:
    """Project onto the 16 selected features, optionally dropping some.

    Raises:
        FeatureError: If a name in ``drop`` is not a selected feature
    """
    drop = tuple(drop)
    unknown = set(drop) - set(SELECTED_FEATURES)
    if unknown:
        raise FeatureError(f"Cannot drop unselected features: {sorted(unknown)}")
    names = tuple(name for name in SELECTED_FEATURES if name not in drop)
    return SelectedFeatures(names, tuple(getattr(fv, name) for name in names))


@dataclass
class PostCounters:
    """Sums over the posts of one window."""
    posts: int = 0
    hate_count: int = 0
    url_count: int = 0
    mentions_count: int = 0
    hashtags_count: int = 0
    hate_posts: int = 0
    url_posts: int = 0
    hashtag_posts: int = 0
    mention_posts: int = 0
    reblogs_count: int = 0
    replies_count: int = 0
    followers: int = 0
    following: int = 0

    @classmethod
    def from_posts(cls, posts: Iterable[Post]) -> "PostCounters":
        counters = cls()
        authors: Dict[str, Tuple[int, int, int]] = {}
        for post in posts:
            counters.posts += 1
            counters.hate_count += post.hate_hits
            counters.url_count += post.urls
            counters.mentions_count += post.mentions
            counters.hashtags_count += post.hashtags
            counters.hate_posts += post.hate_hits > 0
            counters.url_posts += post.urls > 0
            counters.hashtag_posts += post.hashtags > 0
            counters.mention_posts += post.mentions > 0
            counters.reblogs_count += post.reblogs_count
            counters.replies_count += post.replies_count
            if post.author_key:
                seen = authors.get(post.author_key)
                if seen is None or post.created_at >= seen[0]:
                    authors[post.author_key] = (post.created_at, post.author_followers, post.author_following)
        counters.followers = sum(a[1] for a in authors.values())
        counters.following = sum(a[2] for a in authors.values())
        return counters

    def avg(self, total: int) -> float:
        return total / self.posts if self.posts else 0.0

    def percent(self, hits: int) -> float:
        return 100.0 * hits / self.posts if self.posts else 0.0


def extract_features(store, instance: InstanceRef, window: TimeWindow,
                     transforms: Optional["BoxCoxTransforms"] = None) -> FeatureVector:
    """Compute the feature vector of ``instance`` over ``window``.

    Instance-level counts and the policy-action features come from the
    last successful snapshot inside the window; post features aggregate the
    stored posts created inside it. ``*_tr`` stay 0 unless ``transforms``
    (fitted on a training split) are given.

    Raises:
        FeatureError: If the instance has no successful snapshot in the window
    """
    snapshot = store.latest_snapshot(instance, window=window)
    if snapshot is None:
        raise FeatureError(f"{instance} has no snapshot in [{window.start}, {window.end})")
    counters = PostCounters.from_posts(store.posts(instance, window=window))
    policy = snapshot.policy_config
    values: Dict[str, float] = {
        "users": snapshot.user_count,
        "active_month": snapshot.active_month,
        "active_halfyear": snapshot.active_halfyear,
        "posts": counters.posts,
        "hate_count": counters.hate_count,
        "url_count": counters.url_count,
        "mentions_count": counters.mentions_count,
        "hashtags_count": counters.hashtags_count,
        "hate_avg": counters.avg(counters.hate_count),
        "url_avg": counters.avg(counters.url_count),
        "hashtags_avg": counters.avg(counters.hashtags_count),
        "mentions_avg": counters.avg(counters.mentions_count),
        "hate_percent": counters.percent(counters.hate_posts),
        "url_percent": counters.percent(counters.url_posts),
        "hashtags_percent": counters.percent(counters.hashtag_posts),
        "mentions_percent": counters.percent(counters.mention_posts),
        "followers": counters.followers,
        "following": counters.following,
        "reblogs_count": counters.reblogs_count,
        "replies_count": counters.replies_count,
    }
    for action, count in policy.action_counts().items():
        values[ACTION_FEATURES[action]] = count
    for rule, count in policy.hashtag_rules.to_dict().items():
        values[HASHTAG_FEATURES[rule]] = count
    vector = FeatureVector(**values)
    return transforms.apply(vector) if transforms is not None else vector


@dataclass(frozen=True)
class BoxCoxTransforms:
    """Per-feature λ fitted on a training split and frozen afterwards."""
    lambdas: Mapping[str, float]

    @classmethod
    def fit(cls, vectors: Sequence[FeatureVector]) -> "BoxCoxTransforms":
        """Fit λ for users_tr, posts_tr, hate_tr and url_tr on ``count + 1``.

        A constant training column cannot be fitted; it falls back to λ = 1.
        """
        lambdas = {}
        for target, source in BOX_COX_FEATURES.items():
            values = [getattr(v, source) + 1 for v in vectors]
            try:
                lambdas[target] = fit_box_cox(values)
            except (UndefinedStatisticError, FeatureError) as e:
                logger.warning("Box-Cox fit for %s failed (%s); using λ=1", target, e)
                lambdas[target] = 1.0
        return cls(lambdas)

    def apply(self, vector: FeatureVector) -> FeatureVector:
        updates = {
            target: box_cox(getattr(vector, source) + 1, self.lambdas[target])
            for target, source in BOX_COX_FEATURES.items()
            if target in self.lambdas
        }
        return replace(vector, **updates)

    def to_dict(self) -> Dict[str, float]:
        return dict(sorted(self.lambdas.items()))


@dataclass
class FeatureMatrix:
    """Feature vectors of several instances over one window."""
    instances: List[InstanceRef] = field(default_factory=list)
    vectors: List[FeatureVector] = field(default_factory=list)
    skipped: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.vectors)

    def apply(self, transforms: "BoxCoxTransforms") -> "FeatureMatrix":
        return FeatureMatrix(list(self.instances), [transforms.apply(v) for v in self.vectors], dict(self.skipped))

    def to_csv(self, path: Union[str, Path]) -> Path:
        rows = ([inst.domain] + vector.as_row() for inst, vector in zip(self.instances, self.vectors))
        return write_csv(path, ("domain",) + FEATURE_NAMES, rows)


def extract_matrix(store, window: TimeWindow, instances: Optional[Iterable[InstanceRef]] = None,
                   transforms: Optional[BoxCoxTransforms] = None) -> FeatureMatrix:
    """Extract every instance with a snapshot in ``window``; the rest are recorded as skipped."""
    matrix = FeatureMatrix()
    for instance in sorted(instances if instances is not None else store.instances()):
        try:
            vector = extract_features(store, instance, window, transforms=transforms)
        except FeatureError as e:
            logger.debug("Skipping %s: %s", instance, e)
            matrix.skipped[instance.domain] = str(e)
            continue
        matrix.instances.append(instance)
        matrix.vectors.append(vector)
    return matrix


def lexicon_hits(content: str, lexicon: Optional[HateLexicon]) -> Tuple[TokenizedPost, int]:
    """Tokenize one body and count its hate hits (0 without a lexicon)."""
    tokenized = tokenize_post(content)
    hits = count_hate_words(tokenized.tokens, lexicon) if lexicon is not None and lexicon.terms else 0
    return tokenized, hits
