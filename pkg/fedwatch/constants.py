"""Constants for fedwatch.

This module contains all fixed values shared across the package:
- Federation API paths (peers, instance metadata, public timeline, nodeinfo)
- Crawl defaults (cadence, politeness, timeouts)
- Store layout and record schema version
- SimplePolicy action names and version-gated default policies
- The 38 instance features and the 16-feature selected subset
- Hyper-parameter grids for the four model families
- CSV headers for every analytics report
"""


# API paths (appended to https://<domain>)
PEERS_PATH = "/api/v1/instance/peers"
INSTANCE_PATH = "/api/v1/instance"
TIMELINE_PATH = "/api/v1/timelines/public"
NODEINFO_WELL_KNOWN_PATH = "/.well-known/nodeinfo"
TIMELINE_PAGE_LIMIT = 40

USER_AGENT = "fedwatch/0.1.0 (+https://github.com/fedwatch/fedwatch; policy research crawler)"

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Crawl defaults
DEFAULT_CADENCE_SECONDS = 14400  # 4 hours
DEFAULT_PER_HOST_MIN_INTERVAL_MS = 1000
DEFAULT_MAX_CONCURRENCY = 8
DEFAULT_TIMEOUT_MS = 20000
DEFAULT_MAX_TIMELINE_PAGES = 5

# Time
SECONDS_PER_DAY = 86400
MONTH_SECONDS = 30 * SECONDS_PER_DAY  # months are 30-day blocks from corpus start

# Store layout
SCHEMA_VERSION = 1
SNAPSHOTS_FILE = "snapshots.ndjson"
EDGES_FILE = "edges.ndjson"
POSTS_FILE = "posts.ndjson"
META_FILE = "meta.json"

# SimplePolicy actions, in the order the features table lists them
SIMPLE_ACTIONS = (
    "reject",
    "accept",
    "nsfw",
    "media_removal",
    "federated_timeline_removal",
    "quarantine",
    "reject_deletes",
    "report_removal",
    "avatar_removal",
    "banner_removal",
    "followers_only",
)

# MRF hashtag rule lists exposed under mrf_hashtag
HASHTAG_RULE_KEYS = ("federated_timeline_removal", "reject", "sensitive")

# Policy names
SIMPLE_POLICY = "SimplePolicy"
NOOP_POLICY = "NoOpPolicy"

# Default policies, gated on the Pleroma version that introduced them
DEFAULTS_THRESHOLD_VERSION = (2, 3, 0)
PRE_THRESHOLD_DEFAULTS = frozenset({"ObjectAgePolicy", "NoOpPolicy"})
POST_THRESHOLD_DEFAULTS = frozenset({"ObjectAgePolicy", "NoOpPolicy", "TagPolicy", "HashtagPolicy"})

# Features, in table order
FEATURE_NAMES = (
    "users",
    "posts",
    "hate_count",
    "url_count",
    "reject",
    "nsfw",
    "media_removal",
    "federated_timeline_removal",
    "posts_tr",
    "reject_deletes",
    "quaran_inst",
    "mentions_count",
    "hate_avg",
    "url_avg",
    "hashtags_avg",
    "mentions_avg",
    "hashtags_count",
    "hate_percent",
    "url_percent",
    "hashtags_percent",
    "mentions_percent",
    "followers",
    "following",
    "reblogs_count",
    "replies_count",
    "users_tr",
    "hate_tr",
    "url_tr",
    "accept",
    "report_removal",
    "avatar_removal",
    "banner_removal",
    "followers_only",
    "active_halfyear",
    "active_month",
    "hash_ftr",
    "hash_rej",
    "hash_sen",
)

SELECTED_FEATURES = FEATURE_NAMES[:16]

POST_VOLUME_FEATURES = ("posts", "posts_tr")

# Feature name for each SimplePolicy action target count
ACTION_FEATURES = {
    "reject": "reject",
    "accept": "accept",
    "nsfw": "nsfw",
    "media_removal": "media_removal",
    "federated_timeline_removal": "federated_timeline_removal",
    "quarantine": "quaran_inst",
    "reject_deletes": "reject_deletes",
    "report_removal": "report_removal",
    "avatar_removal": "avatar_removal",
    "banner_removal": "banner_removal",
    "followers_only": "followers_only",
}

HASHTAG_FEATURES = {
    "federated_timeline_removal": "hash_ftr",
    "reject": "hash_rej",
    "sensitive": "hash_sen",
}

# Box-Cox transformed feature -> source count feature
BOX_COX_FEATURES = {
    "users_tr": "users",
    "posts_tr": "posts",
    "hate_tr": "hate_count",
    "url_tr": "url_count",
}

BOX_COX_LAMBDA_BOUNDS = (-5.0, 5.0)

# Model families and their grids. Points are enumerated with the first
# parameter varying slowest; ties in CV score resolve to the earliest point.
FAMILIES = ("lr", "mlp", "rf", "gbt")
EXPLAINABLE_FAMILIES = ("lr", "rf", "gbt")

HYPER_GRIDS = {
    "lr": {
        "C": (0.001, 0.01, 0.1, 1, 10, 100, 1000),
    },
    "mlp": {
        "hidden_layer_size": (10, 50, 100),
        "activation": ("relu", "tanh", "logistic"),
        "learning_rate_schedule": ("constant", "invscaling", "adaptive"),
    },
    "rf": {
        "n_estimators": (5, 50, 250),
        "max_depth": (2, 4, 8, 16, 32, None),
    },
    "gbt": {
        "n_estimators": (5, 50, 250, 500),
        "max_depth": (1, 3, 5, 7, 9),
        "learning_rate": (0.01, 0.1, 1, 10, 100),
    },
}

CV_FOLDS = 5
MLP_EPOCHS = 200
DECISION_THRESHOLD = 0.5

# Watchgen
GLOBAL_TRAIN_FRACTION = 0.8
MIN_CLASS_MEMBERS = 10
WINDOW_MONTHS = 9
LOCAL_TRAIN_MONTHS = 8
LARGE_INSTANCE_POSTS = 50000
GOOD_LOCAL_F1 = 0.6
TOP_CONTRIBUTING_FEATURES = 3

# Analytics
GROWTH_TOP_POLICIES = 5
MODERATOR_SPLIT_TOP_POLICIES = 15
LAG_GROUP_SIZE = 10
OTHERS_SERIES = "Others"
DEFAULT_GROWTH_BUCKET_DAYS = 30

# Report headers
FOOTPRINT_HEADER = ("policy_name", "pct_instances", "pct_users", "pct_posts")
GROWTH_HEADER = ("bucket_start", "policy_name", "pct_instances")
ADMINS_HEADER = ("admin_count", "pct_instances")
LAGS_HEADER = ("source", "target", "federated_at", "policy_at", "lag_days")
MODERATOR_SPLIT_HEADER = ("group", "metric", "key", "value")
ADMIN_GROWTH_HEADER = ("domain", "admins_first", "admins_last", "posts_first", "posts_last")
LAG_GROUPS_HEADER = ("group", "target", "policies_against", "mean_lag_days")
POLICY_TABLE_HEADER = ("policy_name", "pct_instances", "pct_users", "pct_posts", "instances", "growth_pct")
LAG_CDF_HEADER = ("lag_days", "cdf")
POSTS_BY_ADMINS_HEADER = ("admin_count", "post_count")
LAG_SUMMARY_HEADER = ("statistic", "value")
REPORTS = (
    "footprint", "growth", "admins", "posts_by_admins", "admin_growth", "lags",
    "lag_cdf", "lag_groups", "lag_summary", "moderator_split", "policy_table",
)

# Synthetic corpus defaults
SYNTH_START = 1608076800  # 2020-12-16T00:00:00Z
SYNTH_CADENCE_SECONDS = 86400
SYNTH_MONTHS = 10
SYNTH_OLD_VERSION = "2.2.2"
SYNTH_NEW_VERSION = "2.4.2"
SYNTH_ADMIN_DISTRIBUTION = {1: 0.7, 2: 0.2, 3: 0.1}
SYNTH_POLICY_ADOPTION = {
    "AntiFollowbotPolicy": 0.08,
    "EnsureRePrepended": 0.05,
    "HellthreadPolicy": 0.1,
    "KeywordPolicy": 0.1,
    "MediaProxyWarmingPolicy": 0.15,
    "StealEmojiPolicy": 0.05,
    "TagPolicy": 0.2,
    "HashtagPolicy": 0.2,
}
SYNTH_ACTION_WEIGHTS = {
    "reject": 0.6,
    "media_removal": 0.1,
    "nsfw": 0.1,
    "federated_timeline_removal": 0.1,
    "quarantine": 0.05,
    "reject_deletes": 0.05,
}
SYNTH_LEXICON_TERMS = ("scum", "vermin", "degenerate", "subhuman", "parasite", "filth")
SYNTH_TEXT_WORDS = (
    "morning", "coffee", "release", "server", "update", "garden", "music", "photo",
    "weekend", "thread", "question", "cat", "train", "weather", "book", "patch",
)
MANIFEST_FILE = "manifest.json"
