"""Custom exceptions for fedwatch.

This module defines a hierarchy of custom exceptions for better error
handling and debugging. All exceptions inherit from FedwatchError.
"""

from typing import Optional


class FedwatchError(Exception):
    """Base exception for all fedwatch errors."""
    pass


class FedwatchConfigError(FedwatchError):
    """Raised when a configuration object or flag combination is invalid."""
    pass


class StoreError(FedwatchError):
    """Raised when a store cannot be read or a record violates its type."""
    pass


class TimestampRegressionError(StoreError):
    """Raised when a snapshot is older than the last one stored for its instance."""
    def __init__(self, message: str, domain: str, last: int, given: int):
        super().__init__(message)
        self.domain = domain
        self.last = last
        self.given = given


class FetchError(FedwatchError):
    """Raised when a fetch fails; carries the classified outcome."""
    def __init__(self, message: str, outcome, reason: str = ""):
        super().__init__(message)
        self.outcome = outcome
        self.reason = reason


class PolicyError(FedwatchError):
    """Base class for policy parsing and classification errors."""
    pass


class PolicyParseError(PolicyError):
    """Raised when a metadata document is structurally invalid."""
    def __init__(self, message: str, path: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnexposedPolicyError(PolicyError):
    """Raised when a policy question is asked of an instance hiding its policies."""
    pass


class FeatureError(FedwatchError):
    """Raised when features cannot be extracted or transformed."""
    pass


class LexiconError(FeatureError):
    """Raised when a hate lexicon is missing or empty."""
    pass


class UndefinedStatisticError(FedwatchError):
    """Raised when a statistic is undefined for its input (e.g. zero variance)."""
    pass


class InsufficientDataError(FedwatchError):
    """Raised when the store holds too little data for the requested analysis."""
    pass


class DatasetError(FedwatchError):
    """Raised for class starvation, degenerate folds or column mismatches."""
    pass


class UnsupportedFamilyError(FedwatchError):
    """Raised when an operation is not available for a model family."""
    def __init__(self, message: str, family: Optional[str] = None):
        super().__init__(message)
        self.family = family


class ModelArtifactError(FedwatchError):
    """Raised when a model file is missing, foreign or from another format version."""
    pass
