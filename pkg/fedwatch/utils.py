"""Utility functions for fedwatch.

This module provides small helpers shared by the crawler, analytics and
experiment drivers: UTC timestamp handling, 30-day month arithmetic,
author anonymisation, and CSV/JSON report writers.
"""

import csv
import hashlib
import json
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence, Tuple, Union

from .constants import MONTH_SECONDS

PathLike = Union[str, Path]


def utc_now() -> int:
    """Return the current time as integer Unix seconds."""
    return int(time.time())


def parse_timestamp(value: str) -> int:
    """Convert an ISO 8601 timestamp to integer Unix seconds (UTC).

    Naive timestamps are read as UTC.

    Raises:
        ValueError: If the string is not ISO 8601
    """
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    parsed = datetime.fromisoformat(text)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return int(parsed.timestamp())


def format_timestamp(timestamp: int) -> str:
    """Render Unix seconds as an ISO 8601 UTC string."""
    return datetime.fromtimestamp(timestamp, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def month_index(timestamp: int, start: int) -> int:
    """Return the 1-based 30-day month of ``timestamp`` counted from ``start``."""
    return (timestamp - start) // MONTH_SECONDS + 1


def month_end(start: int, month: int) -> int:
    """Return the exclusive end of 30-day month ``month`` counted from ``start``."""
    return start + month * MONTH_SECONDS


def months_spanned(start: int, last: int) -> int:
    """Return how many 30-day months the inclusive range [start, last] touches."""
    return month_index(last, start)


def anonymize_account(account_id: str, domain: str) -> str:
    """Return a salted SHA-256 key for an account, never the id itself."""
    digest = hashlib.sha256(f"{domain}\x00{account_id}".encode("utf-8"))
    return digest.hexdigest()[:32]


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write rows under a header row; parent directories are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def read_csv(path: PathLike) -> Tuple[Tuple[str, ...], list]:
    """Read a CSV file written by ``write_csv``; returns (header, rows)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        return header, [row for row in reader]


def write_json(path: PathLike, payload: Any) -> Path:
    """Write a JSON document with stable key order; parent directories are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return path
