"""Shared exception base so callers can catch library errors uniformly."""
from __future__ import annotations


class SqlsemError(Exception):
    """Base class for every error raised by this package."""


class DataError(SqlsemError):
    """Malformed or inconsistent input data (corpora, schemas, configs)."""
