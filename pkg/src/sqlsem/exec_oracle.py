"""Execution-based ground truth: run SQL on SQLite and compare result tables.

Comparison is order-insensitive (multiset) unless the statement has a
top-level ORDER BY. Cells compare exactly for NULL/integer/text and with a
relative tolerance for reals; integer-vs-real pairs compare numerically with
the real tolerance, since aggregates switch types freely.
"""
from __future__ import annotations

import sqlite3
import time
from dataclasses import dataclass

from .errors import SqlsemError

REAL_TOLERANCE = 1e-6


class ExecError(SqlsemError):
    """The engine rejected or failed the statement."""


class ExecTimeout(ExecError):
    """The statement exceeded the time budget."""


class GoldExecutionError(SqlsemError):
    """The reference query itself failed; the pair cannot be labeled."""


@dataclass(frozen=True)
class ResultTable:
    columns: int
    rows: tuple[tuple, ...]
    ordered: bool


def _has_top_level_order_by(sql: str) -> bool:
    """Token scan for ORDER BY at paren depth 0; never raises."""
    import re

    depth = 0
    prev_order = False
    for m in re.finditer(r"'(?:[^']|'')*'|`[^`]*`|\"[^\"]*\"|[A-Za-z_][A-Za-z_0-9]*|.", sql):
        tok = m.group()
        if tok == "(":
            depth += 1
            prev_order = False
        elif tok == ")":
            depth = max(0, depth - 1)
            prev_order = False
        elif tok[0].isalpha() or tok[0] == "_":
            word = tok.upper()
            if depth == 0 and prev_order and word == "BY":
                return True
            prev_order = depth == 0 and word == "ORDER"
        elif not tok.isspace():
            prev_order = False
    return False


def execute(db_path: str, sql: str, timeout_ms: int = 5000) -> ResultTable:
    """Run one read-only statement and materialize its result."""
    try:
        conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True, timeout=1.0)
    except sqlite3.Error as exc:
        raise ExecError(f"cannot open database {db_path!r}: {exc}") from exc
    deadline = time.monotonic() + timeout_ms / 1000.0

    def guard():
        return 1 if time.monotonic() > deadline else 0

    conn.set_progress_handler(guard, 200)
    try:
        cursor = conn.execute(sql)
        rows = tuple(tuple(row) for row in cursor.fetchall())
        columns = len(cursor.description) if cursor.description else 0
    except sqlite3.OperationalError as exc:
        if "interrupt" in str(exc).lower():
            raise ExecTimeout(f"query exceeded {timeout_ms} ms") from exc
        raise ExecError(str(exc)) from exc
    except sqlite3.Error as exc:
        raise ExecError(str(exc)) from exc
    finally:
        conn.close()
    return ResultTable(columns, rows, _has_top_level_order_by(sql))


def _cells_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    a_num = isinstance(a, (int, float)) and not isinstance(a, bool)
    b_num = isinstance(b, (int, float)) and not isinstance(b, bool)
    if a_num and b_num:
        if isinstance(a, int) and isinstance(b, int):
            return a == b
        return abs(a - b) <= REAL_TOLERANCE * max(1.0, abs(a), abs(b))
    return type(a) is type(b) and a == b


def _rows_equal(a: tuple, b: tuple) -> bool:
    return len(a) == len(b) and all(_cells_equal(x, y) for x, y in zip(a, b))


def _sort_key(row: tuple):
    # stable cross-type ordering: sort by (type rank, value) per cell
    key = []
    for cell in row:
        if cell is None:
            key.append((0, ""))
        elif isinstance(cell, bool):
            key.append((1, float(cell)))
        elif isinstance(cell, (int, float)):
            key.append((1, float(cell)))
        elif isinstance(cell, bytes):
            key.append((3, cell.hex()))
        else:
            key.append((2, str(cell)))
    return tuple(key)


def results_equal(a: ResultTable, b: ResultTable) -> bool:
    """Multiset equality, or sequence equality when either side is ordered."""
    if a.columns != b.columns or len(a.rows) != len(b.rows):
        return False
    if a.ordered or b.ordered:
        return all(_rows_equal(x, y) for x, y in zip(a.rows, b.rows))
    left = sorted(a.rows, key=_sort_key)
    right = sorted(b.rows, key=_sort_key)
    if all(_rows_equal(x, y) for x, y in zip(left, right)):
        return True
    # near-tie interleavings can defeat the sorted zip; fall back to matching
    if len(left) > 500:
        return False
    remaining = list(right)
    for row in left:
        for i, other in enumerate(remaining):
            if _rows_equal(row, other):
                del remaining[i]
                break
        else:
            return False
    return True


def label_by_execution(candidate_sql: str, gold_sql: str, db_path: str,
                       timeout_ms: int = 5000) -> int | None:
    """0 if the candidate matches the gold result, 1 if it differs,
    None (unlabelable) if the candidate itself fails to execute."""
    try:
        gold = execute(db_path, gold_sql, timeout_ms)
    except ExecError as exc:
        raise GoldExecutionError(f"gold query failed: {exc}") from exc
    try:
        cand = execute(db_path, candidate_sql, timeout_ms)
    except ExecError:
        return None
    return 0 if results_equal(cand, gold) else 1
