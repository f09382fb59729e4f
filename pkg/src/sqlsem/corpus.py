"""Corpus records and JSONL serialization.

An example pairs one natural-language question with one SQL string for one
database. ``label`` is 0 (semantically matching) or 1 (not matching); rows
awaiting execution-based labeling carry ``label: null``. ``sublabels`` mark
the plan node owning an injected perturbation and exist only on mutation-
sourced rows.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import DataError

SOURCES = ("gold", "llm", "ast-aug")


@dataclass(frozen=True)
class Example:
    id: str
    db_id: str
    question: str
    sql: str
    label: int | None
    source: str
    sublabels: dict[int, int] | None = None

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "db_id": self.db_id,
            "question": self.question,
            "sql": self.sql,
            "label": self.label,
            "source": self.source,
        }
        if self.sublabels is not None:
            out["sublabels"] = {str(k): v for k, v in sorted(self.sublabels.items())}
        return out

    @staticmethod
    def from_dict(obj: dict) -> "Example":
        try:
            sublabels = obj.get("sublabels")
            if sublabels is not None:
                sublabels = {int(k): int(v) for k, v in sublabels.items()}
            return Example(
                id=str(obj["id"]),
                db_id=str(obj["db_id"]),
                question=str(obj["question"]),
                sql=str(obj["sql"]),
                label=None if obj.get("label") is None else int(obj["label"]),
                source=str(obj.get("source", "gold")),
                sublabels=sublabels,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed corpus row: {exc}: {obj!r}") from exc


@dataclass
class Corpus:
    examples: list[Example] = field(default_factory=list)

    def __iter__(self):
        return iter(self.examples)

    def __len__(self) -> int:
        return len(self.examples)

    def validate(self) -> "Corpus":
        seen: set[str] = set()
        for ex in self.examples:
            if ex.id in seen:
                raise DataError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)
            if ex.label not in (0, 1, None):
                raise DataError(f"example {ex.id}: label must be 0, 1 or null")
            if ex.source not in SOURCES:
                raise DataError(f"example {ex.id}: unknown source {ex.source!r}")
            if ex.sublabels is not None and ex.source != "ast-aug":
                raise DataError(f"example {ex.id}: sublabels require source ast-aug")
            if ex.sublabels is not None and sum(ex.sublabels.values()) != 1:
                raise DataError(f"example {ex.id}: exactly one sublabel must be 1")
        return self

    def labeled(self) -> "Corpus":
        return Corpus([ex for ex in self.examples if ex.label is not None])


def read_corpus(path: str) -> Corpus:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            examples.append(Example.from_dict(obj))
    return Corpus(examples).validate()


def write_corpus(corpus: Corpus, path: str) -> None:
    """Stable field order and separators make rewrites byte-identical."""
    corpus.validate()
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus:
            fh.write(json.dumps(ex.to_dict(), ensure_ascii=True,
                                separators=(", ", ": ")) + "\n")
