"""Embedding providers, the content-addressed cache, and context assembly.

Initial node vectors come from a pluggable provider. The built-in featurizer
needs no model: it case-folds, splits on non-alphanumerics, hashes token
counts into buckets and L2-normalizes, which keeps the whole pipeline
dependency-free and deterministic. A remote provider speaks a small HTTP
protocol (POST /embed, GET /health) so a real embedding model can be swapped
in without touching callers.
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field

import numpy as np
import requests

from .errors import SqlsemError
from .hir import Hir
from .sqlast import Kind, Schema


class ProviderUnavailable(SqlsemError):
    """The remote embedding endpoint cannot be reached or misbehaves."""


# Decimal literals stay whole ("58.4" is one token, not "58" and "4"):
# constants carry exact-match semantics and must not share digit fragments.
_TOKEN_RE = re.compile(r"[0-9]+(?:\.[0-9]+)?|[a-z]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.casefold())


class BuiltinFeaturizer:
    """Hashed bag-of-tokens embedding; output depends only on token counts.

    Buckets are nonnegative counts (no signing): downstream layers apply ReLU,
    which would silently discard negative coordinates. Context tokens enter at
    reduced weight so the short node text is not drowned by the shared prefix.
    """

    CONTEXT_WEIGHT = 0.1

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.name = f"builtin-hash-{dim}"

    def _bucket(self, token: str) -> int:
        """Numeric tokens keep a small reserved block of buckets: constants
        carry exact-match semantics, so their identity must survive hashing
        next to the much larger word vocabulary, and the block is kept narrow
        so each coordinate recurs often enough for a model to attach meaning
        to it."""
        digest = hashlib.md5(token.encode("utf-8")).digest()
        h = int.from_bytes(digest[:8], "big")
        reserved = min(4, self.dim // 4)
        if reserved and token[0].isdigit():
            return h % reserved
        return reserved + h % (self.dim - reserved)

    def embed(self, context: str, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _tokens(context):
            vec[self._bucket(token)] += self.CONTEXT_WEIGHT
        for token in _tokens(text):
            vec[self._bucket(token)] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        vec.setflags(write=False)
        return vec

    def embed_batch(self, context: str, texts: list[str]) -> list[np.ndarray]:
        return [self.embed(context, text) for text in texts]


class RemoteProvider:
    """Client for the /embed wire protocol; declares the server's dimension."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.name = f"remote:{self.base_url}"
        self._dim: int | None = None

    @property
    def dim(self) -> int:
        if self._dim is None:
            info = self.health()
            self._dim = int(info["dim"])
        return self._dim

    def health(self) -> dict:
        try:
            resp = requests.get(f"{self.base_url}/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"health check failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderUnavailable(f"health check returned {resp.status_code}")
        body = resp.json()
        if "dim" not in body or "model" not in body:
            raise ProviderUnavailable(f"malformed health payload: {body!r}")
        return body

    def embed_batch(self, context: str, texts: list[str]) -> list[np.ndarray]:
        payload = {"context": context, "texts": list(texts)}
        try:
            resp = requests.post(f"{self.base_url}/embed", json=payload,
                                 timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"embed request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderUnavailable(f"embed returned {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            dim = int(body["dim"])
            vectors = body["vectors"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProviderUnavailable(f"malformed embed payload: {exc}") from exc
        if len(vectors) != len(texts):
            raise ProviderUnavailable(
                f"expected {len(texts)} vectors, got {len(vectors)}")
        if self._dim is None:
            self._dim = dim
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self._dim,) or not np.isfinite(arr).all():
                raise ProviderUnavailable("vector has wrong shape or non-finite entries")
            arr.setflags(write=False)
            out.append(arr)
        return out

    def embed(self, context: str, text: str) -> np.ndarray:
        return self.embed_batch(context, [text])[0]


@dataclass
class EmbeddingCache:
    """Content-addressed vector store keyed on (provider, context, text)."""

    hits: int = 0
    misses: int = 0
    _store: dict[str, np.ndarray] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    @staticmethod
    def key(provider_name: str, context: str, text: str) -> str:
        blob = "\x00".join((provider_name, context, text)).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def get(self, provider_name: str, context: str, text: str) -> np.ndarray | None:
        with self._lock:
            vec = self._store.get(self.key(provider_name, context, text))
            if vec is None:
                self.misses += 1
            else:
                self.hits += 1
            return vec

    def put(self, provider_name: str, context: str, text: str, vec: np.ndarray) -> None:
        with self._lock:
            self._store[self.key(provider_name, context, text)] = vec

    def __len__(self) -> int:
        return len(self._store)


def embed(provider, context: str, text: str,
          cache: EmbeddingCache | None = None) -> np.ndarray:
    """Provider lookup with optional caching; cached results are bit-identical."""
    if not text:
        raise ValueError("text must be nonempty")
    if cache is not None:
        hit = cache.get(provider.name, context, text)
        if hit is not None:
            return hit
    vec = provider.embed(context, text)
    if cache is not None:
        cache.put(provider.name, context, text, vec)
    return vec


def compress_schema(schema: Schema) -> str:
    """One-line schema sketch: ``t1(c1, c2); t2(...)`` in schema order."""
    return "; ".join(
        f"{t.name}({', '.join(t.columns)})" for t in schema.tables
    )


# Operator lexemes vanish under alphanumeric tokenization, so AST nodes embed
# a spelled form; distinct operators must stay distinguishable downstream.
_OP_WORDS = {
    "=": "equals", "!=": "not equals", "<>": "not equals",
    "<": "less than", ">": "greater than",
    "<=": "less equal", ">=": "greater equal",
    "+": "plus", "-": "minus", "*": "times", "/": "divided by",
}


def node_embed_text(kind: Kind, text: str) -> str:
    """Token-friendly description of one expression-AST node."""
    if kind is Kind.BINARY_OP or kind is Kind.UNARY_OP:
        word = _OP_WORDS.get(text.upper(), text)
        return f"{kind.value} {word}"
    if kind is Kind.STAR:
        return f"{kind.value} star"
    if kind is Kind.LIST_ROOT:
        return kind.value
    return f"{kind.value} {text}"


def question_context(schema: Schema) -> str:
    return compress_schema(schema)


def sql_context(schema: Schema, rendered_sql: str) -> str:
    return f"{compress_schema(schema)} | {rendered_sql}"


def embed_question(provider, question: str, schema: Schema,
                   cache: EmbeddingCache | None = None) -> np.ndarray:
    return embed(provider, question_context(schema), question, cache)


def embed_hir(provider, hir: Hir, rendered_sql: str, schema: Schema,
              cache: EmbeddingCache | None = None) -> dict[tuple[int, int], np.ndarray]:
    """Initial vector for every (lp node, expression node) in the HIR."""
    context = sql_context(schema, rendered_sql)
    out: dict[tuple[int, int], np.ndarray] = {}
    for lp_id, ast in sorted(hir.asts.items()):
        for node in ast.nodes:
            text = node_embed_text(node.kind, node.text)
            out[(lp_id, node.id)] = embed(provider, context, text, cache)
    return out
