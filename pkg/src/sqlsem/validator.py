"""Question/SQL match scoring, training, localization, and checkpoints.

The statement vector from the encoder and the question vector feed a 3-layer
MLP over ``[h_q ; h_sql ; h_q * h_sql]`` ending in a sigmoid; the score is
the probability the pair is semantically INVALID. The same head applied to a
single plan-node state localizes which operator looks wrong.

Training is mini-batch BCE with decoupled weight decay (AdamW-style updates),
early stopping on validation AUROC, and the decision threshold chosen on
validation by exhaustive F1 maximization over candidate cut points. All
randomness flows from one seed, so a fixed (data, seed) pair reproduces the
checkpoint byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .autograd import ParamStore, Tensor
from .corpus import Corpus, Example
from .errors import DataError, SqlsemError
from .featurize import EmbeddingCache, embed_hir, embed_question
from .hir import Hir, build_hir
from .metrics import auroc
from .nmpnn import NmpnnConfig, encode_sql, init_nmpnn_params, params_from_store
from .plan import lower, render_subsql
from .sqlast import Schema, parse, render

CHECKPOINT_VERSION = 1


class DegenerateValidation(SqlsemError):
    """The validation split has a single class; AUROC is undefined."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    dropout: float = 0.3
    patience: int = 5
    max_epochs: int = 100
    seed: int = 2025
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("lr, batch_size and max_epochs must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def init_fusion_params(store: ParamStore, dim: int, rng: np.random.Generator) -> None:
    """Random weights, zero biases; all-zero weights would kill the ReLU grads."""
    store.add("fusion.w1", rng.normal(0.0, 1.0 / np.sqrt(3 * dim), (3 * dim, dim)))
    store.add("fusion.b1", np.zeros((1, dim)))
    store.add("fusion.w2", rng.normal(0.0, 1.0 / np.sqrt(dim), (dim, dim)))
    store.add("fusion.b2", np.zeros((1, dim)))
    store.add("fusion.w3", rng.normal(0.0, 1.0 / np.sqrt(dim), (dim, 1)))
    store.add("fusion.b3", np.zeros((1, 1)))


def init_model(config: NmpnnConfig, seed: int) -> ParamStore:
    store = ParamStore()
    rng = np.random.default_rng(seed)
    init_nmpnn_params(store, config, rng)
    init_fusion_params(store, config.dim, rng)
    return store


def fusion_score(store: ParamStore, h_q: Tensor, h_node: Tensor,
                 dropout_rate: float = 0.0, *, train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Sigmoid MLP over the fused pair representation; rows map to pairs."""
    fused = ag.concat_cols([h_q, h_node, ag.hadamard(h_q, h_node)])
    h = ag.relu(ag.add(ag.matmul(fused, store["fusion.w1"]), store["fusion.b1"]))
    if train and dropout_rate > 0.0:
        h = ag.dropout(h, dropout_rate, rng)
    h = ag.relu(ag.add(ag.matmul(h, store["fusion.w2"]), store["fusion.b2"]))
    if train and dropout_rate > 0.0:
        h = ag.dropout(h, dropout_rate, rng)
    logit = ag.add(ag.matmul(h, store["fusion.w3"]), store["fusion.b3"])
    return ag.sigmoid(logit)


def predict(store: ParamStore, h_question: np.ndarray, hir: Hir,
            embeddings: dict[tuple[int, int], np.ndarray],
            config: NmpnnConfig) -> float:
    """Probability the (question, sql) pair is semantically invalid."""
    params = params_from_store(store, config)
    h_sql, _ = encode_sql(hir, embeddings, params, config)
    h_q = Tensor(np.asarray(h_question, dtype=np.float64).reshape(1, -1))
    return fusion_score(store, h_q, h_sql).item()


@dataclass(frozen=True)
class LocalizeResult:
    scores: dict[int, float]
    payload: dict


def localize(store: ParamStore, h_question: np.ndarray, hir: Hir,
             embeddings: dict[tuple[int, int], np.ndarray],
             config: NmpnnConfig, schema: Schema | None = None) -> LocalizeResult:
    """Per-plan-node invalidity scores plus the feedback payload."""
    params = params_from_store(store, config)
    _, lp_states = encode_sql(hir, embeddings, params, config)
    h_q = Tensor(np.asarray(h_question, dtype=np.float64).reshape(1, -1))
    scores = {lp_id: fusion_score(store, h_q, state).item()
              for lp_id, state in lp_states.items()}
    # ties resolve to the smaller node id for determinism
    argmax = min(scores, key=lambda nid: (-scores[nid], nid))
    nodes = []
    for node in hir.plan.nodes:
        nodes.append({
            "lp_node": node.id,
            "op": node.op.value,
            "sub_sql": render_subsql(hir.plan, node.id, schema),
            "score": scores[node.id],
        })
    return LocalizeResult(scores, {"nodes": nodes, "argmax": argmax})


def select_threshold(scores, labels) -> float:
    """F1-maximizing cut over midpoints of adjacent distinct scores plus {0, 1}.

    Ties prefer the larger threshold. With only positives present, 0 wins
    (predict everything positive); with only negatives, 1.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size == 0 or s.shape != y.shape:
        raise DegenerateValidation("threshold selection needs scored examples")
    distinct = np.unique(s)
    candidates = [0.0, 1.0] + [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    best_t, best_f1 = 0.0, -1.0
    for t in sorted(candidates):
        pred = s >= t
        tp = int(np.sum(pred & (y == 1)))
        fp = int(np.sum(pred & (y == 0)))
        fn = int(np.sum(~pred & (y == 1)))
        score = 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
        if score >= best_f1:  # >= : ties move toward the larger threshold
            best_t, best_f1 = t, score
    return float(best_t)


# --- example preparation -----------------------------------------------------


@dataclass
class PreparedExample:
    example: Example
    hir: Hir
    h_question: np.ndarray
    embeddings: dict[tuple[int, int], np.ndarray]


def prepare_example(example: Example, schema: Schema, provider,
                    cache: EmbeddingCache | None = None) -> PreparedExample:
    """Parse, lower, and embed one labeled pair ahead of the epoch loop."""
    ast = parse(example.sql, schema)
    hir = build_hir(lower(ast, schema), schema)
    rendered = render(ast)
    h_q = embed_question(provider, example.question, schema, cache)
    embeddings = embed_hir(provider, hir, rendered, schema, cache)
    return PreparedExample(example, hir, h_q, embeddings)


def prepare_corpus(corpus: Corpus, schemas: dict[str, Schema], provider,
                   cache: EmbeddingCache | None = None) -> list[PreparedExample]:
    prepared = []
    for example in corpus:
        if example.label is None:
            raise DataError(f"example {example.id} is unlabeled; run ingest first")
        schema = schemas.get(example.db_id)
        if schema is None:
            raise DataError(f"example {example.id}: no schema for db {example.db_id!r}")
        prepared.append(prepare_example(example, schema, provider, cache))
    return prepared


# --- training -----------------------------------------------------------------


class _AdamW:
    """Decoupled weight decay; moments keyed by parameter name."""

    def __init__(self, store: ParamStore, config: TrainConfig):
        self.store = store
        self.config = config
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self) -> None:
        c = self.config
        self.step_count += 1
        bias1 = 1.0 - c.beta1 ** self.step_count
        bias2 = 1.0 - c.beta2 ** self.step_count
        for name, tensor in self.store.items():
            grad = tensor.grad
            if grad is None:
                grad = np.zeros_like(tensor.data)
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * grad
            v *= c.beta2
            v += (1.0 - c.beta2) * grad * grad
            tensor.data *= 1.0 - c.lr * c.weight_decay
            tensor.data -= c.lr * (m / bias1) / (np.sqrt(v / bias2) + c.eps)


def _forward_batch(store: ParamStore, batch: list[PreparedExample],
                   nmpnn_config: NmpnnConfig, dropout_rate: float,
                   *, train: bool, rng: np.random.Generator | None) -> Tensor:
    params = params_from_store(store, nmpnn_config)
    rows_q, rows_s = [], []
    for prepared in batch:
        h_sql, _ = encode_sql(prepared.hir, prepared.embeddings, params,
                              nmpnn_config, train=train, rng=rng)
        rows_q.append(Tensor(prepared.h_question.reshape(1, -1)))
        rows_s.append(h_sql)
    h_q = ag.concat_rows(rows_q)
    h_s = ag.concat_rows(rows_s)
    return fusion_score(store, h_q, h_s, dropout_rate, train=train, rng=rng)


def score_all(store: ParamStore, prepared: list[PreparedExample],
               nmpnn_config: NmpnnConfig) -> np.ndarray:
    scores = []
    for chunk_start in range(0, len(prepared), 64):
        chunk = prepared[chunk_start:chunk_start + 64]
        preds = _forward_batch(store, chunk, nmpnn_config, 0.0, train=False, rng=None)
        scores.extend(preds.data[:, 0].tolist())
    return np.asarray(scores)


@dataclass
class TrainResult:
    store: ParamStore
    threshold: float
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auroc: float = 0.0


def split_train_val(prepared: list[PreparedExample], seed: int,
                    val_fraction: float = 0.2) -> tuple[list, list]:
    """Seeded 80/20 split used when no explicit validation corpus is given."""
    rng = np.random.default_rng([seed, 17])
    order = rng.permutation(len(prepared)).tolist()
    n_val = max(1, int(round(val_fraction * len(prepared))))
    val_ids = set(order[:n_val])
    train = [p for i, p in enumerate(prepared) if i not in val_ids]
    val = [p for i, p in enumerate(prepared) if i in val_ids]
    return train, val


def train(train_set: list[PreparedExample], val_set: list[PreparedExample],
          store: ParamStore, nmpnn_config: NmpnnConfig,
          config: TrainConfig, *, verbose: bool = False) -> TrainResult:
    """Mini-batch BCE with AdamW updates and patience on validation AUROC."""
    if not train_set or not val_set:
        raise DegenerateValidation("both train and validation splits must be nonempty")
    val_labels = [p.example.label for p in val_set]
    if len(set(val_labels)) < 2:
        raise DegenerateValidation("validation split has a single class")
    if len({p.example.label for p in train_set}) < 2:
        raise DegenerateValidation("training split has a single class")

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])

    optimizer = _AdamW(store, config)
    best_auroc = -1.0
    best_epoch = -1
    best_snapshot = store.snapshot()
    history: list[dict] = []

    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(len(train_set)).tolist()
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            labels = np.array([[float(p.example.label)] for p in batch])
            store.zero_grad()
            preds = _forward_batch(store, batch, nmpnn_config, config.dropout,
                                   train=True, rng=dropout_rng)
            loss = ag.bce_loss(preds, labels)
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item()
            n_batches += 1
        val_scores = score_all(store, val_set, nmpnn_config)
        val_auroc = auroc(val_scores, val_labels)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / max(1, n_batches),
            "val_auroc": val_auroc,
        })
        if verbose:
            print(f"epoch {epoch}: loss={epoch_loss / max(1, n_batches):.4f} "
                  f"val_auroc={val_auroc:.4f}")
        if val_auroc > best_auroc:
            best_auroc = val_auroc
            best_epoch = epoch
            best_snapshot = store.snapshot()
        elif epoch - best_epoch >= config.patience:
            break

    store.restore(best_snapshot)
    val_scores = score_all(store, val_set, nmpnn_config)
    threshold = select_threshold(val_scores, np.asarray(val_labels))
    return TrainResult(store, threshold, history, best_epoch, best_auroc)


# --- checkpoints ---------------------------------------------------------------


def checkpoint_to_json(store: ParamStore, nmpnn_config: NmpnnConfig,
                       train_config: TrainConfig, threshold: float,
                       provider_name: str, meta: dict | None = None) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": {
            "nmpnn": asdict(nmpnn_config),
            "train": asdict(train_config),
            "provider": provider_name,
        },
        "threshold": threshold,
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in store.items()
        },
        "meta": meta or {},
    }


def save_checkpoint(path: str, store: ParamStore, nmpnn_config: NmpnnConfig,
                    train_config: TrainConfig, threshold: float,
                    provider_name: str, meta: dict | None = None) -> None:
    """Canonical JSON: sorted keys, repr floats, so identical runs match bytes."""
    obj = checkpoint_to_json(store, nmpnn_config, train_config, threshold,
                             provider_name, meta)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


@dataclass
class LoadedCheckpoint:
    store: ParamStore
    nmpnn_config: NmpnnConfig
    train_config: TrainConfig
    threshold: float
    provider_name: str
    meta: dict


def load_checkpoint(path: str) -> LoadedCheckpoint:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {obj.get('version')!r}")
    nmpnn_config = NmpnnConfig(**obj["config"]["nmpnn"])
    train_config = TrainConfig(**obj["config"]["train"])
    store = ParamStore()
    for name, spec in obj["params"].items():
        data = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        store.add(name, data)
    return LoadedCheckpoint(store, nmpnn_config, train_config,
                            float(obj["threshold"]), obj["config"]["provider"],
                            obj.get("meta", {}))
