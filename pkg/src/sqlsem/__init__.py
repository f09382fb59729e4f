"""Semantic validation for text-to-SQL: parse, lower, encode, score, localize.

The package turns a SQL string into a two-level graph (a logical plan whose
nodes each carry an expression tree), encodes it with a nested message-passing
network over pluggable text embeddings, and scores question/SQL pairs for
semantic mismatch. Mutation-based augmentation manufactures labeled negatives
from gold pairs, and an execution oracle over SQLite keeps them honest.
"""
from .augment import ALL_RULES, Mutant, MutationRule, balance, generate_negatives, mutate
from .corpus import Corpus, Example, read_corpus, write_corpus
from .errors import DataError, SqlsemError
from .exec_oracle import (
    ExecError,
    ExecTimeout,
    GoldExecutionError,
    ResultTable,
    execute,
    label_by_execution,
    results_equal,
)
from .featurize import (
    BuiltinFeaturizer,
    EmbeddingCache,
    ProviderUnavailable,
    RemoteProvider,
    compress_schema,
    embed_hir,
    embed_question,
)
from .hir import ExprParseError, Hir, build_hir, hir_from_sql, hir_to_json
from .metrics import NoPositives, SingleClass, auprc, auroc, eval_report, f1
from .nmpnn import DimMismatch, EmptyGraph, NmpnnConfig, NodeGraph, encode_sql, pool
from .plan import LogicalPlan, LoweringError, LpNode, LpOp, format_plan, lower, render_subsql
from .sqlast import (
    AstNode,
    Kind,
    Schema,
    SqlAst,
    SqlSyntaxError,
    Table,
    UnknownIdentifier,
    UnsupportedConstruct,
    parse,
    render,
)
from .validator import (
    DegenerateValidation,
    TrainConfig,
    TrainResult,
    init_model,
    load_checkpoint,
    localize,
    predict,
    prepare_corpus,
    prepare_example,
    save_checkpoint,
    score_all,
    select_threshold,
    split_train_val,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_RULES", "AstNode", "BuiltinFeaturizer", "Corpus", "DataError",
    "DegenerateValidation", "DimMismatch", "EmbeddingCache", "EmptyGraph",
    "ExecError", "ExecTimeout", "Example", "ExprParseError",
    "GoldExecutionError", "Hir", "Kind", "LogicalPlan", "LoweringError",
    "LpNode", "LpOp", "Mutant", "MutationRule", "NmpnnConfig", "NodeGraph",
    "NoPositives", "ProviderUnavailable", "RemoteProvider", "ResultTable",
    "Schema", "SingleClass", "SqlAst", "SqlSyntaxError", "SqlsemError",
    "Table", "TrainConfig", "TrainResult", "UnknownIdentifier",
    "UnsupportedConstruct", "auprc", "auroc", "balance", "build_hir",
    "compress_schema", "embed_hir", "embed_question", "encode_sql",
    "eval_report", "execute", "f1", "format_plan", "generate_negatives",
    "hir_from_sql", "hir_to_json", "init_model", "label_by_execution",
    "load_checkpoint", "localize", "lower", "mutate", "parse", "pool",
    "predict", "prepare_corpus", "prepare_example", "read_corpus", "render",
    "render_subsql", "results_equal", "save_checkpoint", "score_all",
    "select_threshold", "split_train_val", "train", "write_corpus",
    "__version__",
]
