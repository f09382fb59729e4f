"""Run configuration: one JSON file, a few flag overrides, one env var.

Unknown keys are rejected at load so typos fail fast. The only environment
variable honored is SQLSEM_PROVIDER_URL (remote embedding endpoint), because
deployments rotate that independently of checked-in config files.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .errors import DataError
from .featurize import BuiltinFeaturizer, RemoteProvider
from .nmpnn import NmpnnConfig
from .validator import TrainConfig

PROVIDER_URL_ENV = "SQLSEM_PROVIDER_URL"


@dataclass
class Config:
    provider_kind: str = "builtin"  # builtin | remote
    provider_url: str | None = None
    provider_timeout: float = 10.0
    dim: int = 64
    nmpnn: NmpnnConfig = field(default_factory=NmpnnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    np_ratio: float = 1.0
    strict_identifiers: bool = False
    augment_budget: int = 8

    def make_provider(self):
        url = os.environ.get(PROVIDER_URL_ENV) or self.provider_url
        if self.provider_kind == "remote" or (url and self.provider_kind != "builtin"):
            if not url:
                raise DataError("remote provider requires a URL "
                                f"(config provider_url or ${PROVIDER_URL_ENV})")
            return RemoteProvider(url, self.provider_timeout)
        return BuiltinFeaturizer(self.dim)


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise DataError(f"unknown config key(s) in {where}: {sorted(unknown)}")


def load_config(path: str | None) -> Config:
    if path is None:
        return Config()
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"config {path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"config {path}: top level must be an object")
    _check_keys(obj, {"provider", "nmpnn", "train", "np_ratio",
                      "strict_identifiers", "augment_budget"}, "config")
    cfg = Config()
    provider = obj.get("provider", {})
    _check_keys(provider, {"kind", "url", "timeout", "dim"}, "config.provider")
    cfg.provider_kind = provider.get("kind", cfg.provider_kind)
    cfg.provider_url = provider.get("url", cfg.provider_url)
    cfg.provider_timeout = float(provider.get("timeout", cfg.provider_timeout))
    cfg.dim = int(provider.get("dim", cfg.dim))
    nmpnn_obj = dict(obj.get("nmpnn", {}))
    _check_keys(nmpnn_obj, {"t_ast", "t_lp", "dim", "pooling", "aggregator",
                            "dropout"}, "config.nmpnn")
    nmpnn_obj.setdefault("dim", cfg.dim)
    try:
        cfg.nmpnn = NmpnnConfig(**nmpnn_obj)
    except (TypeError, ValueError) as exc:
        raise DataError(f"config {path}: bad nmpnn section: {exc}") from exc
    train_obj = dict(obj.get("train", {}))
    _check_keys(train_obj, {"lr", "weight_decay", "batch_size", "dropout",
                            "patience", "max_epochs", "seed"}, "config.train")
    try:
        cfg.train = TrainConfig(**train_obj)
    except (TypeError, ValueError) as exc:
        raise DataError(f"config {path}: bad train section: {exc}") from exc
    cfg.np_ratio = float(obj.get("np_ratio", cfg.np_ratio))
    cfg.strict_identifiers = bool(obj.get("strict_identifiers", cfg.strict_identifiers))
    cfg.augment_budget = int(obj.get("augment_budget", cfg.augment_budget))
    if cfg.nmpnn.dim != cfg.dim and cfg.provider_kind == "builtin":
        raise DataError(f"config {path}: provider dim {cfg.dim} != model dim "
                        f"{cfg.nmpnn.dim}")
    return cfg
