"""Training configuration: dataclass, JSON round trip, strict validation.

Unknown JSON fields are rejected so silent typos cannot change a run.
Defaults are the desk-scale benchmark: small enough for minutes on one CPU
core, while still exercising every code path.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .prototypes import ClusterConfig
from .synthdata import DatasetSpec

CLUSTERING_MODES = ("off", "weak_only", "on")
REFINEMENT_MODES = ("off", "random", "importance", "cascading")


@dataclass
class TrainConfig:
    dataset: DatasetSpec | None = field(default_factory=DatasetSpec)
    csv_path: str | None = None

    d_in: int = 16
    hidden: int = 32
    d_f: int = 8
    num_classes: int = 6

    epochs: int = 60
    batch_labeled: int = 32
    batch_unlabeled: int = 96
    lr: float = 0.05
    warmup_epochs: int = 0
    weight_decay: float = 0.0
    lambda_u: float = 1.0
    pseudo_threshold: float = 0.95

    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    n_id: int = 1
    pool_levels: int = 2
    pool_capacity: int = 120

    clustering: str = "on"
    refinement: str = "cascading"
    labeled_only: bool = False
    drop_ood_unlabeled: bool = False  # the "Clean" reference variant

    # augmentation strengths, in units of the dataset's within-class stddev
    sigma_weak: float = 0.05
    sigma_strong: float = 0.25
    p_drop: float = 0.1

    seed: int = 0

    def validate(self) -> None:
        if self.dataset is None and self.csv_path is None:
            raise ConfigError("need either a dataset spec or a csv_path")
        if self.dataset is not None and self.csv_path is not None:
            raise ConfigError("dataset spec and csv_path are mutually exclusive")
        if self.dataset is not None:
            try:
                self.dataset.validate()
            except Exception as exc:
                raise ConfigError(f"bad dataset spec: {exc}") from exc
            if self.dataset.num_classes != self.num_classes:
                raise ConfigError(
                    f"num_classes {self.num_classes} != dataset spec's {self.dataset.num_classes}"
                )
            if self.dataset.d_in != self.d_in:
                raise ConfigError(f"d_in {self.d_in} != dataset spec's {self.dataset.d_in}")
        for name in ("d_in", "hidden", "d_f", "num_classes", "epochs", "batch_labeled", "batch_unlabeled"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.warmup_epochs < 0 or self.weight_decay < 0 or self.lambda_u < 0:
            raise ConfigError("warmup_epochs, weight_decay and lambda_u must be >= 0")
        if not (0 < self.pseudo_threshold < 1):
            raise ConfigError("pseudo_threshold must be in (0, 1)")
        try:
            self.cluster.validate()
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"bad cluster config: {exc}") from exc
        if not (1 <= self.n_id <= self.cluster.k):
            raise ConfigError(f"n_id must be in [1, k={self.cluster.k}]")
        if self.pool_levels < 0 or self.pool_capacity < 1:
            raise ConfigError("pool_levels must be >= 0 and pool_capacity >= 1")
        if self.clustering not in CLUSTERING_MODES:
            raise ConfigError(f"clustering must be one of {CLUSTERING_MODES}")
        if self.refinement not in REFINEMENT_MODES:
            raise ConfigError(f"refinement must be one of {REFINEMENT_MODES}")
        if self.sigma_weak < 0 or self.sigma_strong < 0 or not (0 <= self.p_drop <= 1):
            raise ConfigError("bad augmentation constants")

    # -- derived toggles --------------------------------------------------
    @property
    def clustering_loss_active(self) -> bool:
        return self.clustering in ("on", "weak_only") and not self.labeled_only

    @property
    def prototypes_active(self) -> bool:
        """The bank (init, Eq.-style updates, flagging) runs whenever either
        the clustering loss or any refinement mode needs it."""
        return (self.clustering != "off" or self.refinement != "off") and not self.labeled_only

    @property
    def pools_active(self) -> bool:
        return self.refinement != "off" and not self.labeled_only

    @property
    def num_pool_levels(self) -> int:
        if not self.pools_active:
            return 0
        if self.refinement in ("random", "importance"):
            return 1
        return self.pool_levels

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if self.dataset is None:
            out.pop("dataset")
        else:
            out.pop("csv_path")
        return out


def _build(cls, data: dict, where: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(f"bad {where}: {exc}") from exc


def config_from_dict(data: dict) -> TrainConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    data = dict(data)
    if "dataset" in data and data["dataset"] is not None:
        if "csv_path" in data and data["csv_path"] is not None:
            raise ConfigError("dataset spec and csv_path are mutually exclusive")
        data["dataset"] = _build(DatasetSpec, data["dataset"], "dataset")
    elif data.get("csv_path") is not None:
        data["dataset"] = None
    if "cluster" in data and isinstance(data["cluster"], dict):
        data["cluster"] = _build(ClusterConfig, data["cluster"], "cluster")
    cfg = _build(TrainConfig, data, "config")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")
