"""Checkpoint format: one JSON document, format_version 1.

Holds the config echo, all parameter tensors (row-major lists), the
prototype bank, pool pyramid state, RNG stream states and the completed
epoch count.  Resuming restores the RNG streams exactly, so a resumed run
reproduces the uninterrupted run's remaining log byte for byte.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch
from .model import ModelParams
from .pools import PoolPyramid, SamplePool
from .prototypes import PrototypeBank

FORMAT_VERSION = 1


def params_to_json(params: ModelParams) -> dict:
    return {name: getattr(params, name).tolist() for name in ModelParams.FIELDS}


def params_from_json(data: dict) -> ModelParams:
    try:
        return ModelParams(**{name: np.array(data[name], dtype=np.float64) for name in ModelParams.FIELDS})
    except KeyError as exc:
        raise CorruptCheckpoint(f"missing parameter tensor: {exc}") from exc


def bank_to_json(bank: PrototypeBank) -> dict:
    return {
        "prototypes": bank.prototypes.tolist(),
        "is_id": bank.is_id.astype(int).tolist(),
        "initialized": bank.initialized,
        "flagged": bank.flagged,
    }


def bank_from_json(data: dict) -> PrototypeBank:
    try:
        return PrototypeBank(
            prototypes=np.array(data["prototypes"], dtype=np.float64),
            is_id=np.array(data["is_id"], dtype=bool),
            initialized=bool(data["initialized"]),
            flagged=bool(data["flagged"]),
        )
    except KeyError as exc:
        raise CorruptCheckpoint(f"missing bank field: {exc}") from exc


def pyramid_to_json(pyramid: PoolPyramid) -> dict:
    return {
        "num_classes": pyramid.num_classes,
        "num_levels": pyramid.num_levels,
        "base_capacity": pyramid.base_capacity,
        "cursor": pyramid.cursor,
        "quota_rotation": pyramid.quota_rotation,
        "pools": [
            [{"class_index": p.class_index, "capacity": p.capacity, "uids": list(p.uids)} for p in level]
            for level in pyramid.pool_levels
        ],
        "i_counts": {str(uid): count for uid, count in sorted(pyramid.i_counts.items())},
    }


def pyramid_from_json(data: dict, raw_uids: np.ndarray) -> PoolPyramid:
    try:
        pyramid = PoolPyramid(
            num_classes=int(data["num_classes"]),
            num_levels=int(data["num_levels"]),
            base_capacity=int(data["base_capacity"]),
            raw_uids=raw_uids,
        )
        pyramid.cursor = int(data["cursor"])
        pyramid.quota_rotation = int(data["quota_rotation"])
        for level, stored in zip(pyramid.pool_levels, data["pools"]):
            for pool, p in zip(level, stored):
                pool.class_index = int(p["class_index"])
                pool.capacity = int(p["capacity"])
                pool.uids = [int(u) for u in p["uids"]]
        pyramid.i_counts = {int(k): int(v) for k, v in data["i_counts"].items()}
        return pyramid
    except KeyError as exc:
        raise CorruptCheckpoint(f"missing pyramid field: {exc}") from exc


def build_checkpoint(
    config_echo: dict,
    completed_epochs: int,
    params: ModelParams,
    bank: PrototypeBank,
    pyramid: PoolPyramid,
    warm_sets: dict[int, set[int]],
    rng_states: dict[str, dict],
    init_event: list[int] | None,
) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "config": config_echo,
        "completed_epochs": completed_epochs,
        "params": params_to_json(params),
        "bank": bank_to_json(bank),
        "pyramid": pyramid_to_json(pyramid),
        "warm_sets": {str(s): sorted(uids) for s, uids in sorted(warm_sets.items())},
        "rng": rng_states,
        "init_event": init_event,
    }


def write_checkpoint(checkpoint: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint, fh)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    validate_checkpoint(data)
    return data


def validate_checkpoint(data: dict) -> None:
    if not isinstance(data, dict) or "format_version" not in data:
        raise CorruptCheckpoint("checkpoint is not a JSON object with format_version")
    if data["format_version"] != FORMAT_VERSION:
        raise VersionMismatch(
            f"checkpoint format {data['format_version']}, supported {FORMAT_VERSION}"
        )
    required = ("config", "completed_epochs", "params", "bank", "pyramid", "warm_sets", "rng")
    missing = [k for k in required if k not in data]
    if missing:
        raise CorruptCheckpoint(f"checkpoint missing keys: {missing}")
