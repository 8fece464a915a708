"""Evaluation: test accuracy, exact AUROC, and the two ID scores.

AUROC uses the rank statistic (Mann-Whitney with tie averaging), which is
P(score_ID > score_OOD) + 0.5 P(equal) computed exactly, so tests can
assert equality against the O(n^2) pairwise count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BankNotFlagged, EmptyTestSet, SingleClassInput
from .model import ModelParams, forward_batch
from .numerics import pairwise_sq_distances
from .prototypes import PrototypeBank
from .synthdata import DOMAIN_ID, Example


@dataclass(frozen=True)
class ScoredSample:
    uid: int
    score: float  # higher means more ID-like
    truth: str    # "ID" or "OOD"


def accuracy(params: ModelParams, test_set: list[Example]) -> float:
    """Top-1 accuracy on the (all-ID) test set, raw inputs."""
    if not test_set:
        raise EmptyTestSet("test set is empty")
    x = np.array([e.x for e in test_set])
    y = np.array([e.true_class - 1 for e in test_set])
    probs = forward_batch(params, x).probs
    return float(np.mean(probs.argmax(axis=1) == y))


def auroc(scores: list[ScoredSample]) -> float:
    values = np.array([s.score for s in scores], dtype=np.float64)
    is_id = np.array([s.truth == DOMAIN_ID for s in scores], dtype=bool)
    return auroc_from_arrays(values, is_id)


def auroc_from_arrays(scores: np.ndarray, is_id: np.ndarray) -> float:
    """Exact rank-statistic AUROC with tie averaging."""
    scores = np.asarray(scores, dtype=np.float64)
    is_id = np.asarray(is_id, dtype=bool)
    n_id = int(is_id.sum())
    n_ood = int(len(scores) - n_id)
    if n_id == 0 or n_ood == 0:
        raise SingleClassInput("need at least one ID and one OOD sample")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # ranks are 1-based; ties share the average rank of their block
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_id = float(ranks[is_id].sum())
    u = rank_sum_id - n_id * (n_id + 1) / 2.0
    return u / (n_id * n_ood)


def ood_score_baseline(params: ModelParams, x: np.ndarray) -> float:
    """Max softmax probability of the raw (unaugmented) input."""
    return float(forward_batch(params, x).probs.max())


def ood_scores_baseline(params: ModelParams, xs: np.ndarray) -> np.ndarray:
    return forward_batch(params, xs).probs.max(axis=1)


def ood_score_prototype(bank: PrototypeBank, feature: np.ndarray, pseudo: int) -> float:
    """Margin score: distance to the nearest OOD prototype of the pseudo
    class minus distance to the nearest ID prototype.  Positive iff the
    nearest prototype is ID.  When the class has no OOD prototypes the
    score degrades to minus the nearest-ID distance."""
    if not bank.flagged:
        raise BankNotFlagged("is_id flags not populated")
    d = np.sqrt(pairwise_sq_distances(np.asarray(feature, dtype=np.float64)[None, :], bank.prototypes[pseudo])[0])
    id_mask = bank.is_id[pseudo]
    d_id = float(d[id_mask].min())
    if not np.any(~id_mask):
        return -d_id
    d_ood = float(d[~id_mask].min())
    return d_ood - d_id


def ood_scores_prototype(bank: PrototypeBank, features: np.ndarray, pseudo: np.ndarray) -> np.ndarray:
    if not bank.flagged:
        raise BankNotFlagged("is_id flags not populated")
    n = features.shape[0]
    out = np.empty(n)
    for s in np.unique(pseudo):
        rows = np.where(pseudo == s)[0]
        d = np.sqrt(pairwise_sq_distances(features[rows], bank.prototypes[s]))
        id_mask = bank.is_id[s]
        d_id = d[:, id_mask].min(axis=1)
        if np.any(~id_mask):
            out[rows] = d[:, ~id_mask].min(axis=1) - d_id
        else:
            out[rows] = -d_id
    return out
