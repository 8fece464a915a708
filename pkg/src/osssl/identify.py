"""ID/OOD flagging of prototypes and per-sample identification.

Per class, the N_id prototypes nearest to the labeled class center O_s (the
raw arithmetic mean of labeled features, deliberately not renormalized) are
flagged ID.  A gate-open sample is ID iff its nearest same-class prototype
carries the ID flag.  Ground-truth domains never enter here: the inputs are
features, probabilities and the bank.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BankNotFlagged, EmptyClass, InvalidNid
from .numerics import pairwise_sq_distances
from .prototypes import ClusterConfig, PrototypeBank

VERDICT_ID = "ID"
VERDICT_OOD = "OOD"
VERDICT_UNGATED = "ungated"


@dataclass(frozen=True)
class IdentificationResult:
    uid: int
    pseudo_class: int
    nearest_prototype: int | None  # None when ungated
    verdict: str


def labeled_centers(features_by_class: dict[int, np.ndarray], num_classes: int) -> np.ndarray:
    """O_s = arithmetic mean of the labeled features of class s, (S, d_f).

    Unlike the q_y centers used by the clustering loss, these are not
    renormalized; a zero mean is legal (distances stay defined).
    """
    centers = []
    for s in range(num_classes):
        feats = np.atleast_2d(np.asarray(features_by_class.get(s, np.zeros((0, 1))), dtype=np.float64))
        if feats.shape[0] == 0:
            raise EmptyClass(f"class {s} has no labeled features")
        centers.append(feats.mean(axis=0))
    return np.array(centers)


def flag_id_prototypes(bank: PrototypeBank, centers: np.ndarray, n_id: int) -> PrototypeBank:
    """Mark, per class, the n_id prototypes nearest to O_s as ID.

    Ties break toward the lower prototype index (stable sort).
    """
    bank.require_initialized()
    if not (1 <= n_id <= bank.k):
        raise InvalidNid(f"n_id must be in [1, {bank.k}], got {n_id}")
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    for s in range(bank.num_classes):
        dist = np.linalg.norm(bank.prototypes[s] - centers[s], axis=1)
        order = np.argsort(dist, kind="stable")
        flags = np.zeros(bank.k, dtype=bool)
        flags[order[:n_id]] = True
        bank.is_id[s] = flags
    bank.flagged = True
    return bank


def identify_sample(
    bank: PrototypeBank,
    feature: np.ndarray,
    probs: np.ndarray,
    pseudo: int,
    cfg: ClusterConfig,
    uid: int = -1,
) -> IdentificationResult:
    if not bank.flagged:
        raise BankNotFlagged("is_id flags not populated")
    if float(np.max(probs)) <= cfg.t_c:
        return IdentificationResult(uid, pseudo, None, VERDICT_UNGATED)
    d2 = pairwise_sq_distances(np.asarray(feature, dtype=np.float64)[None, :], bank.prototypes[pseudo])[0]
    j_star = int(d2.argmin())
    verdict = VERDICT_ID if bank.is_id[pseudo, j_star] else VERDICT_OOD
    return IdentificationResult(uid, pseudo, j_star, verdict)


def identify_batch(
    bank: PrototypeBank,
    features: np.ndarray,
    probs: np.ndarray,
    pseudo: np.ndarray,
    uids: np.ndarray,
    cfg: ClusterConfig,
) -> list[IdentificationResult]:
    """Vectorized identify_sample over a batch, in batch order."""
    if not bank.flagged:
        raise BankNotFlagged("is_id flags not populated")
    n = features.shape[0]
    gate = probs.max(axis=1) > cfg.t_c
    j_star = np.full(n, -1, dtype=np.int64)
    for s in np.unique(pseudo[gate]):
        rows = np.where(gate & (pseudo == s))[0]
        d2 = pairwise_sq_distances(features[rows], bank.prototypes[s])
        j_star[rows] = d2.argmin(axis=1)
    out: list[IdentificationResult] = []
    for i in range(n):
        if not gate[i]:
            out.append(IdentificationResult(int(uids[i]), int(pseudo[i]), None, VERDICT_UNGATED))
        else:
            j = int(j_star[i])
            verdict = VERDICT_ID if bank.is_id[int(pseudo[i]), j] else VERDICT_OOD
            out.append(IdentificationResult(int(uids[i]), int(pseudo[i]), j, verdict))
    return out
