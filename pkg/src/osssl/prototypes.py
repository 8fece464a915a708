"""Prototype bank: k-means initialization, clustering losses, momentum updates.

Each class owns K unit-norm prototypes.  Losses are contrastive against the
class's prototypes with the nearest one (Euclidean, which for unit vectors
orders the same as cosine) as the positive.  A sample only contributes when
its classifier confidence strictly exceeds t_c.  Prototypes move by momentum
toward gate-open weak-view features and are renormalized after each update so
the temperature-scaled logits keep their range.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BankAlreadyInitialized,
    BankNotInitialized,
    ConfigError,
    EmptyClass,
    TooFewPoints,
    NotEnoughWarmupSamples,
)
from .numerics import Rng, l2_normalize, l2_normalize_rows, logsumexp, pairwise_sq_distances


@dataclass
class ClusterConfig:
    k: int = 4
    tau: float = 0.07
    t_c: float = 0.98
    alpha: float = 0.99
    beta: float = 0.01
    w_c: float = 0.01
    m_warm: int | None = None  # defaults to 4*k
    kmeans_iters: int = 50

    def __post_init__(self):
        if self.m_warm is None:
            self.m_warm = 4 * self.k
        self.validate()

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not (0 < self.t_c <= 1):
            raise ConfigError(f"t_c must be in (0, 1], got {self.t_c}")
        if not (0 < self.alpha < 1) or abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ConfigError(f"need alpha in (0,1) and alpha+beta=1, got {self.alpha}, {self.beta}")
        if self.w_c < 0:
            raise ConfigError(f"w_c must be >= 0, got {self.w_c}")
        if self.m_warm < self.k:
            raise ConfigError(f"m_warm must be >= k, got {self.m_warm} < {self.k}")
        if self.kmeans_iters < 1:
            raise ConfigError("kmeans_iters must be >= 1")


@dataclass
class PrototypeBank:
    prototypes: np.ndarray  # (S, K, d_f), rows unit norm once initialized
    is_id: np.ndarray       # (S, K) bool, set by the identify module
    initialized: bool = False
    flagged: bool = False

    @classmethod
    def empty(cls, num_classes: int, k: int, d_f: int) -> "PrototypeBank":
        return cls(
            prototypes=np.zeros((num_classes, k, d_f)),
            is_id=np.zeros((num_classes, k), dtype=bool),
        )

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def k(self) -> int:
        return self.prototypes.shape[1]

    def require_initialized(self) -> None:
        if not self.initialized:
            raise BankNotInitialized("prototype bank not initialized")


def kmeans(points: np.ndarray, k: int, iters: int, rng: Rng) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded to the point currently farthest from its
    assigned center.  Inertia is non-increasing across iterations.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    if n < k:
        raise TooFewPoints(f"{n} points for k={k}")

    # k-means++ seeding
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(0, n))
    centers[0] = points[first]
    chosen = {first}
    d2 = pairwise_sq_distances(points, centers[0:1])[:, 0]
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # all remaining mass sits on already-chosen points; pick any unchosen
            idx = next(i for i in range(n) if i not in chosen)
        else:
            u = rng.uniform() * total
            idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
            idx = min(idx, n - 1)
        centers[j] = points[idx]
        chosen.add(idx)
        d2 = np.minimum(d2, pairwise_sq_distances(points, centers[j : j + 1])[:, 0])

    assign = None
    for _ in range(iters):
        dist = pairwise_sq_distances(points, centers)
        new_assign = dist.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = points[assign == j]
            if len(members) == 0:
                # re-seed to the point farthest from its current center
                per_point = dist[np.arange(n), assign]
                centers[j] = points[int(per_point.argmax())]
            else:
                centers[j] = members.mean(axis=0)
    return centers


def kmeans_inertia(points: np.ndarray, centers: np.ndarray) -> float:
    return float(pairwise_sq_distances(points, centers).min(axis=1).sum())


def init_prototypes(
    bank: PrototypeBank,
    per_class_features: dict[int, np.ndarray],
    cfg: ClusterConfig,
    rng: Rng,
) -> PrototypeBank:
    """One-shot initialization: per class, normalized k-means centers of the
    warm-up features.  Classes are processed in index order."""
    if bank.initialized:
        raise BankAlreadyInitialized("init_prototypes may only run once")
    for s in range(bank.num_classes):
        feats = np.atleast_2d(np.asarray(per_class_features.get(s, np.zeros((0, 1))), dtype=np.float64))
        if feats.shape[0] < cfg.m_warm:
            raise NotEnoughWarmupSamples(s, feats.shape[0], cfg.m_warm)
        centers = kmeans(feats, cfg.k, cfg.kmeans_iters, rng)
        bank.prototypes[s] = l2_normalize_rows(centers)
    bank.initialized = True
    return bank


def _neglog_softmax_at(logits: np.ndarray, idx: int) -> float:
    return logsumexp(logits) - float(logits[idx])


def _loss_and_grad(protos: np.ndarray, feature: np.ndarray, j_star: int, tau: float) -> tuple[float, np.ndarray]:
    logits = protos @ feature / tau
    loss = _neglog_softmax_at(logits, j_star)
    sigma = np.exp(logits - logsumexp(logits))
    sigma[j_star] -= 1.0
    grad = sigma @ protos / tau
    return loss, grad


def nearest_prototype(bank: PrototypeBank, feature: np.ndarray, class_index: int) -> int:
    d2 = pairwise_sq_distances(feature[None, :], bank.prototypes[class_index])[0]
    return int(d2.argmin())


def nearest_prototypes_batch(bank: PrototypeBank, features: np.ndarray, pseudo: np.ndarray) -> np.ndarray:
    """Index of each sample's nearest prototype within its pseudo class."""
    bank.require_initialized()
    out = np.empty(features.shape[0], dtype=np.int64)
    for s in np.unique(pseudo):
        rows = np.where(pseudo == s)[0]
        out[rows] = pairwise_sq_distances(features[rows], bank.prototypes[s]).argmin(axis=1)
    return out


def clustering_loss_unlabeled(
    bank: PrototypeBank,
    feature: np.ndarray,
    probs: np.ndarray,
    pseudo: int,
    cfg: ClusterConfig,
) -> tuple[float, np.ndarray, int | None]:
    """Contrastive loss of one unlabeled sample against its pseudo-class
    prototypes.  Gate closed (max prob <= t_c) means exactly zero loss and
    gradient."""
    bank.require_initialized()
    feature = np.asarray(feature, dtype=np.float64)
    if float(np.max(probs)) <= cfg.t_c:
        return 0.0, np.zeros_like(feature), None
    j_star = nearest_prototype(bank, feature, pseudo)
    loss, grad = _loss_and_grad(bank.prototypes[pseudo], feature, j_star, cfg.tau)
    return loss, grad, j_star


def clustering_loss_labeled(
    bank: PrototypeBank,
    feature: np.ndarray,
    probs: np.ndarray,
    label: int,
    class_center: np.ndarray,
    cfg: ClusterConfig,
) -> tuple[float, np.ndarray, int | None]:
    """Labeled-sample loss: -f.q_y (ungated) plus the gated prototype term
    against the true class's prototypes."""
    bank.require_initialized()
    feature = np.asarray(feature, dtype=np.float64)
    q = np.asarray(class_center, dtype=np.float64)
    loss = -float(feature @ q)
    grad = -q.copy()
    j_star: int | None = None
    if float(np.max(probs)) > cfg.t_c:
        j_star = nearest_prototype(bank, feature, label)
        proto_loss, proto_grad = _loss_and_grad(bank.prototypes[label], feature, j_star, cfg.tau)
        loss += proto_loss
        grad += proto_grad
    return loss, grad, j_star


def clustering_loss_cr(
    bank: PrototypeBank,
    weak_feature: np.ndarray,
    weak_probs: np.ndarray,
    pseudo: int,
    strong_feature: np.ndarray,
    cfg: ClusterConfig,
) -> tuple[float, np.ndarray, np.ndarray, int | None]:
    """Consistency-regularized form: both views share the target prototype
    chosen by the weak view, and the weak view's confidence gates both."""
    bank.require_initialized()
    weak_feature = np.asarray(weak_feature, dtype=np.float64)
    strong_feature = np.asarray(strong_feature, dtype=np.float64)
    if float(np.max(weak_probs)) <= cfg.t_c:
        return 0.0, np.zeros_like(weak_feature), np.zeros_like(strong_feature), None
    j_star = nearest_prototype(bank, weak_feature, pseudo)
    protos = bank.prototypes[pseudo]
    loss_w, grad_w = _loss_and_grad(protos, weak_feature, j_star, cfg.tau)
    loss_s, grad_s = _loss_and_grad(protos, strong_feature, j_star, cfg.tau)
    return loss_w + loss_s, grad_w, grad_s, j_star


def update_prototype(
    bank: PrototypeBank,
    class_index: int,
    j_star: int,
    feature: np.ndarray,
    cfg: ClusterConfig,
) -> PrototypeBank:
    """Momentum update of a single prototype toward a gate-open weak feature,
    renormalized back onto the sphere.  Mutates and returns the bank."""
    bank.require_initialized()
    p = bank.prototypes[class_index, j_star]
    bank.prototypes[class_index, j_star] = l2_normalize(cfg.alpha * p + cfg.beta * np.asarray(feature, dtype=np.float64))
    return bank


def labeled_class_centers(features_by_class: dict[int, np.ndarray], num_classes: int) -> np.ndarray:
    """q_y = normalize(sum of labeled features of class y), stacked (S, d_f)."""
    centers = []
    for s in range(num_classes):
        feats = np.atleast_2d(np.asarray(features_by_class.get(s, np.zeros((0, 1))), dtype=np.float64))
        if feats.shape[0] == 0:
            raise EmptyClass(f"class {s} has no labeled features")
        centers.append(l2_normalize(feats.sum(axis=0)))
    return np.array(centers)


# -- batched forms used by the trainer ------------------------------------
# Semantically identical to looping the per-sample ops above over a batch
# against a fixed bank snapshot; tested for equality against them.

@dataclass
class BatchClusterTerms:
    loss_sum: float
    grad_weak: np.ndarray    # (n, d_f)
    grad_strong: np.ndarray  # (n, d_f)
    j_star: np.ndarray       # (n,) int, -1 where gate closed
    gate: np.ndarray         # (n,) bool


def batch_unlabeled_terms(
    bank: PrototypeBank,
    weak_features: np.ndarray,
    weak_probs: np.ndarray,
    pseudo: np.ndarray,
    strong_features: np.ndarray | None,
    cfg: ClusterConfig,
    weak_only: bool = False,
) -> BatchClusterTerms:
    bank.require_initialized()
    n, d_f = weak_features.shape
    grad_w = np.zeros((n, d_f))
    grad_s = np.zeros((n, d_f))
    j_star = np.full(n, -1, dtype=np.int64)
    gate = weak_probs.max(axis=1) > cfg.t_c
    loss_sum = 0.0
    for s in np.unique(pseudo[gate]):
        rows = np.where(gate & (pseudo == s))[0]
        protos = bank.prototypes[s]  # (K, d_f)
        fw = weak_features[rows]
        d2 = pairwise_sq_distances(fw, protos)
        js = d2.argmin(axis=1)
        j_star[rows] = js
        lw, gw = _rows_loss_grad(protos, fw, js, cfg.tau)
        loss_sum += lw
        grad_w[rows] = gw
        if not weak_only and strong_features is not None:
            fs = strong_features[rows]
            ls, gs = _rows_loss_grad(protos, fs, js, cfg.tau)
            loss_sum += ls
            grad_s[rows] = gs
    return BatchClusterTerms(loss_sum, grad_w, grad_s, j_star, gate)


def batch_labeled_terms(
    bank: PrototypeBank,
    features: np.ndarray,
    probs: np.ndarray,
    labels: np.ndarray,
    class_centers: np.ndarray,
    cfg: ClusterConfig,
) -> BatchClusterTerms:
    bank.require_initialized()
    n, d_f = features.shape
    q = class_centers[labels]  # (n, d_f)
    loss_sum = float(-np.sum(features * q))
    grad = -q.copy()
    grad_s = np.zeros((n, d_f))
    j_star = np.full(n, -1, dtype=np.int64)
    gate = probs.max(axis=1) > cfg.t_c
    for s in np.unique(labels[gate]):
        rows = np.where(gate & (labels == s))[0]
        protos = bank.prototypes[s]
        f = features[rows]
        js = pairwise_sq_distances(f, protos).argmin(axis=1)
        j_star[rows] = js
        l, g = _rows_loss_grad(protos, f, js, cfg.tau)
        loss_sum += l
        grad[rows] += g
    return BatchClusterTerms(loss_sum, grad, grad_s, j_star, gate)


def _rows_loss_grad(protos: np.ndarray, feats: np.ndarray, js: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    logits = feats @ protos.T / tau  # (n, K)
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
    rows = np.arange(feats.shape[0])
    loss = float(np.sum(lse - logits[rows, js]))
    sigma = np.exp(logits - lse[:, None])
    sigma[rows, js] -= 1.0
    grad = sigma @ protos / tau
    return loss, grad
