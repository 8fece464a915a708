"""Two-layer tanh feature extractor + linear head, with hand-derived gradients.

forward: feature = normalize(tanh(tanh(x W1 + b1) W2 + b2)),
         logits  = feature Wc + bc,  probs = softmax(logits).

The normalization gradient is propagated exactly (projection onto the
tangent space of the unit sphere), because the clustering losses
differentiate through the normalized feature.  Pseudo labels come from the
weak view only and are treated as constants: no gradient flows through the
weak view from the pseudo-labeling loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .numerics import Rng, logsumexp_rows, softmax_rows
from .synthdata import augment_batch


@dataclass
class ModelParams:
    w1: np.ndarray  # (d_in, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, d_f)
    b2: np.ndarray  # (d_f,)
    wc: np.ndarray  # (d_f, S)
    bc: np.ndarray  # (S,)

    FIELDS = ("w1", "b1", "w2", "b2", "wc", "bc")

    @classmethod
    def init_random(cls, d_in: int, hidden: int, d_f: int, num_classes: int, rng: Rng) -> "ModelParams":
        def layer(fan_in, fan_out):
            return rng.normal(size=(fan_in, fan_out)) / np.sqrt(fan_in)

        return cls(
            w1=layer(d_in, hidden),
            b1=np.zeros(hidden),
            w2=layer(hidden, d_f),
            b2=np.zeros(d_f),
            wc=layer(d_f, num_classes),
            bc=np.zeros(num_classes),
        )

    def copy(self) -> "ModelParams":
        return ModelParams(*(getattr(self, f).copy() for f in self.FIELDS))

    @property
    def num_classes(self) -> int:
        return self.wc.shape[1]

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]


@dataclass
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wc: np.ndarray
    bc: np.ndarray

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "Gradients":
        return cls(*(np.zeros_like(getattr(params, f)) for f in ModelParams.FIELDS))

    def add(self, other: "Gradients", scale: float = 1.0) -> None:
        for f in ModelParams.FIELDS:
            getattr(self, f).__iadd__(scale * getattr(other, f))


@dataclass
class ForwardResult:
    feature: np.ndarray  # unit norm
    logits: np.ndarray
    probs: np.ndarray


@dataclass
class BatchForward:
    """Forward pass over a batch with the caches needed for backward."""

    x: np.ndarray        # (n, d_in)
    a1: np.ndarray       # tanh layer 1, (n, h)
    a2: np.ndarray       # tanh layer 2 (pre-normalization), (n, d_f)
    norms: np.ndarray    # (n,)
    features: np.ndarray # (n, d_f), rows unit norm
    logits: np.ndarray   # (n, S)
    probs: np.ndarray    # (n, S)

    def result(self, i: int) -> ForwardResult:
        return ForwardResult(self.features[i], self.logits[i], self.probs[i])


# Degenerate pre-normalization features (norm ~ 0, e.g. all-zero weights) fall
# back to a zero feature so the forward pass stays defined; gradients at that
# point are not meaningful.
_NORM_FLOOR = 1e-12


def forward_batch(params: ModelParams, x: np.ndarray) -> BatchForward:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.w1.shape[0]:
        raise DimensionMismatch(f"input dim {x.shape[1]}, expected {params.w1.shape[0]}")
    a1 = np.tanh(x @ params.w1 + params.b1)
    a2 = np.tanh(a1 @ params.w2 + params.b2)
    norms = np.maximum(np.linalg.norm(a2, axis=1), _NORM_FLOOR)
    features = a2 / norms[:, None]
    logits = features @ params.wc + params.bc
    probs = softmax_rows(logits)
    return BatchForward(x, a1, a2, norms, features, logits, probs)


def forward(params: ModelParams, x: np.ndarray) -> ForwardResult:
    return forward_batch(params, x).result(0)


def backward_batch(
    params: ModelParams,
    fwd: BatchForward,
    grads: Gradients,
    dlogits: np.ndarray | None = None,
    dfeature: np.ndarray | None = None,
) -> None:
    """Accumulate parameter gradients for d(loss)/d(logits) and/or
    d(loss)/d(feature) over a cached batch forward."""
    df = np.zeros_like(fwd.features) if dfeature is None else np.asarray(dfeature, dtype=np.float64)
    if dlogits is not None:
        dl = np.asarray(dlogits, dtype=np.float64)
        grads.wc += fwd.features.T @ dl
        grads.bc += dl.sum(axis=0)
        df = df + dl @ params.wc.T
    # normalization: f = a2/||a2||, da2 = (df - f (f . df)) / ||a2||
    proj = np.sum(df * fwd.features, axis=1, keepdims=True)
    da2 = (df - fwd.features * proj) / fwd.norms[:, None]
    dz2 = da2 * (1.0 - fwd.a2 ** 2)
    grads.w2 += fwd.a1.T @ dz2
    grads.b2 += dz2.sum(axis=0)
    da1 = dz2 @ params.w2.T
    dz1 = da1 * (1.0 - fwd.a1 ** 2)
    grads.w1 += fwd.x.T @ dz1
    grads.b1 += dz1.sum(axis=0)


def cross_entropy_rows(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row CE of integer targets, stable via log-sum-exp."""
    lse = logsumexp_rows(logits)
    picked = logits[np.arange(logits.shape[0]), targets]
    return lse - picked


@dataclass
class SslConfig:
    """Knobs for the FixMatch-style loss.  Sigmas are absolute units."""

    lambda_u: float = 1.0
    pseudo_threshold: float = 0.95
    sigma_weak: float = 0.05
    sigma_strong: float = 0.25
    p_drop: float = 0.1


@dataclass
class UnlabeledRecord:
    """Weak-view outcome for one unlabeled sample, consumed downstream by
    the prototype and identification machinery."""

    weak: ForwardResult
    pseudo: int
    confidence: float
    gate_open: bool


@dataclass
class SslParts:
    """Everything a training iteration needs from the FixMatch forward."""

    loss: float
    loss_sup: float
    loss_unsup: float
    fwd_labeled: BatchForward
    dlogits_labeled: np.ndarray
    fwd_weak: BatchForward | None
    fwd_strong: BatchForward | None
    dlogits_strong: np.ndarray | None
    pseudo: np.ndarray | None      # (m,) int
    confidence: np.ndarray | None  # (m,)
    gate_ssl: np.ndarray | None    # (m,) bool, FixMatch 0.95 gate
    x_weak: np.ndarray | None
    x_strong: np.ndarray | None


def ssl_forward(
    params: ModelParams,
    labeled_x: np.ndarray,
    labeled_y: np.ndarray,
    unlabeled_x: np.ndarray | None,
    rng: Rng,
    cfg: SslConfig,
) -> SslParts:
    """FixMatch-style loss pieces.  Augments internally (weak labeled view,
    weak+strong unlabeled views, in that stream order) and returns the
    caches so further feature-level losses can reuse the same views."""
    labeled_x = np.atleast_2d(np.asarray(labeled_x, dtype=np.float64))
    labeled_y = np.asarray(labeled_y, dtype=np.int64)
    n = labeled_x.shape[0]
    aug = dict(sigma_weak=cfg.sigma_weak, sigma_strong=cfg.sigma_strong, p_drop=cfg.p_drop)

    x_lab = augment_batch(labeled_x, "weak", rng, **aug)
    fwd_lab = forward_batch(params, x_lab)
    loss_sup = float(np.mean(cross_entropy_rows(fwd_lab.logits, labeled_y)))
    dlogits_lab = fwd_lab.probs.copy()
    dlogits_lab[np.arange(n), labeled_y] -= 1.0
    dlogits_lab /= n

    if unlabeled_x is None or len(unlabeled_x) == 0:
        return SslParts(
            loss=loss_sup,
            loss_sup=loss_sup,
            loss_unsup=0.0,
            fwd_labeled=fwd_lab,
            dlogits_labeled=dlogits_lab,
            fwd_weak=None,
            fwd_strong=None,
            dlogits_strong=None,
            pseudo=None,
            confidence=None,
            gate_ssl=None,
            x_weak=None,
            x_strong=None,
        )

    unlabeled_x = np.atleast_2d(np.asarray(unlabeled_x, dtype=np.float64))
    m = unlabeled_x.shape[0]
    x_weak = augment_batch(unlabeled_x, "weak", rng, **aug)
    x_strong = augment_batch(unlabeled_x, "strong", rng, **aug)
    fwd_weak = forward_batch(params, x_weak)
    fwd_strong = forward_batch(params, x_strong)

    confidence = fwd_weak.probs.max(axis=1)
    pseudo = fwd_weak.probs.argmax(axis=1)
    gate = confidence >= cfg.pseudo_threshold

    ce_strong = cross_entropy_rows(fwd_strong.logits, pseudo)
    loss_unsup = float(np.sum(ce_strong * gate) / m)

    dlogits_strong = fwd_strong.probs.copy()
    dlogits_strong[np.arange(m), pseudo] -= 1.0
    dlogits_strong *= (cfg.lambda_u / m) * gate[:, None]

    return SslParts(
        loss=loss_sup + cfg.lambda_u * loss_unsup,
        loss_sup=loss_sup,
        loss_unsup=loss_unsup,
        fwd_labeled=fwd_lab,
        dlogits_labeled=dlogits_lab,
        fwd_weak=fwd_weak,
        fwd_strong=fwd_strong,
        dlogits_strong=dlogits_strong,
        pseudo=pseudo,
        confidence=confidence,
        gate_ssl=gate,
        x_weak=x_weak,
        x_strong=x_strong,
    )


def ssl_loss(
    params: ModelParams,
    labeled_x: np.ndarray,
    labeled_y: np.ndarray,
    unlabeled_x: np.ndarray | None,
    rng: Rng,
    cfg: SslConfig,
) -> tuple[float, Gradients, list[UnlabeledRecord]]:
    """Supervised CE plus the gated FixMatch pseudo-labeling term.

    Returns the loss, full parameter gradients, and one record per
    unlabeled sample (weak-view result, pseudo label, confidence).
    """
    parts = ssl_forward(params, labeled_x, labeled_y, unlabeled_x, rng, cfg)
    grads = Gradients.zeros_like(params)
    backward_batch(params, parts.fwd_labeled, grads, dlogits=parts.dlogits_labeled)
    records: list[UnlabeledRecord] = []
    if parts.fwd_weak is not None:
        backward_batch(params, parts.fwd_strong, grads, dlogits=parts.dlogits_strong)
        for i in range(parts.fwd_weak.x.shape[0]):
            records.append(
                UnlabeledRecord(
                    weak=parts.fwd_weak.result(i),
                    pseudo=int(parts.pseudo[i]),
                    confidence=float(parts.confidence[i]),
                    gate_open=bool(parts.gate_ssl[i]),
                )
            )
    return parts.loss, grads, records


def sgd_step(params: ModelParams, grads: Gradients, lr: float, weight_decay: float = 0.0) -> ModelParams:
    """p <- p - lr * (g + weight_decay * p), every tensor."""
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    new = {}
    for f in ModelParams.FIELDS:
        p = getattr(params, f)
        g = getattr(grads, f)
        new[f] = p - lr * (g + weight_decay * p)
    return ModelParams(**new)
