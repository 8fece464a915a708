"""Small dense-vector kernels and the deterministic RNG shared by all modules.

Vectors and matrices are plain float64 numpy arrays.  All randomness flows
through `Rng`, which derives named substreams (data, augment, kmeans, pools,
model_init, ...) so that toggling one component of the engine never shifts
another component's draws.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import DimensionMismatch, ZeroVector

ZERO_NORM_TOL = 1e-12


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||_2.  Raises ZeroVector when the norm is <= 1e-12."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= ZERO_NORM_TOL:
        raise ZeroVector(f"cannot normalize vector with norm {norm!r}")
    return v / norm


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise l2_normalize with the same zero-norm check per row."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms <= ZERO_NORM_TOL):
        bad = int(np.argmax(norms <= ZERO_NORM_TOL))
        raise ZeroVector(f"row {bad} has norm {norms[bad]!r}")
    return m / norms[:, None]


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction for stability."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


def softmax_rows(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise temperature softmax for 2-D logit arrays."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def logsumexp(z: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    m = float(np.max(z))
    return m + float(np.log(np.sum(np.exp(z - m))))


def logsumexp_rows(z: np.ndarray) -> np.ndarray:
    m = np.max(z, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(z - m), axis=1, keepdims=True)))[:, 0]


def pairwise_sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of squared Euclidean distances, entry (i, j) = ||a_i - b_j||^2.

    Computed by explicit differencing (not the dot-product expansion) so the
    diagonal is exactly zero when a and b are the same array.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"dimension {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _name_key(name: str) -> tuple[int, ...]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4))


class Rng:
    """Deterministic PCG64 stream with named substream derivation.

    The same (seed, split path) always yields the same sequence of draws.
    Substreams are derived by hashing the name into a SeedSequence spawn
    key, so streams are independent of the order in which they are created
    and of how much any sibling stream has been consumed.
    """

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def split(self, name: str) -> "Rng":
        child = np.random.SeedSequence(
            entropy=self._seq.entropy,
            spawn_key=tuple(self._seq.spawn_key) + _name_key(name),
        )
        return Rng(self.seed, child)

    # -- draws ----------------------------------------------------------
    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        return self._gen.normal(loc=loc, scale=scale, size=size)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low=low, high=high, size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def choice_indices(self, n: int, k: int, replace: bool = False) -> np.ndarray:
        """k indices drawn from range(n), without replacement by default."""
        return self._gen.choice(n, size=k, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    # -- state (for checkpointing) ---------------------------------------
    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state
