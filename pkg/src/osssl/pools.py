"""Importance-based sample pools and the cascading pyramid.

Level 0 of the pyramid is the raw unlabeled dataset; level l >= 1 holds S
per-class pools of capacity N_p / 2^(l-1).  Batches are drawn circularly
level by level; samples identified ID at level l refill the pools at level
l+1.  The global counter I(uid) is the number of times a sample has ever
been identified ID; a full pool evicts residents by independent Bernoulli
draws with probability min(M * I_i / sum_j I_j, 1), so often-identified
(well-learnt) samples are the ones most likely to make room.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyPyramidLevel, LevelOutOfRange
from .identify import VERDICT_ID, IdentificationResult
from .numerics import Rng

MODE_IMPORTANCE = "importance"
MODE_RANDOM = "random"


@dataclass
class PoolEntry:
    uid: int
    identified_count: int  # current I(uid); importance score is 1/I

    @property
    def importance(self) -> float:
        return 1.0 / self.identified_count


@dataclass
class SamplePool:
    class_index: int
    capacity: int
    uids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.uids)

    @property
    def free(self) -> int:
        return self.capacity - len(self.uids)

    def entries(self, i_counts: dict[int, int]) -> list[PoolEntry]:
        return [PoolEntry(uid, i_counts.get(uid, 1)) for uid in self.uids]


@dataclass
class UpdateEvent:
    """What one update_pool call did; feeds the debug event log."""

    class_index: int
    case: int  # 1 = appended into free space, 2 = probabilistic replacement
    new_uids: list[int]
    appended: list[int]
    replaced: list[int]
    selected_count: int


def replacement_probabilities(i_values: np.ndarray, m_new: int, capacity: int, mode: str) -> np.ndarray:
    """Per-resident eviction probability.

    importance: min(M * I_i / sum_j I_j, 1)   (the paper's rule)
    random:     M / N_p for every resident    (ablation variant)
    """
    n = len(i_values)
    if mode == MODE_RANDOM:
        return np.full(n, min(m_new / capacity, 1.0))
    total = float(np.sum(i_values))
    return np.minimum(m_new * np.asarray(i_values, dtype=np.float64) / total, 1.0)


def update_pool(
    pool: SamplePool,
    new_uids: list[int],
    i_counts: dict[int, int],
    rng: Rng,
    mode: str = MODE_IMPORTANCE,
) -> UpdateEvent:
    """Insert newly identified ID samples into a pool.

    uids already resident are dropped from new_uids first.  If the free
    space covers the remaining M new uids they are appended (case 1);
    otherwise each resident is selected by its eviction probability and the
    first min(N_r, M) selected residents (in list order) are overwritten by
    the first new uids.  Leftover new uids are discarded.
    """
    resident = set(pool.uids)
    incoming = [u for u in new_uids if u not in resident]
    m = len(incoming)
    if m == 0:
        return UpdateEvent(pool.class_index, 1, list(new_uids), [], [], 0)

    if pool.free >= m:
        pool.uids.extend(incoming)
        return UpdateEvent(pool.class_index, 1, list(new_uids), incoming, [], 0)

    i_values = np.array([i_counts.get(u, 1) for u in pool.uids], dtype=np.float64)
    probs = replacement_probabilities(i_values, m, pool.capacity, mode)
    selected = np.where(rng.uniform(size=len(pool.uids)) < probs)[0]
    n_replace = min(len(selected), m)
    replaced = [pool.uids[idx] for idx in selected[:n_replace]]
    for slot, idx in enumerate(selected[:n_replace]):
        pool.uids[idx] = incoming[slot]
    return UpdateEvent(pool.class_index, 2, list(new_uids), [], replaced, int(len(selected)))


class PoolPyramid:
    """Cascaded per-class pools plus the level cursor and I counters."""

    def __init__(self, num_classes: int, num_levels: int, base_capacity: int, raw_uids: np.ndarray):
        self.num_classes = num_classes
        self.num_levels = num_levels
        self.base_capacity = base_capacity
        self.raw_uids = np.asarray(raw_uids, dtype=np.int64)
        self.pool_levels: list[list[SamplePool]] = [
            [SamplePool(s, max(base_capacity // (2 ** (lvl - 1)), 1)) for s in range(num_classes)]
            for lvl in range(1, num_levels + 1)
        ]
        self.cursor = 0
        self.quota_rotation = 0
        self.i_counts: dict[int, int] = {}

    def level_pools(self, level: int) -> list[SamplePool]:
        if not (1 <= level <= self.num_levels):
            raise LevelOutOfRange(f"level {level} not in [1, {self.num_levels}]")
        return self.pool_levels[level - 1]

    def advance_level(self) -> int:
        """Cycle the cursor 0, 1, ..., N, 0, ...; returns the pre-advance level."""
        value = self.cursor
        self.cursor = (self.cursor + 1) % (self.num_levels + 1)
        return value


def draw_batch(pyramid: PoolPyramid, level: int, batch_size: int, rng: Rng) -> np.ndarray:
    """Draw batch_size uids from one pyramid level.

    Level 0 draws uniformly from the raw dataset with no class quota.
    Levels >= 1 split the batch evenly over the S class pools, rotating
    which classes receive the remainder; any per-class deficit is re-drawn
    uniformly from level 0.
    """
    if len(pyramid.raw_uids) == 0:
        raise EmptyPyramidLevel("raw unlabeled dataset is empty")
    if not (0 <= level <= pyramid.num_levels):
        raise LevelOutOfRange(f"level {level} not in [0, {pyramid.num_levels}]")

    def from_raw(k: int) -> np.ndarray:
        n = len(pyramid.raw_uids)
        idx = rng.choice_indices(n, k, replace=k > n)
        return pyramid.raw_uids[idx]

    if level == 0:
        return from_raw(batch_size)

    pools = pyramid.level_pools(level)
    s_count = pyramid.num_classes
    base, extra = divmod(batch_size, s_count)
    start = pyramid.quota_rotation % s_count
    pyramid.quota_rotation += 1
    quotas = np.full(s_count, base, dtype=np.int64)
    for offset in range(extra):
        quotas[(start + offset) % s_count] += 1

    picked: list[np.ndarray] = []
    deficit = 0
    for s in range(s_count):
        pool = pools[s]
        take = int(min(quotas[s], len(pool)))
        deficit += int(quotas[s]) - take
        if take > 0:
            idx = rng.choice_indices(len(pool), take, replace=False)
            picked.append(np.array([pool.uids[i] for i in idx], dtype=np.int64))
    if deficit > 0:
        picked.append(from_raw(deficit))
    return np.concatenate(picked) if picked else np.zeros(0, dtype=np.int64)


def record_identification(
    pyramid: PoolPyramid,
    level: int,
    results: list[IdentificationResult],
) -> dict[int, list[int]]:
    """Bump I for every ID verdict and return the newly identified uids per
    pseudo-class, ready for insertion into the next level's pools.  OOD and
    ungated verdicts contribute nothing."""
    if not (0 <= level <= pyramid.num_levels):
        raise LevelOutOfRange(f"level {level} not in [0, {pyramid.num_levels}]")
    by_class: dict[int, list[int]] = {}
    for r in results:
        if r.verdict != VERDICT_ID:
            continue
        pyramid.i_counts[r.uid] = pyramid.i_counts.get(r.uid, 0) + 1
        by_class.setdefault(r.pseudo_class, []).append(r.uid)
    return by_class


def id_density(uids: list[int], domain_of: dict[int, str]) -> tuple[float, bool]:
    """Fraction of entries whose ground-truth domain is ID.

    Metrics-only: callers pass the uid -> domain map built from the dataset.
    An empty collection reports density 0.0 with the emptiness flag set.
    """
    if not uids:
        return 0.0, True
    hits = sum(1 for u in uids if domain_of[u] == "ID")
    return hits / len(uids), False


def level_uids(pyramid: PoolPyramid, level: int) -> list[int]:
    """All resident uids of one pool level, class order then list order."""
    pools = pyramid.level_pools(level)
    out: list[int] = []
    for pool in pools:
        out.extend(pool.uids)
    return out
