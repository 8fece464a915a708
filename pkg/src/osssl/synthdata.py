"""Synthetic open-set benchmarks and CSV ingestion.

Generated datasets are Gaussian-mixture ID classes plus OOD clusters whose
centers are rejected until they sit at least separation/2 from every ID
center, which keeps them "near" enough to be confusable.  Everything is a
pure function of the DatasetSpec (including its seed).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleSpec, InvariantViolation, ParseError, SchemaError
from .numerics import Rng

DOMAIN_ID = "ID"
DOMAIN_OOD = "OOD"

SPLIT_LABELED = "labeled"
SPLIT_UNLABELED = "unlabeled"
SPLIT_TEST = "test"

_CENTER_TRIES = 1000

# OOD cluster shape: centers anchored to ID classes round-robin at a radius
# drawn from OOD_RADIUS_RANGE (in units of the separation), samples drawn at
# OOD_STD_FACTOR times the within-class stddev.  The wider spread keeps OOD
# heterogeneous enough that a small extractor cannot cheaply fold it onto an
# ID class's feature cluster.
OOD_RADIUS_RANGE = (0.55, 0.95)
OOD_STD_FACTOR = 1.0


@dataclass(frozen=True)
class Example:
    """One sample.  domain and true_class are ground truth for metrics only;
    training code must touch nothing but x (and the label of labeled rows)."""

    uid: int
    x: np.ndarray
    true_class: int | None  # 1..S for ID rows that carry a label, else None
    domain: str  # DOMAIN_ID or DOMAIN_OOD

    def __eq__(self, other) -> bool:
        if not isinstance(other, Example):
            return NotImplemented
        return (
            self.uid == other.uid
            and self.true_class == other.true_class
            and self.domain == other.domain
            and np.array_equal(self.x, other.x)
        )


@dataclass
class OpenSetDataset:
    labeled: list[Example]
    unlabeled: list[Example]
    test: list[Example]
    num_classes: int

    def validate(self) -> None:
        labeled_uids = {e.uid for e in self.labeled}
        unlabeled_uids = {e.uid for e in self.unlabeled}
        all_uids = [e.uid for e in self.labeled + self.unlabeled + self.test]
        if len(all_uids) != len(set(all_uids)):
            raise InvariantViolation("duplicate uids in dataset")
        if labeled_uids & unlabeled_uids:
            raise InvariantViolation("labeled and unlabeled splits share uids")
        for e in self.labeled:
            if e.domain != DOMAIN_ID:
                raise InvariantViolation(f"labeled uid {e.uid} is not ID")
            if e.true_class is None or not (1 <= e.true_class <= self.num_classes):
                raise InvariantViolation(f"labeled uid {e.uid} has bad label")
        for e in self.test:
            if e.domain != DOMAIN_ID:
                raise InvariantViolation(f"test uid {e.uid} is not ID")
            if e.true_class is None or not (1 <= e.true_class <= self.num_classes):
                raise InvariantViolation(f"test uid {e.uid} has bad label")
        seen = {e.true_class for e in self.labeled}
        missing = set(range(1, self.num_classes + 1)) - seen
        if missing:
            raise InvariantViolation(f"classes without labeled examples: {sorted(missing)}")

    def equals(self, other: "OpenSetDataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and self.labeled == other.labeled
            and self.unlabeled == other.unlabeled
            and self.test == other.test
        )


@dataclass
class DatasetSpec:
    num_classes: int = 6
    ood_clusters: int = 6
    d_in: int = 16
    labeled_per_class: int = 25
    unlabeled_id_per_class: int = 500
    ood_total: int = 3000
    test_per_class: int = 100
    separation: float = 4.0
    stddev: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        counts = (
            self.num_classes,
            self.ood_clusters,
            self.d_in,
            self.labeled_per_class,
            self.unlabeled_id_per_class,
            self.ood_total,
            self.test_per_class,
        )
        if any(c < 0 for c in counts):
            raise InfeasibleSpec("counts must be >= 0")
        if self.num_classes < 1 or self.d_in < 1 or self.labeled_per_class < 1:
            raise InfeasibleSpec("need >= 1 class, >= 1 input dim, >= 1 label per class")
        if self.separation <= 0 or self.stddev <= 0:
            raise InfeasibleSpec("separation and stddev must be > 0")
        if self.ood_total > 0 and self.ood_clusters == 0:
            raise InfeasibleSpec("ood_total > 0 requires ood_clusters >= 1")


def _draw_id_centers(spec: DatasetSpec, rng: Rng) -> np.ndarray:
    # Typical pairwise distance ~1.25*separation; rejection enforces the floor.
    scale = 1.25 * spec.separation / np.sqrt(2.0 * spec.d_in)
    centers: list[np.ndarray] = []
    for _ in range(spec.num_classes):
        for _attempt in range(_CENTER_TRIES):
            c = rng.normal(size=spec.d_in) * scale
            if all(np.linalg.norm(c - prev) >= spec.separation for prev in centers):
                centers.append(c)
                break
        else:
            raise InfeasibleSpec(
                f"could not place {spec.num_classes} ID centers at separation "
                f"{spec.separation} in {_CENTER_TRIES} tries"
            )
    return np.array(centers)


def _draw_ood_centers(spec: DatasetSpec, id_centers: np.ndarray, rng: Rng) -> np.ndarray:
    """OOD cluster centers anchored round-robin to ID classes.

    Each center sits at radius in [0.55, 0.95] * separation from its anchor
    class, re-drawn until it is >= separation/2 from every ID center.  The
    round-robin anchoring gives every class a nearby OOD cluster, which is
    what makes the benchmark a near-OOD task.
    """
    floor = spec.separation / 2.0
    centers = []
    for k in range(spec.ood_clusters):
        anchor = id_centers[k % spec.num_classes]
        for _attempt in range(_CENTER_TRIES):
            direction = rng.normal(size=spec.d_in)
            direction /= np.linalg.norm(direction)
            radius = spec.separation * rng.uniform(low=OOD_RADIUS_RANGE[0], high=OOD_RADIUS_RANGE[1])
            c = anchor + radius * direction
            if np.min(np.linalg.norm(id_centers - c, axis=1)) >= floor:
                centers.append(c)
                break
        else:
            raise InfeasibleSpec(
                f"could not place OOD cluster {k} at >= separation/2 from ID centers"
            )
    return np.array(centers) if centers else np.zeros((0, spec.d_in))


def generate_open_set(spec: DatasetSpec) -> OpenSetDataset:
    """Generate a seeded open-set benchmark.  Pure function of the spec."""
    spec.validate()
    root = Rng(spec.seed).split("dataset")
    id_centers = _draw_id_centers(spec, root.split("id-centers"))
    ood_centers = _draw_ood_centers(spec, id_centers, root.split("ood-centers"))

    labeled: list[Example] = []
    unlabeled: list[Example] = []
    test: list[Example] = []
    uid = 0

    per_class_draws: dict[int, np.ndarray] = {}
    for s in range(spec.num_classes):
        n = spec.labeled_per_class + spec.unlabeled_id_per_class + spec.test_per_class
        class_rng = root.split(f"id-class-{s}")
        per_class_draws[s] = id_centers[s] + spec.stddev * class_rng.normal(size=(n, spec.d_in))

    for s in range(spec.num_classes):
        draws = per_class_draws[s]
        for i in range(spec.labeled_per_class):
            labeled.append(Example(uid, draws[i], s + 1, DOMAIN_ID))
            uid += 1
    for s in range(spec.num_classes):
        draws = per_class_draws[s]
        lo = spec.labeled_per_class
        for i in range(spec.unlabeled_id_per_class):
            # Unlabeled rows never carry class labels (the CSV schema blanks
            # them); only the ID/OOD domain tag is kept for metrics.
            unlabeled.append(Example(uid, draws[lo + i], None, DOMAIN_ID))
            uid += 1
    for k in range(spec.ood_clusters):
        n_k = spec.ood_total // spec.ood_clusters + (1 if k < spec.ood_total % spec.ood_clusters else 0)
        cluster_rng = root.split(f"ood-cluster-{k}")
        draws = ood_centers[k] + OOD_STD_FACTOR * spec.stddev * cluster_rng.normal(size=(n_k, spec.d_in))
        for i in range(n_k):
            unlabeled.append(Example(uid, draws[i], None, DOMAIN_OOD))
            uid += 1
    for s in range(spec.num_classes):
        draws = per_class_draws[s]
        lo = spec.labeled_per_class + spec.unlabeled_id_per_class
        for i in range(spec.test_per_class):
            test.append(Example(uid, draws[lo + i], s + 1, DOMAIN_ID))
            uid += 1

    ds = OpenSetDataset(labeled, unlabeled, test, spec.num_classes)
    ds.validate()
    return ds


# -- augmentation --------------------------------------------------------

def augment(
    x: np.ndarray,
    strength: str,
    rng: Rng,
    *,
    sigma_weak: float = 0.05,
    sigma_strong: float = 0.25,
    p_drop: float = 0.1,
) -> np.ndarray:
    """Weak = Gaussian jitter; strong = bigger jitter then random coordinate drop.

    Sigmas are absolute here; callers scale them by the dataset's within-class
    stddev (the defaults assume stddev 1).
    """
    out = augment_batch(
        np.asarray(x, dtype=np.float64)[None, :],
        strength,
        rng,
        sigma_weak=sigma_weak,
        sigma_strong=sigma_strong,
        p_drop=p_drop,
    )
    return out[0]


def augment_batch(
    xs: np.ndarray,
    strength: str,
    rng: Rng,
    *,
    sigma_weak: float = 0.05,
    sigma_strong: float = 0.25,
    p_drop: float = 0.1,
) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if strength == "weak":
        if sigma_weak == 0.0:
            return xs.copy()
        return xs + sigma_weak * rng.normal(size=xs.shape)
    if strength == "strong":
        out = xs + sigma_strong * rng.normal(size=xs.shape) if sigma_strong > 0 else xs.copy()
        keep = rng.uniform(size=xs.shape) >= p_drop
        return out * keep
    raise ValueError(f"unknown augmentation strength {strength!r}")


# -- CSV round trip -------------------------------------------------------

def _float_repr(x: float) -> str:
    return format(float(x), ".17g")


def save_csv(dataset: OpenSetDataset, path) -> None:
    """Write the CSV schema: uid,split,domain,label,f0..f{d-1}.

    Labels of unlabeled rows are blanked even when the in-memory dataset
    knows them; only the ID/OOD domain tag survives for metrics.
    """
    d = dataset.labeled[0].x.shape[0] if dataset.labeled else dataset.unlabeled[0].x.shape[0]
    header = ["uid", "split", "domain", "label"] + [f"f{i}" for i in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for split, rows in (
            (SPLIT_LABELED, dataset.labeled),
            (SPLIT_UNLABELED, dataset.unlabeled),
            (SPLIT_TEST, dataset.test),
        ):
            for e in rows:
                label = "" if split == SPLIT_UNLABELED or e.true_class is None else str(e.true_class)
                writer.writerow([e.uid, split, e.domain, label] + [_float_repr(v) for v in e.x])


def load_csv(path) -> OpenSetDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file, header required") from None

        required = ["uid", "split", "domain", "label"]
        missing = [c for c in required if c not in header]
        feature_cols = [c for c in header if c.startswith("f") and c[1:].isdigit()]
        if not feature_cols:
            missing.append("f0")
        if missing:
            raise SchemaError(f"missing columns: {missing}", missing=missing)
        d = len(feature_cols)
        expected = required + [f"f{i}" for i in range(d)]
        if header != expected:
            raise SchemaError(f"header must be exactly {expected}, got {header}")

        labeled: list[Example] = []
        unlabeled: list[Example] = []
        test: list[Example] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ParseError(f"expected {len(expected)} fields, got {len(row)}", lineno)
            try:
                uid = int(row[0])
            except ValueError:
                raise ParseError(f"bad uid {row[0]!r}", lineno) from None
            split, domain, label_txt = row[1], row[2], row[3]
            if split not in (SPLIT_LABELED, SPLIT_UNLABELED, SPLIT_TEST):
                raise ParseError(f"bad split {split!r}", lineno)
            if domain not in (DOMAIN_ID, DOMAIN_OOD):
                raise ParseError(f"bad domain {domain!r}", lineno)
            if label_txt == "":
                label = None
            else:
                try:
                    label = int(label_txt)
                except ValueError:
                    raise ParseError(f"bad label {label_txt!r}", lineno) from None
            try:
                x = np.array([float(v) for v in row[4:]], dtype=np.float64)
            except ValueError:
                raise ParseError("bad float in feature columns", lineno) from None

            if split == SPLIT_LABELED:
                if domain == DOMAIN_OOD:
                    raise InvariantViolation(f"line {lineno}: OOD row marked labeled")
                if label is None:
                    raise InvariantViolation(f"line {lineno}: labeled row without label")
                labeled.append(Example(uid, x, label, domain))
            elif split == SPLIT_TEST:
                if domain == DOMAIN_OOD:
                    raise InvariantViolation(f"line {lineno}: OOD row in test split")
                if label is None:
                    raise InvariantViolation(f"line {lineno}: test row without label")
                test.append(Example(uid, x, label, domain))
            else:
                unlabeled.append(Example(uid, x, None, domain))

    if not labeled:
        raise InvariantViolation("no labeled rows")
    num_classes = max(e.true_class for e in labeled)
    ds = OpenSetDataset(labeled, unlabeled, test, num_classes)
    ds.validate()
    return ds
