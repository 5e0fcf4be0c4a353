"""Datasets, session splitting, the synthetic cluster generator and TLCD files.

TLCD layout (all little-endian)::

    b"TLCD" | version u32 | class count u32
    per class: class id u32 | train count u32 | test count u32 | feature dim u32
               | train vectors f64[train count * dim] | test vectors f64[test count * dim]
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .binio import ByteReader, f64_block
from .errors import ConfigError, DataError, FormatError, InfeasibleError, ProtocolError
from .seeding import rng_for

DATASET_MAGIC = b"TLCD"
DATASET_VERSION = 1


@dataclass
class ClassSplit:
    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.float64)
        self.test = np.asarray(self.test, dtype=np.float64)
        if self.train.ndim != 2 or self.test.ndim != 2:
            raise DataError("train and test splits must be 2-d (samples x features)")
        if self.train.shape[1] != self.test.shape[1]:
            raise DataError(
                f"train/test feature widths differ: {self.train.shape[1]} vs {self.test.shape[1]}"
            )


@dataclass
class LabeledDataset:
    """Per-class train/test splits, keyed by class id in insertion order."""

    classes: dict[int, ClassSplit] = field(default_factory=dict)

    def __post_init__(self):
        dims = {split.train.shape[1] for split in self.classes.values()}
        if len(dims) > 1:
            raise DataError(f"classes disagree on feature dimension: {sorted(dims)}")

    @property
    def class_ids(self) -> list[int]:
        return list(self.classes)

    @property
    def feature_dim(self) -> int | None:
        for split in self.classes.values():
            return split.train.shape[1]
        return None

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset) or self.class_ids != other.class_ids:
            return False
        return all(
            np.array_equal(a.train, b.train) and np.array_equal(a.test, b.test)
            for a, b in zip(self.classes.values(), other.classes.values())
        )


@dataclass
class SessionDataset:
    """Training data D^t of one session plus the held-out test data of its classes."""

    session_id: int
    class_ids: list[int]
    train: dict[int, np.ndarray]
    test: dict[int, np.ndarray]

    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _stack(self.class_ids, self.train)

    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _stack(self.class_ids, self.test)

    @property
    def num_train(self) -> int:
        return int(sum(len(self.train[c]) for c in self.class_ids))


def _stack(class_ids: list[int], parts: dict[int, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    if not class_ids:
        raise DataError("session has no classes")
    x = np.concatenate([parts[c] for c in class_ids], axis=0)
    y = np.concatenate([np.full(len(parts[c]), c, dtype=np.int64) for c in class_ids])
    return x, y


# -- synthetic clusters -------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int
    feature_dim: int
    train_per_class: int = 100
    test_per_class: int = 50
    cluster_std: float = 1.0
    min_center_separation: float = 8.0
    seed: int = 0
    max_attempts: int = 10_000

    def __post_init__(self):
        counts = (self.num_classes, self.feature_dim, self.train_per_class, self.test_per_class)
        if any(c <= 0 for c in counts):
            raise ConfigError(f"synthetic counts must be positive, got {counts}")
        if not self.cluster_std > 0:
            raise ConfigError(f"cluster_std must be positive, got {self.cluster_std}")
        if not self.min_center_separation > 0:
            raise ConfigError(
                f"min_center_separation must be positive, got {self.min_center_separation}"
            )


def sample_centers(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample centers pairwise at least ``separation * std`` apart."""
    min_dist = spec.min_center_separation * spec.cluster_std
    # typical pairwise distance of N(0, spread^2 I) centers is sqrt(2) * min_dist
    spread = min_dist / np.sqrt(spec.feature_dim)
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < spec.num_classes:
        if attempts >= spec.max_attempts:
            raise InfeasibleError(
                f"placed only {len(centers)} of {spec.num_classes} centers after "
                f"{attempts} attempts; use a larger feature_dim or a smaller separation"
            )
        attempts += 1
        cand = rng.normal(0.0, spread, size=spec.feature_dim)
        if all(np.linalg.norm(cand - c) >= min_dist for c in centers):
            centers.append(cand)
    return np.stack(centers)


def generate_synth(spec: SynthSpec) -> LabeledDataset:
    """Isotropic Gaussian clusters with ids 0..num_classes-1."""
    rng = rng_for(spec.seed, "synth")
    centers = sample_centers(spec, rng)
    classes = {}
    for cid, center in enumerate(centers):
        train = center + rng.normal(0.0, spec.cluster_std, size=(spec.train_per_class, spec.feature_dim))
        test = center + rng.normal(0.0, spec.cluster_std, size=(spec.test_per_class, spec.feature_dim))
        classes[cid] = ClassSplit(train, test)
    return LabeledDataset(classes)


# -- session protocol ---------------------------------------------------------


@dataclass(frozen=True)
class ProtocolSpec:
    """Base/novel class counts and the N-way K-shot incremental schedule."""

    num_base_classes: int = 60
    num_novel_classes: int = 40
    way: int = 5
    shot: int = 5
    num_sessions: int = 9
    seed: int = 0

    def __post_init__(self):
        if min(self.num_base_classes, self.way, self.shot, self.num_sessions) < 1:
            raise ConfigError("protocol counts must be positive")
        if self.num_novel_classes != self.way * (self.num_sessions - 1):
            raise ConfigError(
                f"num_novel_classes ({self.num_novel_classes}) must equal way x "
                f"(num_sessions - 1) = {self.way} x {self.num_sessions - 1}"
            )

    @property
    def num_classes(self) -> int:
        return self.num_base_classes + self.num_novel_classes

    def memory_size(self, session: int) -> int:
        return self.num_base_classes + self.way * (session - 1)


def split_sessions(data: LabeledDataset, spec: ProtocolSpec) -> list[SessionDataset]:
    if len(data.classes) != spec.num_classes:
        raise ProtocolError(
            f"dataset has {len(data.classes)} classes, protocol needs "
            f"{spec.num_base_classes} base + {spec.num_novel_classes} novel"
        )
    rng = rng_for(spec.seed, "split")
    order = [data.class_ids[i] for i in rng.permutation(len(data.classes))]

    base = sorted(order[: spec.num_base_classes])
    sessions = [
        SessionDataset(
            1,
            base,
            {c: data.classes[c].train for c in base},
            {c: data.classes[c].test for c in base},
        )
    ]
    novel = order[spec.num_base_classes :]
    for t in range(spec.num_sessions - 1):
        group = sorted(novel[t * spec.way : (t + 1) * spec.way])
        train = {}
        for c in group:
            pool = data.classes[c].train
            if len(pool) < spec.shot:
                raise ProtocolError(
                    f"class {c} has {len(pool)} training samples, fewer than shot={spec.shot}"
                )
            idx = rng.choice(len(pool), size=spec.shot, replace=False)
            train[c] = pool[idx]
        sessions.append(SessionDataset(t + 2, group, train, {c: data.classes[c].test for c in group}))
    return sessions


# -- TLCD files ---------------------------------------------------------------


def dataset_to_bytes(data: LabeledDataset) -> bytes:
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<II", DATASET_VERSION, len(data.classes)))
    for cid, split in data.classes.items():
        dim = split.train.shape[1]
        buf.write(struct.pack("<IIII", cid, len(split.train), len(split.test), dim))
        buf.write(np.ascontiguousarray(split.train, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(split.test, dtype="<f8").tobytes())
    return buf.getvalue()


def dataset_from_bytes(raw: bytes) -> LabeledDataset:
    r = ByteReader(raw)
    if r.take(4, "magic") != DATASET_MAGIC:
        raise FormatError("bad magic, expected TLCD", 0)
    version = r.u32("version")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    classes: dict[int, ClassSplit] = {}
    for _ in range(r.u32("class count")):
        at = r.pos
        cid = r.u32("class id")
        n_train, n_test, dim = r.u32("train count"), r.u32("test count"), r.u32("feature dim")
        if cid in classes:
            raise FormatError(f"duplicate class id {cid}", at)
        train = f64_block(r, n_train, dim, f"class {cid} train vectors")
        test = f64_block(r, n_test, dim, f"class {cid} test vectors")
        classes[cid] = ClassSplit(train, test)
    r.finish()
    try:
        return LabeledDataset(classes)
    except DataError as exc:
        raise FormatError(str(exc)) from None


def save_dataset(data: LabeledDataset, path) -> None:
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(data))


def load_dataset(path) -> LabeledDataset:
    with open(path, "rb") as f:
        return dataset_from_bytes(f.read())
