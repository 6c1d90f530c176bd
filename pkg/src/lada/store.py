"""Embedding file format, class/task registry and the synthetic stream generator.

On-disk layout (LSE, little-endian)::

    magic   4 bytes  b"LSE1"
    version u32      1
    d       u32      embedding dimension
    n       u64      record count
    records n x { task_id u32 | class_id u32 | d x f32 }

Vectors are float32 on disk; all internal math converts to float64.  The
registry sidecar is JSON: ``{"tasks": [{"task_id", "class_ids", "names"}]}``.
Text-embedding files reuse the LSE format with one record per class.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import (
    CorruptionError,
    DegenerateInputError,
    EmptyInputError,
    FormatError,
    ParameterError,
    RegistryError,
    ShapeError,
)

MAGIC = b"LSE1"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")

# Snap tolerance: vectors already unit within this bound are left untouched,
# which makes normalization exactly idempotent in float32.
_UNIT_TOL = 1e-6

STATUS_UNSEEN = "unseen"
STATUS_CURRENT = "current"
STATUS_LEARNED = "learned"
_STATUSES = (STATUS_UNSEEN, STATUS_CURRENT, STATUS_LEARNED)


@dataclass(frozen=True)
class EmbeddingRecord:
    """One labeled embedding: (task, class, float32 vector)."""

    task_id: int
    class_id: int
    vector: np.ndarray


class EmbeddingSet:
    """Ordered collection of embedding records sharing one dimension.

    Internally column-stacked: ``task_ids``/``class_ids`` are int64 arrays and
    ``vectors`` is an ``(n, d)`` float32 matrix in on-disk order.
    """

    def __init__(self, dimension, task_ids, class_ids, vectors, normalized=False):
        if dimension <= 0:
            raise EmptyInputError("embedding dimension must be positive")
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[1] != dimension:
            raise ShapeError(
                f"vector matrix has shape {vectors.shape}, expected (n, {dimension})"
            )
        task_ids = np.ascontiguousarray(task_ids, dtype=np.int64)
        class_ids = np.ascontiguousarray(class_ids, dtype=np.int64)
        if not (len(task_ids) == len(class_ids) == vectors.shape[0]):
            raise ShapeError("task_ids, class_ids and vectors disagree on record count")
        self.dimension = int(dimension)
        self.task_ids = task_ids
        self.class_ids = class_ids
        self.vectors = vectors
        self.normalized = bool(normalized)

    @classmethod
    def from_records(cls, dimension, records, normalized=False):
        if not records:
            return cls(
                dimension,
                np.empty(0, np.int64),
                np.empty(0, np.int64),
                np.empty((0, dimension), np.float32),
                normalized,
            )
        for r in records:
            if len(r.vector) != dimension:
                raise ShapeError(
                    f"record for class {r.class_id} has length {len(r.vector)}, expected {dimension}"
                )
        return cls(
            dimension,
            [r.task_id for r in records],
            [r.class_id for r in records],
            np.stack([np.asarray(r.vector, dtype=np.float32) for r in records]),
            normalized,
        )

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def records(self) -> Iterator[EmbeddingRecord]:
        for i in range(len(self)):
            yield EmbeddingRecord(
                int(self.task_ids[i]), int(self.class_ids[i]), self.vectors[i]
            )

    def rows_for_class(self, class_id):
        return self.vectors[self.class_ids == class_id]

    def unit_rows_f64(self):
        """Float64 copy of the vectors, re-normalized exactly in float64."""
        x = self.vectors.astype(np.float64)
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            idx = int(np.nonzero(norms.ravel() == 0.0)[0][0])
            raise DegenerateInputError(f"record {idx} has a zero vector")
        return x / norms

    def __eq__(self, other):
        return (
            isinstance(other, EmbeddingSet)
            and self.dimension == other.dimension
            and np.array_equal(self.task_ids, other.task_ids)
            and np.array_equal(self.class_ids, other.class_ids)
            and np.array_equal(self.vectors, other.vectors)
        )


@dataclass
class TaskDescriptor:
    task_id: int
    class_ids: tuple
    status: str = STATUS_UNSEEN

    def __post_init__(self):
        self.class_ids = tuple(int(c) for c in self.class_ids)
        if self.status not in _STATUSES:
            raise ParameterError(f"unknown task status {self.status!r}")


@dataclass
class ClassRegistry:
    """Ordered tasks (learning order) with globally unique class ids."""

    tasks: list = field(default_factory=list)
    name_of: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for t in self.tasks:
            for c in t.class_ids:
                if c in seen:
                    raise RegistryError(f"class id {c} registered twice")
                seen.add(c)
        current = [t.task_id for t in self.tasks if t.status == STATUS_CURRENT]
        if len(current) > 1:
            raise RegistryError(f"multiple current tasks: {current}")

    def task(self, task_id) -> TaskDescriptor:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise RegistryError(f"unknown task id {task_id}")

    def task_of(self, class_id) -> int:
        for t in self.tasks:
            if class_id in t.class_ids:
                return t.task_id
        raise RegistryError(f"unknown class id {class_id}")

    def all_class_ids(self):
        out = []
        for t in self.tasks:
            out.extend(t.class_ids)
        return out

    def total_classes(self):
        return sum(len(t.class_ids) for t in self.tasks)

    def set_status(self, task_id, status):
        if status not in _STATUSES:
            raise ParameterError(f"unknown task status {status!r}")
        task = self.task(task_id)
        if status == STATUS_CURRENT:
            for t in self.tasks:
                if t.status == STATUS_CURRENT and t.task_id != task_id:
                    raise RegistryError(
                        f"task {t.task_id} is already current; complete it first"
                    )
        task.status = status

    def seen_class_ids(self):
        out = []
        for t in self.tasks:
            if t.status in (STATUS_CURRENT, STATUS_LEARNED):
                out.extend(t.class_ids)
        return out

    def unseen_class_ids(self):
        out = []
        for t in self.tasks:
            if t.status == STATUS_UNSEEN:
                out.extend(t.class_ids)
        return out

    def to_json_dict(self):
        return {
            "tasks": [
                {
                    "task_id": t.task_id,
                    "class_ids": list(t.class_ids),
                    "names": [self.name_of[c] for c in t.class_ids],
                }
                for t in self.tasks
            ]
        }

    @classmethod
    def from_json_dict(cls, doc):
        tasks = []
        names = {}
        for entry in doc["tasks"]:
            ids = [int(c) for c in entry["class_ids"]]
            entry_names = entry.get("names", [str(c) for c in ids])
            if len(entry_names) != len(ids):
                raise RegistryError(
                    f"task {entry['task_id']}: {len(ids)} class ids but {len(entry_names)} names"
                )
            tasks.append(TaskDescriptor(int(entry["task_id"]), tuple(ids)))
            names.update(dict(zip(ids, entry_names)))
        return cls(tasks=tasks, name_of=names)


def save_registry(registry: ClassRegistry, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(registry.to_json_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_registry(path) -> ClassRegistry:
    with open(path, "r", encoding="utf-8") as f:
        return ClassRegistry.from_json_dict(json.load(f))


# ---------------------------------------------------------------------------
# LSE serialization
# ---------------------------------------------------------------------------

def _record_dtype(d):
    return np.dtype([("task", "<u4"), ("cls", "<u4"), ("vec", "<f4", (d,))])


def save_lse(embedding_set: EmbeddingSet, path):
    """Write the set bit-exactly in input order."""
    if len(embedding_set) == 0:
        raise EmptyInputError("refusing to save an empty embedding set")
    d = embedding_set.dimension
    rec = np.empty(len(embedding_set), dtype=_record_dtype(d))
    rec["task"] = embedding_set.task_ids
    rec["cls"] = embedding_set.class_ids
    rec["vec"] = embedding_set.vectors
    try:
        with open(path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, VERSION, d, len(embedding_set)))
            f.write(rec.tobytes())
    except OSError as exc:
        raise CorruptionError(f"failed writing {path}: {exc}") from exc


def load_lse(path, registry: ClassRegistry | None = None) -> EmbeddingSet:
    """Read an LSE file; optionally reject records unknown to ``registry``."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise FormatError(f"{path}: not an LSE file (bad magic)")
    magic, version, d, n = _HEADER.unpack_from(data)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported LSE version {version}")
    if d == 0 or n == 0:
        raise EmptyInputError(f"{path}: header declares d={d}, n={n}")
    expected = _HEADER.size + n * (8 + 4 * d)
    if len(data) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(data)} bytes, header implies {expected}"
        )
    rec = np.frombuffer(data, dtype=_record_dtype(d), count=n, offset=_HEADER.size)
    out = EmbeddingSet(
        d,
        rec["task"].astype(np.int64),
        rec["cls"].astype(np.int64),
        np.array(rec["vec"], dtype=np.float32),
    )
    if registry is not None:
        validate_against_registry(out, registry)
    return out


def validate_against_registry(embedding_set: EmbeddingSet, registry: ClassRegistry):
    """Every record's (task_id, class_id) must be registered; reject orphans."""
    owner = {}
    for t in registry.tasks:
        for c in t.class_ids:
            owner[c] = t.task_id
    for i in range(len(embedding_set)):
        cid = int(embedding_set.class_ids[i])
        tid = int(embedding_set.task_ids[i])
        if owner.get(cid) != tid:
            raise RegistryError(
                f"record {i}: (task {tid}, class {cid}) is not in the registry"
            )


def normalize_set(embedding_set: EmbeddingSet) -> EmbeddingSet:
    """Scale every vector to unit L2 norm (computed in float64).

    Vectors already unit within 1e-6 are returned untouched, which makes the
    operation exactly idempotent despite the float32 storage.
    """
    x = embedding_set.vectors.astype(np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise DegenerateInputError(f"record {int(zero[0])} has a zero vector")
    needs = np.abs(norms - 1.0) > _UNIT_TOL
    out = embedding_set.vectors.copy()
    if np.any(needs):
        out[needs] = (x[needs] / norms[needs, None]).astype(np.float32)
    return EmbeddingSet(
        embedding_set.dimension,
        embedding_set.task_ids.copy(),
        embedding_set.class_ids.copy(),
        out,
        normalized=True,
    )


# ---------------------------------------------------------------------------
# synthetic stream
# ---------------------------------------------------------------------------

class SyntheticStream(NamedTuple):
    train_sets: tuple
    test_set: EmbeddingSet
    text_set: EmbeddingSet
    registry: ClassRegistry


def gen_synthetic_stream(
    seed,
    tasks,
    classes_per_task,
    dim,
    n_train,
    n_test,
    separation,
    text_noise_frac=0.5,
) -> SyntheticStream:
    """Deterministic separable task stream on the unit sphere.

    Each class gets a random unit direction.  Samples are the direction plus
    isotropic Gaussian noise of scale ``1/separation``, re-normalized.  The
    per-class text embedding is the direction perturbed by noise of scale
    ``text_noise_frac/separation`` (stand-in for image-text alignment).  All
    draws come from one seeded generator in a fixed order, so identical
    arguments reproduce identical bytes.
    """
    if min(tasks, classes_per_task, dim, n_train, n_test) < 1:
        raise ParameterError("tasks, classes_per_task, dim, n_train, n_test must be >= 1")
    if separation <= 0:
        raise ParameterError("separation must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_classes = tasks * classes_per_task
    sigma = 1.0 / float(separation)

    directions = rng.normal(size=(n_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    def _draw(center, count):
        x = center + sigma * rng.normal(size=(count, dim))
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    task_descs = []
    names = {}
    train_sets = []
    test_chunks = []
    for t in range(tasks):
        ids = tuple(range(t * classes_per_task, (t + 1) * classes_per_task))
        task_descs.append(TaskDescriptor(t, ids))
        for c in ids:
            names[c] = f"class_{c:03d}"
        vecs, t_ids, c_ids = [], [], []
        for c in ids:
            vecs.append(_draw(directions[c], n_train))
            t_ids.extend([t] * n_train)
            c_ids.extend([c] * n_train)
        train_sets.append(
            EmbeddingSet(dim, t_ids, c_ids, np.vstack(vecs).astype(np.float32), normalized=True)
        )
        for c in ids:
            test_chunks.append((t, c, _draw(directions[c], n_test)))

    test_t = np.concatenate([[t] * x.shape[0] for t, _, x in test_chunks])
    test_c = np.concatenate([[c] * x.shape[0] for _, c, x in test_chunks])
    test_x = np.vstack([x for _, _, x in test_chunks]).astype(np.float32)
    test_set = EmbeddingSet(dim, test_t, test_c, test_x, normalized=True)

    text = directions + (text_noise_frac * sigma) * rng.normal(size=(n_classes, dim))
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    text_t = np.concatenate([[t.task_id] * classes_per_task for t in task_descs])
    text_c = np.arange(n_classes, dtype=np.int64)
    text_set = EmbeddingSet(dim, text_t, text_c, text.astype(np.float32), normalized=True)

    registry = ClassRegistry(tasks=task_descs, name_of=names)
    return SyntheticStream(tuple(train_sets), test_set, text_set, registry)
