"""Per-class text-feature classifier with a frozen-prefix schedule.

The classifier keeps one vector per registered class (registry order).  A
class becomes "seen" when its task starts; its vector is trainable until the
task completes, then frozen byte-for-byte.  Classes of tasks never started
are served by an :class:`UnseenBank` built from the untouched vanilla
vectors.  Logit order is always seen classes first (registry order), then
unseen - the same fixed bijection at training and inference time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import RegistryError, ShapeError
from .store import ClassRegistry, EmbeddingSet


@dataclass
class UnseenBank:
    class_ids: np.ndarray   # int64, registry order
    vectors: np.ndarray     # (u, d) float64, vanilla


class TextClassifier:
    """Class-id keyed text vectors plus frozen/seen bookkeeping."""

    def __init__(self, dim, class_ids, vectors, task_of_class, scale=100.0):
        self.dim = int(dim)
        self.scale = float(scale)
        self.class_ids = np.asarray(class_ids, dtype=np.int64)
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        if self.vectors.shape != (len(self.class_ids), self.dim):
            raise ShapeError("text vector matrix does not match class count / dim")
        self.vanilla = self.vectors.copy()
        self.vanilla.flags.writeable = False
        self.frozen = np.zeros(len(self.class_ids), dtype=bool)
        self.seen = np.zeros(len(self.class_ids), dtype=bool)
        self._row_of = {int(c): i for i, c in enumerate(self.class_ids)}
        self._task_of_class = dict(task_of_class)
        self._rows_of_task = {}
        for cid, tid in self._task_of_class.items():
            self._rows_of_task.setdefault(tid, []).append(self._row_of[cid])

    @classmethod
    def _restore(cls, dim, class_ids, vectors, vanilla, frozen, seen, task_of_class, scale):
        """Rebuild from checkpoint tensors without re-deriving the vanilla copy."""
        clf = cls(dim, class_ids, vectors, task_of_class, scale=scale)
        vanilla = np.ascontiguousarray(vanilla, dtype=np.float64)
        vanilla.flags.writeable = False
        clf.vanilla = vanilla
        clf.frozen = np.asarray(frozen, dtype=bool).copy()
        clf.seen = np.asarray(seen, dtype=bool).copy()
        return clf

    def row_of(self, class_id):
        try:
            return self._row_of[int(class_id)]
        except KeyError:
            raise RegistryError(f"class {class_id} not in text classifier") from None

    def task_of(self, class_id):
        try:
            return self._task_of_class[int(class_id)]
        except KeyError:
            raise RegistryError(f"class {class_id} not in text classifier") from None

    def task_rows(self, task_id):
        try:
            return list(self._rows_of_task[task_id])
        except KeyError:
            raise RegistryError(f"unknown task id {task_id}") from None

    def seen_ids(self):
        return self.class_ids[self.seen]

    def seen_matrix(self):
        return self.vectors[self.seen]

    def vector_of(self, class_id):
        return self.vectors[self.row_of(class_id)]

    def start_task(self, task_id):
        """Mark the task's classes as seen; their vectors become trainable."""
        self.seen[self.task_rows(task_id)] = True

    def trainable_rows(self):
        return np.nonzero(self.seen & ~self.frozen)[0]


def init_from_embeddings(text_set: EmbeddingSet, registry: ClassRegistry, scale=100.0) -> TextClassifier:
    """Build the classifier from one text record per registered class."""
    by_class = {}
    for idx in range(len(text_set)):
        cid = int(text_set.class_ids[idx])
        if cid in by_class:
            raise RegistryError(f"duplicate text record for class {cid}")
        by_class[cid] = idx
    ordered = registry.all_class_ids()
    missing = [c for c in ordered if c not in by_class]
    if missing:
        raise RegistryError(f"text embeddings missing for class {missing[0]}")
    unit = text_set.unit_rows_f64()
    vectors = np.stack([unit[by_class[c]] for c in ordered])
    task_of = {c: registry.task_of(c) for c in ordered}
    return TextClassifier(text_set.dimension, ordered, vectors, task_of, scale=scale)


def complete_task(clf: TextClassifier, task_id) -> TextClassifier:
    """Freeze the task's vectors (idempotent); returns the same classifier."""
    clf.frozen[clf.task_rows(task_id)] = True
    return clf


def build_unseen_bank(clf: TextClassifier) -> UnseenBank:
    """Vanilla vectors of every class whose task has not started."""
    mask = ~clf.seen
    vectors = np.array(clf.vanilla[mask])
    return UnseenBank(class_ids=clf.class_ids[mask], vectors=vectors)


def text_logits(clf: TextClassifier, bank: UnseenBank | None, i) -> np.ndarray:
    """Scaled inner products, seen classes first then unseen bank classes."""
    i = np.asarray(i, dtype=np.float64)
    if i.shape != (clf.dim,):
        raise ShapeError(f"input has shape {i.shape}, text dimension is {clf.dim}")
    return text_logits_batch(clf, bank, i[None, :])[0]


def text_logits_batch(clf: TextClassifier, bank: UnseenBank | None, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != clf.dim:
        raise ShapeError(f"batch has shape {x.shape}, text dimension is {clf.dim}")
    parts = [clf.seen_matrix()]
    if bank is not None and len(bank.class_ids):
        parts.append(bank.vectors)
    t = np.vstack(parts) if parts else np.empty((0, clf.dim))
    if t.shape[0] == 0:
        return np.zeros((x.shape[0], 0), dtype=np.float64)
    return _kernels.text_forward(x, t, clf.scale)


def logit_order(clf: TextClassifier, bank: UnseenBank | None) -> np.ndarray:
    """Class ids matching the columns of :func:`text_logits_batch`."""
    if bank is None or not len(bank.class_ids):
        return np.array(clf.seen_ids(), dtype=np.int64)
    return np.concatenate([clf.seen_ids(), bank.class_ids]).astype(np.int64)
