"""Task-agnostic prediction over seen and unseen classes.

Stage 1 scores every candidate with text logits: fine-tuned vectors for seen
classes, vanilla vectors for unseen ones.  When the winner is unseen it is
returned directly.  Otherwise stage 2 re-ranks the seen classes with a linear
fusion ``(1 - alpha) * text + alpha * adapter`` of the raw logits.  Ties break
toward the lowest class id.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adapter import AdapterState, lada_logits_batch
from .errors import ContractError, ParameterError, RegistryError
from .store import ClassRegistry, EmbeddingSet
from .text_head import TextClassifier, UnseenBank, text_logits_batch

ROUTE_SEEN = "seen_fused"
ROUTE_UNSEEN = "unseen_direct"

_CHUNK = 512


@dataclass(frozen=True)
class InferenceConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError("alpha must lie in [0, 1]")


@dataclass
class Prediction:
    class_id: int
    route: str
    class_ids: np.ndarray   # candidate order matching ``scores``
    scores: np.ndarray


def _argmax_lowest_id(scores, ids):
    """Row-wise argmax; exact ties resolve to the lowest class id."""
    order = np.argsort(ids)
    j = np.argmax(scores[:, order], axis=1)
    return ids[order[j]]


def _predict_arrays(x, adapter_state, text_clf, bank, cfg):
    seen_ids = np.asarray(text_clf.seen_ids(), dtype=np.int64)
    unseen_ids = bank.class_ids if bank is not None else np.empty(0, dtype=np.int64)
    if seen_ids.size + unseen_ids.size == 0:
        raise ContractError("no registered classes to predict over")

    z_all = text_logits_batch(text_clf, bank, x)
    cand_ids = np.concatenate([seen_ids, unseen_ids])
    stage1 = _argmax_lowest_id(z_all, cand_ids)
    unseen_mask = np.isin(stage1, unseen_ids, assume_unique=False)

    pred = stage1.copy()
    fused = None
    if seen_ids.size:
        z_text_seen = z_all[:, : seen_ids.size]
        if adapter_state.blocks:
            z_ada = lada_logits_batch(adapter_state, x)
        else:
            z_ada = np.zeros_like(z_text_seen)
        fused = (1.0 - cfg.alpha) * z_text_seen + cfg.alpha * z_ada
        seen_rows = np.nonzero(~unseen_mask)[0]
        if seen_rows.size:
            pred[seen_rows] = _argmax_lowest_id(fused[seen_rows], seen_ids)
    return pred, unseen_mask, z_all, fused, cand_ids, seen_ids


def predict(i, adapter_state: AdapterState, text_clf: TextClassifier, unseen_bank, cfg: InferenceConfig) -> Prediction:
    """Classify one unit vector; see the module docstring for the two stages."""
    i = np.asarray(i, dtype=np.float64)
    pred, unseen_mask, z_all, fused, cand_ids, seen_ids = _predict_arrays(
        i[None, :], adapter_state, text_clf, unseen_bank, cfg
    )
    if unseen_mask[0]:
        return Prediction(int(pred[0]), ROUTE_UNSEEN, cand_ids, z_all[0])
    return Prediction(int(pred[0]), ROUTE_SEEN, seen_ids, fused[0])


def predict_batch(x, adapter_state, text_clf, unseen_bank, cfg):
    """Vectorized routing; returns (predicted class ids, route flags)."""
    pred, unseen_mask, *_ = _predict_arrays(x, adapter_state, text_clf, unseen_bank, cfg)
    return pred, unseen_mask


def _worker_count():
    raw = os.environ.get("LADA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def batch_eval(
    test_set: EmbeddingSet,
    adapter_state: AdapterState,
    text_clf: TextClassifier,
    unseen_bank,
    registry: ClassRegistry,
    cfg: InferenceConfig,
) -> dict:
    """Per-task accuracy, task recall and route counts over a test set.

    Samples are processed in fixed chunks; LADA_THREADS may parallelize the
    chunks but cannot change any result (chunks are independent and results
    are concatenated in chunk order).
    """
    task_of = {}
    for t in registry.tasks:
        for c in t.class_ids:
            task_of[c] = t.task_id
    for cid in np.unique(test_set.class_ids):
        if int(cid) not in task_of:
            raise RegistryError(f"test class {int(cid)} is not registered")

    x = test_set.unit_rows_f64()
    chunks = [slice(lo, min(lo + _CHUNK, x.shape[0])) for lo in range(0, x.shape[0], _CHUNK)]

    def run(sl):
        return predict_batch(x[sl], adapter_state, text_clf, unseen_bank, cfg)

    workers = _worker_count()
    if workers == 1 or len(chunks) == 1:
        parts = [run(sl) for sl in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    pred = np.concatenate([p for p, _ in parts])
    unseen_mask = np.concatenate([m for _, m in parts])

    true_cls = test_set.class_ids
    true_task = np.array([task_of[int(c)] for c in true_cls])
    pred_task = np.array([task_of[int(c)] for c in pred])
    correct = pred == true_cls
    recalled = pred_task == true_task

    per_task = {}
    for t in registry.tasks:
        mask = true_task == t.task_id
        n = int(mask.sum())
        if n == 0:
            continue
        per_task[str(t.task_id)] = {
            "accuracy": float(correct[mask].mean()),
            "task_recall": float(recalled[mask].mean()),
            "n": n,
        }
    return {
        "per_task": per_task,
        "overall": float(correct.mean()),
        "route_counts": {
            ROUTE_SEEN: int((~unseen_mask).sum()),
            ROUTE_UNSEEN: int(unseen_mask.sum()),
        },
    }
