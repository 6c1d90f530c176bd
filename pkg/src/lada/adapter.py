"""Label-specific memory adapter: per-class memory blocks and their classifier.

Each seen class ``j`` owns a block ``W_j`` of up to ``lambda1`` memory rows,
initialized from k-means centers of that class's training features (rows
re-normalized to unit length at init only).  The fixed classifier scores a
unit input ``i`` per class as ``sum_l exp(-beta * (1 - <w_l, i>))`` - a soft
nearest-neighbor score.  Blocks of completed tasks are frozen byte-for-byte;
new tasks append blocks without touching the prefix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractError, ParameterError, RegistryError, ShapeError
from .stats import kmeans


@dataclass(frozen=True)
class AdapterConfig:
    lambda1: int = 16
    beta: float = 5.0

    def __post_init__(self):
        if self.lambda1 < 1:
            raise ParameterError("lambda1 must be >= 1")
        if self.beta <= 0:
            raise ParameterError("beta must be positive")


@dataclass
class LabelMemoryBlock:
    task_id: int
    class_id: int
    W: np.ndarray          # (lambda1', d) float64; lambda1' = min(lambda1, samples)
    frozen: bool = False


@dataclass(frozen=True)
class AdapterState:
    """Ordered blocks (task-major, matching registry class order) plus config."""

    blocks: tuple
    config: AdapterConfig

    @classmethod
    def empty(cls, config: AdapterConfig):
        return cls(blocks=(), config=config)

    def class_ids(self):
        return [b.class_id for b in self.blocks]

    def block_for(self, class_id) -> LabelMemoryBlock:
        for b in self.blocks:
            if b.class_id == class_id:
                return b
        raise RegistryError(f"no memory block for class {class_id}")

    @property
    def dim(self):
        if not self.blocks:
            return None
        return self.blocks[0].W.shape[1]

    def num_params(self):
        return int(sum(b.W.size for b in self.blocks))

    def packed(self):
        """Copy blocks into ``(rows, offsets)`` for the kernel calls."""
        offsets = np.zeros(len(self.blocks) + 1, dtype=np.int64)
        for i, b in enumerate(self.blocks):
            offsets[i + 1] = offsets[i] + b.W.shape[0]
        if not self.blocks:
            return np.empty((0, 0), dtype=np.float64), offsets
        rows = np.empty((offsets[-1], self.dim), dtype=np.float64)
        for i, b in enumerate(self.blocks):
            rows[offsets[i] : offsets[i + 1]] = b.W
        return rows, offsets


def _freeze_array(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def init_block(features_of_class, task_id, class_id, config: AdapterConfig, seed) -> LabelMemoryBlock:
    """Cluster one class's unit features into ``min(lambda1, n)`` memory rows.

    Cluster centers are re-normalized to the unit sphere; the block starts
    unfrozen (training may push rows off the sphere later).
    """
    x = np.ascontiguousarray(features_of_class, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError(f"class {class_id}: need a non-empty (n, d) feature matrix")
    norms = np.linalg.norm(x, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-3:
        raise ContractError(f"class {class_id}: features must be unit-norm")
    k = min(config.lambda1, x.shape[0])
    centers = kmeans(x, k, seed).centers
    centers = centers / np.linalg.norm(centers, axis=1, keepdims=True)
    return LabelMemoryBlock(task_id=task_id, class_id=class_id, W=centers, frozen=False)


def _check_input(state: AdapterState, i):
    if not state.blocks:
        raise ContractError("adapter has no memory blocks")
    i = np.asarray(i, dtype=np.float64)
    if i.shape != (state.dim,):
        raise ShapeError(f"input has shape {i.shape}, adapter dimension is {state.dim}")
    return i


def phi_map(state: AdapterState, i):
    """Raw per-class inner products ``<w_l, i>`` as a ragged list of arrays."""
    i = _check_input(state, i)
    return [b.W @ i for b in state.blocks]


def lada_logits(state: AdapterState, i) -> np.ndarray:
    """One positive logit per seen class: ``sum_l exp(-beta*(1 - <w_l, i>))``."""
    i = _check_input(state, i)
    return lada_logits_batch(state, i[None, :])[0]


def lada_logits_batch(state: AdapterState, x) -> np.ndarray:
    """Batched logits, shape ``(n, classes)``; column order matches blocks."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if not state.blocks:
        return np.zeros((x.shape[0], 0), dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != state.dim:
        raise ShapeError(f"batch has shape {x.shape}, adapter dimension is {state.dim}")
    rows, offsets = state.packed()
    logits, _ = _kernels.lada_forward(x, rows, offsets, state.config.beta)
    return logits


def expand_for_task(state: AdapterState, new_blocks) -> AdapterState:
    """Append the new task's blocks; every prior block becomes frozen."""
    existing = set(state.class_ids())
    for b in new_blocks:
        if b.class_id in existing:
            raise RegistryError(f"class {b.class_id} already has a memory block")
        existing.add(b.class_id)
        if state.blocks and b.W.shape[1] != state.dim:
            raise ShapeError(
                f"new block for class {b.class_id} has d={b.W.shape[1]}, adapter has d={state.dim}"
            )
    frozen_prefix = tuple(
        LabelMemoryBlock(b.task_id, b.class_id, _freeze_array(b.W), frozen=True)
        for b in state.blocks
    )
    return AdapterState(blocks=frozen_prefix + tuple(new_blocks), config=state.config)


def freeze_task(state: AdapterState, task_id) -> AdapterState:
    """Freeze all blocks of one task (idempotent); trainers must not update them."""
    if task_id not in {b.task_id for b in state.blocks}:
        raise RegistryError(f"unknown task id {task_id}")
    blocks = tuple(
        LabelMemoryBlock(b.task_id, b.class_id, _freeze_array(b.W), frozen=True)
        if b.task_id == task_id and not b.frozen
        else b
        for b in state.blocks
    )
    return AdapterState(blocks=blocks, config=state.config)
