"""Per-task training loop over joint text + memory-adapter logits.

The total loss of one step is the mean cross-entropy of the current-task
mini-batch plus the full replay cross-entropy over every previously learned
class's prototype components (fresh augmentation noise each step).  Two loss
modes exist:

* ``joint_logits`` (default): one softmax over ``z_text + z_adapter``.
* ``sum_losses``: separate cross-entropies for the text and adapter logits,
  added per entry.

Gradients are analytic, masked so frozen tensors receive exactly zero, and
applied with decoupled-weight-decay Adam.  A central finite-difference oracle
is included for verifying the analytic gradients.  Checkpoints are a
directory with ``manifest.json`` plus ``tensors.bin`` (concatenated
little-endian float32 arrays in manifest order).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .adapter import (
    AdapterConfig,
    AdapterState,
    LabelMemoryBlock,
    expand_for_task,
    freeze_task,
    init_block,
)
from .errors import (
    CheckpointError,
    ContractError,
    EmptyInputError,
    NumericalError,
    ParameterError,
    ShapeError,
)
from .prototypes import (
    REPLAY_AUGMENTED,
    REPLAY_PLAIN,
    ClassPrototypes,
    PrototypeSet,
    distill_class,
    replay_batch,
)
from .store import ClassRegistry, EmbeddingSet, TaskDescriptor
from .text_head import TextClassifier, complete_task

LOSS_JOINT = "joint_logits"
LOSS_SUM = "sum_losses"

CHECKPOINT_FORMAT = "lada-checkpoint"
CHECKPOINT_VERSION = 1

# SeedSequence tags for the independent random streams of one run.
_SEED_INIT = 0
_SEED_DISTILL = 1
_SEED_SHUFFLE = 2
_SEED_REPLAY = 3


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 0.001
    weight_decay: float = 0.01
    batch_size: int = 64
    loss_mode: str = LOSS_JOINT
    seed: int = 0
    beta: float = 5.0
    lambda1: int = 16
    lambda2: int = 4
    logit_scale: float = 100.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    replay_mode: str = REPLAY_AUGMENTED

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lambda1 < 1 or self.lambda2 < 1:
            raise ParameterError("epochs >= 0, batch_size/lambda1/lambda2 >= 1 required")
        if self.lr < 0 or self.weight_decay < 0 or self.beta <= 0 or self.logit_scale <= 0:
            raise ParameterError("lr/weight_decay must be >= 0, beta/logit_scale > 0")
        if self.loss_mode not in (LOSS_JOINT, LOSS_SUM):
            raise ParameterError(f"unknown loss_mode {self.loss_mode!r}")
        if self.replay_mode not in (REPLAY_AUGMENTED, REPLAY_PLAIN):
            raise ParameterError(f"unknown replay_mode {self.replay_mode!r}")

    def adapter_config(self) -> AdapterConfig:
        return AdapterConfig(lambda1=self.lambda1, beta=self.beta)


@dataclass
class LossBreakdown:
    current_task_loss: float
    replay_loss: float
    total: float


class OptimizerState:
    """First/second moment accumulators, allocated only for unfrozen tensors."""

    def __init__(self):
        self.step = 0
        self.m = {}
        self.v = {}

    def slot(self, key, shape):
        if key not in self.m:
            self.m[key] = np.zeros(shape, dtype=np.float64)
            self.v[key] = np.zeros(shape, dtype=np.float64)
        return self.m[key], self.v[key]


def _seeded_rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *key]))


def _as_batch(batch, dim):
    if isinstance(batch, tuple) and len(batch) == 2:
        x, y = batch
    else:
        x = [v for v, _ in batch]
        y = [c for _, c in batch]
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != dim or x.shape[0] != y.shape[0]:
        raise ShapeError(f"batch shapes {x.shape} / {y.shape} do not match dimension {dim}")
    return x, y


def _require_task_membership(text_clf, class_ids, task_id):
    for c in class_ids:
        try:
            owner = text_clf.task_of(int(c))
        except Exception as exc:
            raise ContractError(f"class {int(c)} is not registered") from exc
        if owner != task_id:
            raise ContractError(f"class {int(c)} does not belong to task {task_id}")


def _check_alignment(adapter_state: AdapterState, text_clf: TextClassifier):
    seen = list(map(int, text_clf.seen_ids()))
    blocks = adapter_state.class_ids()
    # An empty adapter is a structurally disabled logit path, not a mismatch.
    if blocks and seen != blocks:
        raise ContractError(
            f"adapter blocks {blocks} and seen text classes {seen} are out of sync"
        )
    return seen


def _ce_rows(z, targets):
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    losses = lse - z[np.arange(z.shape[0]), targets]
    soft = np.exp(z - lse[:, None])
    soft[np.arange(z.shape[0]), targets] -= 1.0
    return losses, soft


def _forward_losses(adapter_state, text_clf, x, targets, weights, cfg, with_grads):
    """Weighted CE (scalar) plus, optionally, gradients for all seen tensors."""
    seen = _check_alignment(adapter_state, text_clf)
    if not seen:
        raise ContractError("no seen classes to train on")
    has_adapter = bool(adapter_state.blocks)

    z_text = _kernels.text_forward(x, text_clf.seen_matrix(), text_clf.scale)
    if has_adapter:
        rows, offsets = adapter_state.packed()
        z_ada, exps = _kernels.lada_forward(x, rows, offsets, adapter_state.config.beta)
    else:
        z_ada, exps, offsets = None, None, None

    if cfg.loss_mode == LOSS_JOINT:
        z = z_text + z_ada if has_adapter else z_text
        losses, soft = _ce_rows(z, targets)
        g_text = g_ada = soft * weights[:, None]
    else:
        losses_t, soft_t = _ce_rows(z_text, targets)
        g_text = soft_t * weights[:, None]
        losses = losses_t
        g_ada = None
        if has_adapter:
            losses_a, soft_a = _ce_rows(z_ada, targets)
            losses = losses_t + losses_a
            g_ada = soft_a * weights[:, None]

    per_entry = losses * weights
    if not with_grads:
        return per_entry, None

    text_grad_seen = _kernels.text_backward(x, g_text, text_clf.scale)
    text_grad = np.zeros_like(text_clf.vectors)
    for pos, cid in enumerate(seen):
        text_grad[text_clf.row_of(cid)] = text_grad_seen[pos]
    trainable = np.zeros(len(text_clf.class_ids), dtype=bool)
    trainable[text_clf.trainable_rows()] = True
    text_grad[~trainable] = 0.0

    block_grads = {}
    if has_adapter:
        rows_grad = _kernels.lada_backward(x, exps, g_ada, offsets, adapter_state.config.beta)
        for i, b in enumerate(adapter_state.blocks):
            if b.frozen:
                block_grads[b.class_id] = np.zeros_like(b.W)
            else:
                block_grads[b.class_id] = rows_grad[offsets[i] : offsets[i + 1]]
    return per_entry, {"text": text_grad, "blocks": block_grads}


def _entry_arrays(adapter_state, text_clf, batch_x, batch_y, replay_entries):
    """Stack current batch and replay entries; return x, target cols, weights
    and the boolean mask selecting the current-task part."""
    seen = _check_alignment(adapter_state, text_clf)
    col_of = {cid: i for i, cid in enumerate(seen)}
    parts_x, parts_t, parts_w = [], [], []
    n_cur = batch_x.shape[0] if batch_x is not None else 0
    if n_cur:
        parts_x.append(batch_x)
        parts_t.extend(col_of[int(c)] for c in batch_y)
        parts_w.extend([1.0 / n_cur] * n_cur)
    if replay_entries:
        classes = {cid for _, cid, _ in replay_entries}
        norm = 1.0 / len(classes)
        for vec, cid, w in replay_entries:
            parts_x.append(np.asarray(vec, dtype=np.float64)[None, :])
            parts_t.append(col_of[int(cid)])
            parts_w.append(w * norm)
    x = np.vstack(parts_x)
    targets = np.asarray(parts_t, dtype=np.int64)
    weights = np.asarray(parts_w, dtype=np.float64)
    is_current = np.zeros(len(weights), dtype=bool)
    is_current[:n_cur] = True
    return x, targets, weights, is_current


def combined_logits(adapter_state: AdapterState, text_clf: TextClassifier, i) -> np.ndarray:
    """Text logit plus adapter logit per seen class (one input vector)."""
    _check_alignment(adapter_state, text_clf)
    i = np.asarray(i, dtype=np.float64)
    if i.shape != (text_clf.dim,):
        raise ShapeError(f"input shape {i.shape} does not match dimension {text_clf.dim}")
    z = _kernels.text_forward(i[None, :], text_clf.seen_matrix(), text_clf.scale)[0]
    if adapter_state.blocks:
        rows, offsets = adapter_state.packed()
        z_ada, _ = _kernels.lada_forward(i[None, :], rows, offsets, adapter_state.config.beta)
        z = z + z_ada[0]
    return z


def loss_current(batch, adapter_state, text_clf, task_id, cfg: TrainConfig | None = None) -> float:
    """Mean cross-entropy of a current-task batch over all seen classes."""
    cfg = cfg or TrainConfig()
    x, y = _as_batch(batch, text_clf.dim)
    _require_task_membership(text_clf, y, task_id)
    entries_x, targets, weights, _ = _entry_arrays(adapter_state, text_clf, x, y, [])
    per_entry, _ = _forward_losses(adapter_state, text_clf, entries_x, targets, weights, cfg, False)
    return float(per_entry.sum())


def loss_replay(proto_set, adapter_state, text_clf, rng, cfg: TrainConfig | None = None) -> float:
    """Weighted replay cross-entropy, averaged over learned classes.

    Returns 0.0 while no task has been completed (first-task training).
    """
    cfg = cfg or TrainConfig()
    if proto_set is None or len(proto_set) == 0:
        return 0.0
    entries = replay_batch(proto_set, rng, cfg.replay_mode)
    x, targets, weights, _ = _entry_arrays(adapter_state, text_clf, None, None, entries)
    per_entry, _ = _forward_losses(adapter_state, text_clf, x, targets, weights, cfg, False)
    return float(per_entry.sum())


def total_loss(adapter_state, text_clf, batch_x, batch_y, replay_entries, cfg) -> LossBreakdown:
    """Loss of one step for *fixed* replay entries (used by the FD oracle)."""
    x, targets, weights, is_cur = _entry_arrays(
        adapter_state, text_clf, batch_x, batch_y, replay_entries
    )
    per_entry, _ = _forward_losses(adapter_state, text_clf, x, targets, weights, cfg, False)
    cur = float(per_entry[is_cur].sum())
    rep = float(per_entry[~is_cur].sum())
    return LossBreakdown(cur, rep, cur + rep)


def loss_and_grads(adapter_state, text_clf, batch_x, batch_y, replay_entries, cfg):
    """Analytic gradients of the total loss; frozen tensors get exact zeros."""
    x, targets, weights, is_cur = _entry_arrays(
        adapter_state, text_clf, batch_x, batch_y, replay_entries
    )
    per_entry, grads = _forward_losses(adapter_state, text_clf, x, targets, weights, cfg, True)
    cur = float(per_entry[is_cur].sum())
    rep = float(per_entry[~is_cur].sum())
    return LossBreakdown(cur, rep, cur + rep), grads


def _current_task_of(adapter_state: AdapterState) -> int:
    tasks = {b.task_id for b in adapter_state.blocks if not b.frozen}
    if len(tasks) != 1:
        raise ContractError(f"expected exactly one unfrozen task, found {sorted(tasks)}")
    return tasks.pop()


def _adamw_update(param, grad, key, cfg, opt: OptimizerState):
    m, v = opt.slot(key, param.shape)
    m *= cfg.adam_beta1
    m += (1.0 - cfg.adam_beta1) * grad
    v *= cfg.adam_beta2
    v += (1.0 - cfg.adam_beta2) * grad * grad
    t = opt.step
    m_hat = m / (1.0 - cfg.adam_beta1 ** t)
    v_hat = v / (1.0 - cfg.adam_beta2 ** t)
    param -= cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * param)


def grad_step(adapter_state, text_clf, batch, proto_set, cfg, opt_state, rng) -> LossBreakdown:
    """One optimization step: current batch + full replay, AdamW on the
    unfrozen tensors only.  Deterministic given parameters, batch and rng
    state; frozen tensors are untouched byte-for-byte."""
    task_id = _current_task_of(adapter_state)
    x, y = _as_batch(batch, text_clf.dim)
    _require_task_membership(text_clf, y, task_id)
    entries = []
    if proto_set is not None and len(proto_set):
        entries = replay_batch(proto_set, rng, cfg.replay_mode)
    breakdown, grads = loss_and_grads(adapter_state, text_clf, x, y, entries, cfg)
    if not np.isfinite(breakdown.total):
        raise NumericalError(
            f"non-finite loss {breakdown.total} at step {opt_state.step + 1} of task {task_id}"
        )
    opt_state.step += 1
    trainable_rows = text_clf.trainable_rows()
    if trainable_rows.size:
        g = grads["text"][trainable_rows]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite text gradient at step {opt_state.step}")
        sub = text_clf.vectors[trainable_rows]
        _adamw_update(sub, g, ("text", task_id), cfg, opt_state)
        text_clf.vectors[trainable_rows] = sub
    for b in adapter_state.blocks:
        if b.frozen:
            continue
        g = grads["blocks"][b.class_id]
        if not np.all(np.isfinite(g)):
            raise NumericalError(
                f"non-finite block gradient (class {b.class_id}) at step {opt_state.step}"
            )
        _adamw_update(b.W, g, ("block", b.class_id), cfg, opt_state)
    return breakdown


class TrainResult(NamedTuple):
    adapter_state: AdapterState
    text_clf: TextClassifier
    proto_set: PrototypeSet
    epoch_losses: list


def train_task(
    train_set: EmbeddingSet,
    adapter_state: AdapterState,
    text_clf: TextClassifier,
    proto_set: PrototypeSet,
    registry: ClassRegistry,
    cfg: TrainConfig,
    task_id,
) -> TrainResult:
    """Full pipeline for one task: init blocks, train, freeze, distill.

    Requires the task to be ``current`` in the registry with every earlier
    task ``learned``; on return the task is marked ``learned``.
    """
    task = registry.task(task_id)
    if task.status != "current":
        raise ContractError(f"task {task_id} has status {task.status!r}, expected 'current'")
    for t in registry.tasks:
        if t.task_id == task_id:
            break
        if t.status != "learned":
            raise ContractError(
                f"task {t.task_id} precedes {task_id} but has status {t.status!r}"
            )

    features = {}
    unit = train_set.unit_rows_f64()
    for cid in task.class_ids:
        mask = train_set.class_ids == cid
        if not mask.any():
            raise EmptyInputError(f"task {task_id}: no training features for class {cid}")
        features[cid] = np.ascontiguousarray(unit[mask])

    new_blocks = [
        init_block(
            features[cid],
            task_id,
            cid,
            cfg.adapter_config(),
            np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, task_id, cid, _SEED_INIT]),
        )
        for cid in task.class_ids
    ]
    adapter_state = expand_for_task(adapter_state, new_blocks)
    text_clf.start_task(task_id)

    all_x = np.vstack([features[cid] for cid in task.class_ids])
    all_y = np.concatenate(
        [np.full(features[cid].shape[0], cid, dtype=np.int64) for cid in task.class_ids]
    )
    shuffle_rng = _seeded_rng(cfg.seed, task_id, _SEED_SHUFFLE)
    replay_rng = _seeded_rng(cfg.seed, task_id, _SEED_REPLAY)
    opt_state = OptimizerState()
    epoch_losses = []
    n = all_x.shape[0]
    for _ in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        step_losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            breakdown = grad_step(
                adapter_state,
                text_clf,
                (all_x[idx], all_y[idx]),
                proto_set,
                cfg,
                opt_state,
                replay_rng,
            )
            step_losses.append(breakdown.total)
        epoch_losses.append(float(np.mean(step_losses)))

    adapter_state = freeze_task(adapter_state, task_id)
    complete_task(text_clf, task_id)
    for cid in task.class_ids:
        proto_set = proto_set.add(
            distill_class(
                features[cid],
                task_id,
                cid,
                cfg.lambda2,
                np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, task_id, cid, _SEED_DISTILL]),
            )
        )
    registry.set_status(task_id, "learned")
    return TrainResult(adapter_state, text_clf, proto_set, epoch_losses)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def finite_difference_gradients(loss_fn, arrays, h=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            gf[i] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(a, b):
    """Componentwise ``|a - b| / max(1, |a|, |b|)``, maxed over components."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / denom))


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

@dataclass
class CheckpointBundle:
    adapter_state: AdapterState
    text_clf: TextClassifier
    proto_set: PrototypeSet
    registry: ClassRegistry
    config: dict = field(default_factory=dict)


def _tensor_entries(bundle: CheckpointBundle):
    clf = bundle.text_clf
    yield "text/vectors", clf.vectors
    yield "text/vanilla", clf.vanilla
    for b in bundle.adapter_state.blocks:
        yield f"block/{b.class_id}", b.W
    for cid, proto in bundle.proto_set.by_class.items():
        yield f"proto/{cid}/weights", proto.weights
        yield f"proto/{cid}/means", proto.means
        yield f"proto/{cid}/variances", proto.variances


def save_checkpoint(bundle: CheckpointBundle, directory):
    os.makedirs(directory, exist_ok=True)
    index = []
    offset = 0
    blobs = []
    for name, arr in _tensor_entries(bundle):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    clf = bundle.text_clf
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dim": clf.dim,
        "config": bundle.config,
        "tasks": [
            {
                "task_id": t.task_id,
                "class_ids": list(t.class_ids),
                "names": [bundle.registry.name_of[c] for c in t.class_ids],
                "status": t.status,
            }
            for t in bundle.registry.tasks
        ],
        "adapter": {
            "lambda1": bundle.adapter_state.config.lambda1,
            "beta": bundle.adapter_state.config.beta,
            "blocks": [
                {"task_id": b.task_id, "class_id": b.class_id, "frozen": b.frozen}
                for b in bundle.adapter_state.blocks
            ],
        },
        "text": {
            "scale": clf.scale,
            "class_ids": [int(c) for c in clf.class_ids],
            "frozen": [bool(f) for f in clf.frozen],
            "seen": [bool(s) for s in clf.seen],
        },
        "prototypes": {
            "lambda2": bundle.proto_set.lambda2,
            "classes": [
                {"task_id": p.task_id, "class_id": p.class_id, "components": len(p.weights)}
                for p in bundle.proto_set.by_class.values()
            ],
        },
        "tensors": index,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(directory, "tensors.bin"), "wb") as f:
        for raw in blobs:
            f.write(raw)


def load_checkpoint(directory) -> CheckpointBundle:
    try:
        with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read manifest in {directory}: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{directory}: not a checkpoint directory")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{directory}: checkpoint version {manifest.get('version')} is not supported"
        )
    with open(os.path.join(directory, "tensors.bin"), "rb") as f:
        blob = f.read()

    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"{directory}: tensors.bin shorter than manifest implies")
        tensors[entry["name"]] = (
            np.frombuffer(blob[start:end], dtype="<f4").astype(np.float64).reshape(shape)
        )

    registry = ClassRegistry(
        tasks=[
            TaskDescriptor(t["task_id"], tuple(t["class_ids"]), t["status"])
            for t in manifest["tasks"]
        ],
        name_of={
            c: n
            for t in manifest["tasks"]
            for c, n in zip(t["class_ids"], t["names"])
        },
    )

    ameta = manifest["adapter"]
    config = AdapterConfig(lambda1=ameta["lambda1"], beta=ameta["beta"])
    blocks = []
    for bm in ameta["blocks"]:
        w = tensors[f"block/{bm['class_id']}"]
        if bm["frozen"]:
            w = np.ascontiguousarray(w)
            w.flags.writeable = False
        blocks.append(
            LabelMemoryBlock(bm["task_id"], bm["class_id"], w, frozen=bm["frozen"])
        )
    adapter_state = AdapterState(blocks=tuple(blocks), config=config)

    tmeta = manifest["text"]
    clf = TextClassifier._restore(
        dim=manifest["dim"],
        class_ids=tmeta["class_ids"],
        vectors=tensors["text/vectors"],
        vanilla=tensors["text/vanilla"],
        frozen=np.asarray(tmeta["frozen"], dtype=bool),
        seen=np.asarray(tmeta["seen"], dtype=bool),
        task_of_class={c: registry.task_of(c) for c in tmeta["class_ids"]},
        scale=tmeta["scale"],
    )

    pmeta = manifest["prototypes"]
    protos = PrototypeSet(lambda2=pmeta["lambda2"])
    for pm in pmeta["classes"]:
        cid = pm["class_id"]
        protos = protos.add(
            ClassPrototypes(
                task_id=pm["task_id"],
                class_id=cid,
                weights=tensors[f"proto/{cid}/weights"],
                means=tensors[f"proto/{cid}/means"],
                variances=tensors[f"proto/{cid}/variances"],
            )
        )
    return CheckpointBundle(adapter_state, clf, protos, registry, manifest["config"])
