"""Shared builders for the test suite."""

import numpy as np

from lada.adapter import AdapterConfig, AdapterState, LabelMemoryBlock
from lada.inference import InferenceConfig, batch_eval
from lada.metrics import AccuracyMatrix
from lada.prototypes import ClassPrototypes, PrototypeSet
from lada.store import EmbeddingSet, gen_synthetic_stream
from lada.text_head import TextClassifier, build_unseen_bank, init_from_embeddings
from lada.trainer import TrainConfig, train_task


def unit_rows(rng, shape):
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_embedding_set(rng, n=None, d=None):
    n = n or int(rng.integers(1, 12))
    d = d or int(rng.integers(1, 9))
    return EmbeddingSet(
        d,
        rng.integers(0, 4, size=n),
        rng.integers(0, 100, size=n),
        rng.normal(size=(n, d)).astype(np.float32),
    )


def tiny_stream(seed=7):
    return gen_synthetic_stream(seed, 2, 3, 16, 8, 4, 8.0)


def desk_stream(seed=42, n_test=20):
    return gen_synthetic_stream(seed, 5, 10, 64, 32, n_test, 8.0)


def run_pipeline(stream, cfg, alpha=0.5, after_task=None):
    """Train every task in order; fill the accuracy matrix column by column.

    ``after_task(pos, adapter, clf, protos, report)`` runs after each task.
    Returns (matrix, adapter, clf, protos).
    """
    registry = stream.registry
    clf = init_from_embeddings(stream.text_set, registry, scale=cfg.logit_scale)
    adapter = AdapterState.empty(cfg.adapter_config())
    protos = PrototypeSet(lambda2=cfg.lambda2)
    matrix = AccuracyMatrix(len(registry.tasks))
    inf_cfg = InferenceConfig(alpha=alpha)
    for pos, task in enumerate(registry.tasks):
        registry.set_status(task.task_id, "current")
        adapter, clf, protos, _ = train_task(
            stream.train_sets[pos], adapter, clf, protos, registry, cfg, task.task_id
        )
        bank = build_unseen_bank(clf)
        report = batch_eval(stream.test_set, adapter, clf, bank, registry, inf_cfg)
        matrix.write_column(
            pos, [report["per_task"][str(t.task_id)]["accuracy"] for t in registry.tasks]
        )
        if after_task is not None:
            after_task(pos, adapter, clf, protos, report)
    return matrix, adapter, clf, protos


def gradcheck_instance(seed, loss_mode, d=8, lambda1=2, lambda2=2, beta=3.0, scale=8.0):
    """Random mid-training snapshot: tasks 0-1 learned (frozen), task 2 current.

    Returns (adapter, clf, cfg, batch_x, batch_y, replay_entries); the replay
    entries are drawn once so the loss is a pure function of the parameters.
    """
    from lada.prototypes import replay_batch

    rng = np.random.default_rng(seed)
    tasks = {0: (0, 1), 1: (2, 3), 2: (4, 5)}
    cfg = TrainConfig(
        epochs=1,
        batch_size=4,
        loss_mode=loss_mode,
        seed=seed,
        beta=beta,
        lambda1=lambda1,
        lambda2=lambda2,
        logit_scale=scale,
    )
    blocks = []
    for tid, cids in tasks.items():
        frozen = tid < 2
        for cid in cids:
            w = unit_rows(rng, (lambda1, d))
            if frozen:
                w = np.ascontiguousarray(w)
                w.flags.writeable = False
            blocks.append(LabelMemoryBlock(tid, cid, w, frozen=frozen))
    adapter = AdapterState(tuple(blocks), AdapterConfig(lambda1=lambda1, beta=beta))
    clf = TextClassifier(
        d,
        list(range(6)),
        unit_rows(rng, (6, d)),
        {c: t for t, cs in tasks.items() for c in cs},
        scale=scale,
    )
    clf.seen[:] = True
    clf.frozen[:4] = True
    protos = PrototypeSet(lambda2=lambda2)
    for tid in (0, 1):
        for cid in tasks[tid]:
            protos = protos.add(
                ClassPrototypes(
                    tid,
                    cid,
                    rng.dirichlet([2.0] * lambda2),
                    unit_rows(rng, (lambda2, d)),
                    np.abs(rng.normal(0.02, 0.01, size=lambda2)) + 1e-4,
                )
            )
    batch_x = unit_rows(rng, (6, d))
    batch_y = np.array([4, 5, 4, 5, 4, 5])
    entries = replay_batch(protos, np.random.default_rng(seed + 999))
    return adapter, clf, cfg, batch_x, batch_y, entries
