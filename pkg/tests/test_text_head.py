import numpy as np
import pytest

from helpers import gradcheck_instance, tiny_stream, unit_rows
from lada.errors import RegistryError, ShapeError
from lada.store import ClassRegistry, EmbeddingSet, TaskDescriptor
from lada.text_head import (
    TextClassifier,
    build_unseen_bank,
    complete_task,
    init_from_embeddings,
    logit_order,
    text_logits,
    text_logits_batch,
)
from lada.trainer import loss_and_grads


def three_class_setup(rng):
    registry = ClassRegistry(
        tasks=[TaskDescriptor(0, (0, 1)), TaskDescriptor(1, (2,))],
        name_of={0: "a", 1: "b", 2: "c"},
    )
    text = EmbeddingSet(
        8, [0, 0, 1], [0, 1, 2], unit_rows(rng, (3, 8)).astype(np.float32), normalized=True
    )
    return registry, text


class TestInit:
    def test_one_vector_per_class(self):
        registry, text = three_class_setup(np.random.default_rng(0))
        clf = init_from_embeddings(text, registry)
        assert list(clf.class_ids) == [0, 1, 2]
        assert clf.vectors.shape == (3, 8)
        assert not clf.seen.any() and not clf.frozen.any()

    def test_missing_class_named_in_error(self):
        registry, text = three_class_setup(np.random.default_rng(1))
        partial = EmbeddingSet(8, text.task_ids[:2], text.class_ids[:2], text.vectors[:2])
        with pytest.raises(RegistryError, match="class 2"):
            init_from_embeddings(partial, registry)

    def test_duplicate_record_rejected(self):
        registry, text = three_class_setup(np.random.default_rng(2))
        doubled = EmbeddingSet(
            8,
            np.concatenate([text.task_ids, text.task_ids[:1]]),
            np.concatenate([text.class_ids, text.class_ids[:1]]),
            np.vstack([text.vectors, text.vectors[:1]]),
        )
        with pytest.raises(RegistryError):
            init_from_embeddings(doubled, registry)

    def test_vectors_unit_norm(self):
        registry, text = three_class_setup(np.random.default_rng(3))
        scaled = EmbeddingSet(8, text.task_ids, text.class_ids, 3.5 * text.vectors)
        clf = init_from_embeddings(scaled, registry)
        np.testing.assert_allclose(np.linalg.norm(clf.vectors, axis=1), 1.0, atol=1e-12)


class TestLogits:
    def _seen_clf(self, rng, scale=1.0):
        registry, text = three_class_setup(rng)
        clf = init_from_embeddings(text, registry, scale=scale)
        clf.start_task(0)
        clf.start_task(1)
        return clf

    def test_matching_vector_scores_one(self):
        clf = self._seen_clf(np.random.default_rng(4), scale=1.0)
        i = clf.vectors[0].copy()
        assert text_logits(clf, None, i)[0] == pytest.approx(1.0, abs=1e-12)

    def test_linear_scaling(self):
        clf = self._seen_clf(np.random.default_rng(5), scale=100.0)
        # Build an input with inner product exactly 0.3 against class 0.
        t = clf.vectors[0]
        orth = np.zeros_like(t)
        orth[np.argmin(np.abs(t))] = 1.0
        orth = orth - (orth @ t) * t
        orth /= np.linalg.norm(orth)
        i = 0.3 * t + np.sqrt(1.0 - 0.09) * orth
        assert text_logits(clf, None, i)[0] == pytest.approx(30.0, abs=1e-9)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(6)
        clf = self._seen_clf(rng, scale=7.5)
        bank = build_unseen_bank(clf)
        for _ in range(10):
            i = unit_rows(rng, (1, 8))[0]
            got = text_logits(clf, bank, i)
            ids = logit_order(clf, bank)
            for pos, cid in enumerate(ids):
                row = clf.vectors[clf.row_of(cid)] if clf.seen[clf.row_of(cid)] else None
                vec = row if row is not None else bank.vectors[list(bank.class_ids).index(cid)]
                expected = 7.5 * sum(vec[k] * i[k] for k in range(8))
                assert got[pos] == pytest.approx(expected, abs=1e-12)

    def test_linearity_on_raw_vectors(self):
        rng = np.random.default_rng(7)
        clf = self._seen_clf(rng, scale=11.0)
        x, y = rng.normal(size=8), rng.normal(size=8)
        a, b = 0.7, -2.3
        lhs = text_logits(clf, None, a * x + b * y)
        rhs = a * text_logits(clf, None, x) + b * text_logits(clf, None, y)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_order_seen_then_unseen(self):
        rng = np.random.default_rng(8)
        registry, text = three_class_setup(rng)
        clf = init_from_embeddings(text, registry)
        clf.start_task(0)
        bank = build_unseen_bank(clf)
        assert list(logit_order(clf, bank)) == [0, 1, 2]
        assert list(bank.class_ids) == [2]
        z = text_logits_batch(clf, bank, unit_rows(rng, (2, 8)))
        assert z.shape == (2, 3)

    def test_bank_disjoint_from_seen(self):
        rng = np.random.default_rng(9)
        registry, text = three_class_setup(rng)
        clf = init_from_embeddings(text, registry)
        clf.start_task(0)
        bank = build_unseen_bank(clf)
        assert set(bank.class_ids).isdisjoint(set(map(int, clf.seen_ids())))

    def test_shape_error(self):
        clf = self._seen_clf(np.random.default_rng(10))
        with pytest.raises(ShapeError):
            text_logits(clf, None, np.ones(5))


class TestFreeze:
    def test_complete_task_freezes_and_is_idempotent(self):
        rng = np.random.default_rng(11)
        registry, text = three_class_setup(rng)
        clf = init_from_embeddings(text, registry)
        clf.start_task(0)
        before = clf.vectors[:2].copy()
        complete_task(clf, 0)
        complete_task(clf, 0)
        assert clf.frozen[:2].all() and not clf.frozen[2]
        assert np.array_equal(clf.vectors[:2], before)

    def test_unknown_task(self):
        registry, text = three_class_setup(np.random.default_rng(12))
        clf = init_from_embeddings(text, registry)
        with pytest.raises(RegistryError):
            complete_task(clf, 9)

    def test_frozen_gradient_masked_to_zero(self):
        adapter, clf, cfg, bx, by, entries = gradcheck_instance(0, "joint_logits")
        _, grads = loss_and_grads(adapter, clf, bx, by, entries, cfg)
        assert np.all(grads["text"][clf.frozen] == 0.0)
        assert np.any(grads["text"][~clf.frozen] != 0.0)

    def test_frozen_vectors_bit_stable_through_training(self):
        stream = tiny_stream()
        from helpers import run_pipeline
        from lada.trainer import TrainConfig

        snapshots = {}

        def record(pos, adapter, clf, protos, report):
            snapshots[pos] = clf.vectors[clf.task_rows(stream.registry.tasks[0].task_id)].copy()

        run_pipeline(stream, TrainConfig(epochs=3, seed=1), after_task=record)
        assert np.array_equal(snapshots[0], snapshots[1])
