import math

import numpy as np
import pytest

from helpers import unit_rows
from lada.adapter import (
    AdapterConfig,
    AdapterState,
    LabelMemoryBlock,
    expand_for_task,
    freeze_task,
    init_block,
    lada_logits,
    lada_logits_batch,
    phi_map,
)
from lada.errors import ParameterError, RegistryError, ShapeError


def blob_features(rng, centers, per_blob, spread=0.02):
    pts = np.vstack([c + spread * rng.normal(size=(per_blob, len(c))) for c in centers])
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def restarted_lloyd(points, k, restarts=20):
    """Independent multi-restart Lloyd baseline (random init, no seeding trick)."""
    best = (np.inf, None)
    for r in range(restarts):
        rng = np.random.default_rng(1000 + r)
        centers = points[rng.choice(len(points), size=k, replace=False)].copy()
        for _ in range(100):
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            labels = d2.argmin(axis=1)
            new_centers = centers.copy()
            for c in range(k):
                members = points[labels == c]
                if len(members):
                    new_centers[c] = members.mean(axis=0)
            if np.allclose(new_centers, centers, atol=1e-13):
                break
            centers = new_centers
        inertia = ((points - centers[labels]) ** 2).sum()
        if inertia < best[0]:
            best = (inertia, centers)
    return best[1]


def single_block_state(w, beta=5.0, lambda1=None):
    cfg = AdapterConfig(lambda1=lambda1 or w.shape[0], beta=beta)
    return AdapterState((LabelMemoryBlock(0, 0, np.asarray(w, dtype=np.float64)),), cfg)


class TestInitBlock:
    def test_single_sample_is_its_own_center(self):
        rng = np.random.default_rng(0)
        sample = unit_rows(rng, (1, 8))
        block = init_block(sample, 0, 3, AdapterConfig(lambda1=16), seed=0)
        assert block.W.shape == (1, 8)
        np.testing.assert_allclose(block.W[0], sample[0], atol=1e-12)
        assert not block.frozen

    def test_k_equals_sample_count(self):
        rng = np.random.default_rng(1)
        samples = unit_rows(rng, (16, 8))
        block = init_block(samples, 0, 0, AdapterConfig(lambda1=16), seed=0)
        order = np.lexsort(block.W.T[::-1])
        expected = np.lexsort(samples.T[::-1])
        np.testing.assert_allclose(block.W[order], samples[expected], atol=1e-9)

    def test_matches_multi_restart_oracle(self):
        rng = np.random.default_rng(2)
        centers = unit_rows(rng, (4, 16))
        features = blob_features(rng, centers, per_blob=16)
        block = init_block(features, 0, 0, AdapterConfig(lambda1=4), seed=7)
        oracle = restarted_lloyd(features, 4)
        oracle /= np.linalg.norm(oracle, axis=1, keepdims=True)
        order = np.lexsort(block.W.T[::-1])
        expected = np.lexsort(oracle.T[::-1])
        np.testing.assert_allclose(block.W[order], oracle[expected], atol=1e-6)

    def test_rows_unit_norm_at_init(self):
        rng = np.random.default_rng(3)
        features = unit_rows(rng, (20, 8))
        block = init_block(features, 0, 0, AdapterConfig(lambda1=5), seed=1)
        np.testing.assert_allclose(np.linalg.norm(block.W, axis=1), 1.0, atol=1e-6)


class TestForward:
    def test_phi_self_inner_product(self):
        i = unit_rows(np.random.default_rng(4), (1, 6))[0]
        state = single_block_state(i[None, :])
        np.testing.assert_allclose(phi_map(state, i)[0], [1.0], atol=1e-12)

    def test_phi_orthogonal_rows(self):
        i = np.zeros(4)
        i[0] = 1.0
        w = np.zeros((2, 4))
        w[0, 1] = 1.0
        w[1, 2] = 1.0
        state = single_block_state(w)
        np.testing.assert_array_equal(phi_map(state, i)[0], [0.0, 0.0])

    def test_phi_matches_naive_double_loop(self):
        rng = np.random.default_rng(5)
        blocks = tuple(
            LabelMemoryBlock(0, c, unit_rows(rng, (3, 8)))
            for c in range(4)
        )
        state = AdapterState(blocks, AdapterConfig(lambda1=3))
        i = unit_rows(rng, (1, 8))[0]
        got = phi_map(state, i)
        for b, slots in zip(blocks, got):
            for l in range(3):
                expected = sum(b.W[l, k] * i[k] for k in range(8))
                assert slots[l] == pytest.approx(expected, abs=1e-12)

    def test_logit_of_matching_row_is_one(self):
        i = unit_rows(np.random.default_rng(6), (1, 5))[0]
        for beta in (0.5, 5.0, 50.0):
            state = single_block_state(i[None, :], beta=beta)
            assert lada_logits(state, i)[0] == pytest.approx(1.0, abs=1e-12)

    def test_logit_exp_minus_one(self):
        i = np.array([1.0, 0.0])
        w = np.array([[0.0, 1.0]])
        state = single_block_state(w, beta=1.0)
        assert lada_logits(state, i)[0] == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_monotone_in_similarity(self):
        i = np.array([1.0, 0.0])
        angles = np.linspace(0.0, np.pi, 30)
        logits = [
            lada_logits(single_block_state(np.array([[np.cos(a), np.sin(a)]])), i)[0]
            for a in angles
        ]
        assert np.all(np.diff(logits) < 0)

    def test_slot_and_logit_bounds(self):
        rng = np.random.default_rng(7)
        beta = 5.0
        blocks = tuple(LabelMemoryBlock(0, c, unit_rows(rng, (4, 8))) for c in range(3))
        state = AdapterState(blocks, AdapterConfig(lambda1=4, beta=beta))
        for _ in range(50):
            i = unit_rows(rng, (1, 8))[0]
            for slots in phi_map(state, i):
                phi = np.exp(-beta * (1.0 - slots))
                assert np.all(phi >= math.exp(-2.0 * beta) - 1e-15)
                assert np.all(phi <= 1.0 + 1e-12)
            logits = lada_logits(state, i)
            assert np.all(logits > 0.0)
            assert np.all(logits <= 4.0 + 1e-9)

    def test_two_path_equality(self):
        rng = np.random.default_rng(8)
        blocks = tuple(LabelMemoryBlock(0, c, unit_rows(rng, (5, 8))) for c in range(6))
        state = AdapterState(blocks, AdapterConfig(lambda1=5, beta=3.0))
        i = unit_rows(rng, (1, 8))[0]
        via_phi = np.array(
            [np.exp(-3.0 * (1.0 - slots)).sum() for slots in phi_map(state, i)]
        )
        np.testing.assert_allclose(lada_logits(state, i), via_phi, atol=1e-12)

    def test_large_beta_nearest_neighbor_limit(self):
        rng = np.random.default_rng(9)
        rows = unit_rows(rng, (12, 16))
        blocks = tuple(
            LabelMemoryBlock(0, c, rows[3 * c : 3 * (c + 1)].copy()) for c in range(4)
        )
        state = AdapterState(blocks, AdapterConfig(lambda1=3, beta=200.0))
        for _ in range(20):
            i = unit_rows(rng, (1, 16))[0]
            nn_class = int(np.argmax(rows @ i)) // 3
            assert int(np.argmax(lada_logits(state, i))) == nn_class

    def test_shape_error(self):
        state = single_block_state(np.eye(3)[:1])
        with pytest.raises(ShapeError):
            lada_logits(state, np.ones(5))


class TestExpandAndFreeze:
    def _state_two_tasks(self, rng):
        first = tuple(LabelMemoryBlock(0, c, unit_rows(rng, (3, 8))) for c in range(2))
        state = AdapterState(first, AdapterConfig(lambda1=3, beta=5.0))
        new = [LabelMemoryBlock(1, c, unit_rows(rng, (3, 8))) for c in (2, 3)]
        return state, new

    def test_expansion_preserves_old_logits_bitwise(self):
        rng = np.random.default_rng(10)
        state, new = self._state_two_tasks(rng)
        probe = unit_rows(rng, (5, 8))
        before = lada_logits_batch(state, probe)
        expanded = expand_for_task(state, new)
        after = lada_logits_batch(expanded, probe)
        assert np.array_equal(before, after[:, :2])

    def test_expansion_grows_additively(self):
        rng = np.random.default_rng(11)
        state, new = self._state_two_tasks(rng)
        expanded = expand_for_task(state, new)
        assert len(expanded.blocks) == 4
        again = expand_for_task(
            expanded, [LabelMemoryBlock(2, 9, unit_rows(rng, (3, 8)))]
        )
        assert len(again.blocks) == 5
        assert all(b.frozen for b in again.blocks[:4])

    def test_duplicate_class_rejected(self):
        rng = np.random.default_rng(12)
        state, _ = self._state_two_tasks(rng)
        with pytest.raises(RegistryError):
            expand_for_task(state, [LabelMemoryBlock(1, 0, unit_rows(rng, (3, 8)))])

    def test_parameter_count_formula(self):
        # 1100 classes at d=512, lambda1=16 -> 9_011_200 params (9.01M);
        # lambda1=8 halves it to 4_505_600 (4.51M).
        for lam, expected in ((16, 9_011_200), (8, 4_505_600)):
            blocks = tuple(
                LabelMemoryBlock(0, c, np.empty((lam, 512))) for c in range(1100)
            )
            state = AdapterState(blocks, AdapterConfig(lambda1=lam))
            assert state.num_params() == expected
            assert round(state.num_params() / 1e6, 2) == round(expected / 1e6, 2)

    def test_clamped_blocks_count_their_own_rows(self):
        rng = np.random.default_rng(13)
        sizes = [1, 3, 16]
        blocks = tuple(
            LabelMemoryBlock(0, c, unit_rows(rng, (s, 8))) for c, s in enumerate(sizes)
        )
        state = AdapterState(blocks, AdapterConfig(lambda1=16))
        assert state.num_params() == sum(s * 8 for s in sizes)

    def test_freeze_idempotent_and_readonly(self):
        rng = np.random.default_rng(14)
        state, _ = self._state_two_tasks(rng)
        frozen = freeze_task(state, 0)
        frozen_again = freeze_task(frozen, 0)
        assert all(b.frozen for b in frozen_again.blocks)
        with pytest.raises((ValueError, RuntimeError)):
            frozen.blocks[0].W[0, 0] = 9.0

    def test_freeze_unknown_task(self):
        rng = np.random.default_rng(15)
        state, _ = self._state_two_tasks(rng)
        with pytest.raises(RegistryError):
            freeze_task(state, 7)

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            AdapterConfig(lambda1=0)
        with pytest.raises(ParameterError):
            AdapterConfig(beta=-1.0)
