import json

import numpy as np
import pytest

from lada.errors import ParameterError, StateError
from lada.metrics import (
    AccuracyMatrix,
    average,
    last,
    matrix_to_csv,
    summary,
    transfer,
    write_matrix_csv,
)


def filled(values):
    values = np.asarray(values, dtype=np.float64)
    m = AccuracyMatrix(values.shape[0])
    for j in range(values.shape[1]):
        m.write_column(j, values[:, j])
    return m


class TestTransfer:
    def test_hand_example(self):
        m = AccuracyMatrix(3)
        m.write_column(0, [1.0, 0.2, 0.4])
        m.write_column(1, [0.9, 0.8, 0.6])
        # accuracy on the third task after tasks one and two: 0.4 and 0.6
        assert transfer(m, 2) == 0.5

    def test_second_task_is_single_term(self):
        m = AccuracyMatrix(2)
        m.write_column(0, [0.7, 0.3])
        assert transfer(m, 1) == 0.3

    def test_first_task_undefined(self):
        m = filled(np.full((3, 3), 0.5))
        with pytest.raises(ParameterError):
            transfer(m, 0)

    def test_requires_prior_columns(self):
        m = AccuracyMatrix(3)
        m.write_column(0, [0.5, 0.5, 0.5])
        with pytest.raises(StateError):
            transfer(m, 2)

    def test_random_matrix_termwise(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(size=(4, 4))
        m = filled(values)
        for k in range(1, 4):
            assert transfer(m, k) == pytest.approx(values[k, :k].mean(), abs=1e-15)


class TestAverageAndLast:
    def test_constant_matrix(self):
        m = filled(np.full((3, 3), 0.42))
        for k in range(3):
            assert average(m, k) == pytest.approx(0.42)
            assert last(m, k) == pytest.approx(0.42)

    def test_two_task_row(self):
        m = filled(np.array([[0.2, 0.8], [0.5, 0.5]]))
        assert average(m, 0) == 0.5

    def test_incomplete_matrix_rejected(self):
        m = AccuracyMatrix(2)
        m.write_column(0, [0.5, 0.5])
        with pytest.raises(StateError):
            average(m, 0)
        with pytest.raises(StateError):
            last(m, 0)

    def test_last_is_final_column(self):
        rng = np.random.default_rng(1)
        values = rng.uniform(size=(3, 3))
        m = filled(values)
        for k in range(3):
            assert last(m, k) == values[k, 2]
        assert last(m, 2) == values[2, 2]  # diagonal entry for the final task

    def test_random_matrix_termwise(self):
        rng = np.random.default_rng(2)
        values = rng.uniform(size=(5, 5))
        m = filled(values)
        for k in range(5):
            assert average(m, k) == pytest.approx(values[k].mean(), abs=1e-15)


class TestSummary:
    def test_identity_like_two_tasks(self):
        m = filled(np.eye(2))
        s = summary(m)
        assert s["transfer"]["per_task"] == [None, 0.0]
        assert s["transfer"]["mean"] == 0.0
        assert s["last"]["per_task"] == [0.0, 1.0]
        assert s["average"]["per_task"] == [0.5, 0.5]

    def test_constant_matrix(self):
        m = filled(np.full((4, 4), 0.7))
        s = summary(m)
        assert s["transfer"]["mean"] == pytest.approx(0.7)
        assert s["average"]["mean"] == pytest.approx(0.7)
        assert s["last"]["mean"] == pytest.approx(0.7)

    def test_transfer_mean_excludes_first_task(self):
        values = np.array([[0.1, 0.1, 0.1], [0.4, 0.9, 0.9], [0.6, 0.6, 0.9]])
        s = summary(filled(values))
        assert s["transfer"]["mean"] == pytest.approx(np.mean([0.4, 0.6]))
        assert len(s["average"]["per_task"]) == 3
        assert len(s["last"]["per_task"]) == 3

    def test_json_deterministic(self):
        values = np.random.default_rng(3).uniform(size=(3, 3))
        a = json.dumps(summary(filled(values)), sort_keys=True)
        b = json.dumps(summary(filled(values)), sort_keys=True)
        assert a == b

    def test_incomplete_rejected(self):
        m = AccuracyMatrix(2)
        with pytest.raises(StateError):
            summary(m)


class TestMatrixBookkeeping:
    def test_column_written_once(self):
        m = AccuracyMatrix(2)
        m.write_column(0, [0.5, 0.5])
        with pytest.raises(StateError):
            m.write_column(0, [0.6, 0.6])

    def test_range_validation(self):
        m = AccuracyMatrix(2)
        with pytest.raises(ParameterError):
            m.write_column(0, [1.5, 0.0])

    def test_csv_layout(self, tmp_path):
        m = AccuracyMatrix(3)
        m.write_column(0, [1.0, 0.25, 0.5])
        csv = matrix_to_csv(m)
        lines = csv.strip().split("\n")
        assert lines[0] == "task,after_1,after_2,after_3"
        assert lines[1] == "1,1.0,,"
        assert lines[2] == "2,0.25,,"
        write_matrix_csv(m, tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text() == csv
