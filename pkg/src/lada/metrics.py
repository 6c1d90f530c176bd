"""Accuracy-matrix bookkeeping and the Transfer / Average / Last reductions.

``a[k][j]`` is the accuracy on task ``k`` after training task ``j`` (both
0-based here; the CSV header displays 1-based columns).  Columns are written
exactly once, immediately after the corresponding task is trained.

* ``transfer(m, k) = mean(a[k][0..k-1])`` - forward transfer, needs ``k >= 1``
* ``average(m, k) = mean(a[k][:])`` over all K columns
* ``last(m, k) = a[k][K-1]``
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, StateError


class AccuracyMatrix:
    def __init__(self, num_tasks):
        if num_tasks < 1:
            raise ParameterError("need at least one task")
        self.num_tasks = int(num_tasks)
        self.values = np.full((self.num_tasks, self.num_tasks), np.nan)
        self._written = [False] * self.num_tasks

    def write_column(self, j, accuracies):
        """Record accuracy of every task after training task ``j``."""
        if not 0 <= j < self.num_tasks:
            raise ParameterError(f"column {j} out of range")
        if self._written[j]:
            raise StateError(f"column {j} was already written")
        col = np.asarray(accuracies, dtype=np.float64)
        if col.shape != (self.num_tasks,):
            raise ParameterError(f"expected {self.num_tasks} accuracies, got {col.shape}")
        if np.any((col < 0) | (col > 1)):
            raise ParameterError("accuracies must lie in [0, 1]")
        self.values[:, j] = col
        self._written[j] = True

    def columns_written(self):
        return sum(self._written)

    def is_complete(self):
        return all(self._written)

    def value(self, k, j):
        return float(self.values[k, j])


def transfer(matrix: AccuracyMatrix, k) -> float:
    if k < 1 or k >= matrix.num_tasks:
        raise ParameterError(f"transfer is undefined for task index {k}")
    if not all(matrix._written[:k]):
        raise StateError(f"columns 0..{k - 1} must be written before transfer({k})")
    return float(matrix.values[k, :k].mean())


def average(matrix: AccuracyMatrix, k) -> float:
    if not matrix.is_complete():
        raise StateError("average needs every column written")
    return float(matrix.values[k, :].mean())


def last(matrix: AccuracyMatrix, k) -> float:
    if not matrix._written[matrix.num_tasks - 1]:
        raise StateError("last needs the final column written")
    return float(matrix.values[k, matrix.num_tasks - 1])


def summary(matrix: AccuracyMatrix) -> dict:
    """Per-task Transfer/Average/Last plus across-task means.

    The transfer list carries ``None`` for the first task (undefined) and its
    mean covers tasks 2..K only; average/last cover every task.
    """
    if not matrix.is_complete():
        raise StateError("summary needs a complete matrix")
    k_n = matrix.num_tasks
    transfer_per_task = [None] + [transfer(matrix, k) for k in range(1, k_n)]
    average_per_task = [average(matrix, k) for k in range(k_n)]
    last_per_task = [last(matrix, k) for k in range(k_n)]
    out = {
        "transfer": {
            "per_task": transfer_per_task,
            "mean": float(np.mean(transfer_per_task[1:])) if k_n > 1 else None,
        },
        "average": {"per_task": average_per_task, "mean": float(np.mean(average_per_task))},
        "last": {"per_task": last_per_task, "mean": float(np.mean(last_per_task))},
    }
    return out


def matrix_to_csv(matrix: AccuracyMatrix) -> str:
    """Header ``task,after_1,..,after_K``; empty cells for unwritten entries."""
    lines = ["task," + ",".join(f"after_{j + 1}" for j in range(matrix.num_tasks))]
    for k in range(matrix.num_tasks):
        cells = []
        for j in range(matrix.num_tasks):
            v = matrix.values[k, j]
            cells.append("" if np.isnan(v) else repr(float(v)))
        lines.append(f"{k + 1}," + ",".join(cells))
    return "\n".join(lines) + "\n"


def write_matrix_csv(matrix: AccuracyMatrix, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(matrix_to_csv(matrix))
