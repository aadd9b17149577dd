"""Accuracy matrix bookkeeping and average accuracy / forgetting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class IncompleteMatrixError(ValueError):
    pass


class DegenerateSplitError(ValueError):
    pass


class OverwriteError(ValueError):
    pass


@dataclass
class MetricsMatrix:
    """Lower-triangular accuracies: ``a[i, j]`` is block-``i`` test accuracy
    after training through block ``j`` (``i <= j``, both 1-based)."""

    t: int
    cells: dict[tuple[int, int], float] = field(default_factory=dict)

    def get(self, i: int, j: int) -> float:
        return self.cells[(i, j)]

    def as_array(self) -> np.ndarray:
        out = np.full((self.t, self.t), np.nan)
        for (i, j), v in self.cells.items():
            out[i - 1, j - 1] = v
        return out

    @property
    def complete(self) -> bool:
        return len(self.cells) == self.t * (self.t + 1) // 2

    def diagonal(self) -> list[float]:
        return [self.cells.get((i, i), float("nan")) for i in range(1, self.t + 1)]


def record(matrix: MetricsMatrix, i: int, j: int, correct: int, total: int) -> None:
    if not 1 <= i <= j <= matrix.t:
        raise IndexError(f"cell ({i}, {j}) outside the lower triangle of size {matrix.t}")
    if total <= 0:
        raise DegenerateSplitError(f"no evaluation nodes for cell ({i}, {j})")
    if not 0 <= correct <= total:
        raise ValueError("correct count outside [0, total]")
    if (i, j) in matrix.cells:
        raise OverwriteError(f"cell ({i}, {j}) already recorded")
    matrix.cells[(i, j)] = correct / total


def set_cell(matrix: MetricsMatrix, i: int, j: int, value: float) -> None:
    """Write-once cell assignment from a precomputed accuracy."""
    if not 1 <= i <= j <= matrix.t:
        raise IndexError(f"cell ({i}, {j}) outside the lower triangle of size {matrix.t}")
    if (i, j) in matrix.cells:
        raise OverwriteError(f"cell ({i}, {j}) already recorded")
    if not 0.0 <= value <= 1.0:
        raise ValueError("accuracy outside [0, 1]")
    matrix.cells[(i, j)] = float(value)


def average_accuracy(matrix: MetricsMatrix) -> float:
    missing = [i for i in range(1, matrix.t + 1) if (i, i) not in matrix.cells]
    if missing:
        raise IncompleteMatrixError(f"diagonal cells missing for blocks {missing}")
    return sum(matrix.cells[(i, i)] for i in range(1, matrix.t + 1)) / matrix.t


def average_forgetting(matrix: MetricsMatrix) -> float:
    if not matrix.complete:
        raise IncompleteMatrixError("lower triangle incomplete")
    a = matrix.as_array()
    total = 0.0
    for j in range(matrix.t):
        total += np.mean(a[: j + 1, j] - np.diag(a)[: j + 1])
    return float(total / matrix.t)


def metrics_dict(matrix: MetricsMatrix, wall_times=None, extra=None) -> dict:
    out = {
        "t": matrix.t,
        "matrix": [[i, j, matrix.cells[(i, j)]] for (i, j) in sorted(matrix.cells)],
        "AA": average_accuracy(matrix),
        "AF": average_forgetting(matrix) if matrix.complete else None,
        "diagonal": matrix.diagonal(),
        "wall_times": list(wall_times or []),
    }
    if extra:
        out.update(extra)
    return out


def write_metrics(path, matrix: MetricsMatrix, wall_times=None, extra=None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(metrics_dict(matrix, wall_times, extra), indent=2, sort_keys=True) + "\n")
    return path


def read_metrics(path) -> tuple[MetricsMatrix, dict]:
    data = json.loads(Path(path).read_text())
    m = MetricsMatrix(int(data["t"]))
    for i, j, v in data["matrix"]:
        set_cell(m, int(i), int(j), float(v))
    return m, data
