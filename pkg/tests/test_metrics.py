import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dymoe.metrics import (DegenerateSplitError, IncompleteMatrixError, MetricsMatrix, OverwriteError,
                           average_accuracy, average_forgetting, read_metrics, record, set_cell,
                           write_metrics)

from .oracles import brute_average_accuracy, brute_average_forgetting


def _matrix(a):
    m = MetricsMatrix(len(a))
    for j in range(len(a)):
        for i in range(j + 1):
            set_cell(m, i + 1, j + 1, a[i][j])
    return m


def test_record_examples():
    m = MetricsMatrix(3)
    record(m, 3, 3, 3, 3)
    record(m, 1, 2, 0, 10)
    assert m.get(3, 3) == 1.0 and m.get(1, 2) == 0.0
    with pytest.raises(OverwriteError):
        record(m, 3, 3, 1, 3)
    with pytest.raises(DegenerateSplitError):
        record(m, 1, 1, 0, 0)
    with pytest.raises(IndexError):
        record(m, 2, 1, 1, 1)
    with pytest.raises(IndexError):
        record(m, 1, 4, 1, 1)


def test_hand_matrix():
    m = _matrix([[1.0, 0.8], [None, 0.9]])
    assert average_accuracy(m) == pytest.approx(0.95, abs=1e-12)
    assert average_forgetting(m) == pytest.approx(-0.05, abs=1e-12)


def test_constant_and_single_block():
    m = _matrix([[0.7, 0.7, 0.7], [None, 0.7, 0.7], [None, None, 0.7]])
    assert average_accuracy(m) == pytest.approx(0.7)
    assert average_forgetting(m) == 0.0
    one = _matrix([[0.42]])
    assert average_accuracy(one) == 0.42 and average_forgetting(one) == 0.0


def test_no_drift_gives_zero_forgetting():
    d = [0.9, 0.5, 0.3]
    m = _matrix([[d[0]] * 3, [None, d[1], d[1]], [None, None, d[2]]])
    assert average_forgetting(m) == 0.0


def test_incomplete_errors():
    m = MetricsMatrix(2)
    set_cell(m, 1, 1, 0.5)
    with pytest.raises(IncompleteMatrixError):
        average_accuracy(m)
    set_cell(m, 2, 2, 0.5)
    assert average_accuracy(m) == 0.5
    with pytest.raises(IncompleteMatrixError):
        average_forgetting(m)


def test_metrics_file_round_trip(tmp_path):
    m = _matrix([[1.0, 0.8], [None, 0.9]])
    path = write_metrics(tmp_path / "metrics.json", m, [1.0, 2.0], {"method": "x"})
    again, data = read_metrics(path)
    assert again.cells == m.cells
    assert data["AA"] == pytest.approx(0.95) and data["diagonal"] == [1.0, 0.9]
    assert data["wall_times"] == [1.0, 2.0] and data["method"] == "x"


def _lower(t, seed):
    rng = np.random.default_rng(seed)
    return [[rng.uniform() if i <= j else None for j in range(t)] for i in range(t)]


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_brute_force(seed):
    t = 1 + seed % 7
    a = _lower(t, seed)
    m = _matrix(a)
    assert abs(average_accuracy(m) - brute_average_accuracy(a)) < 1e-12
    assert abs(average_forgetting(m) - brute_average_forgetting(a)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(t=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_forgetting_nonpositive_when_accuracy_never_rises(t, seed):
    rng = np.random.default_rng(seed)
    diag = rng.uniform(size=t)
    a = [[diag[i] - (rng.uniform(0, diag[i]) if j > i else 0.0) if i <= j else None for j in range(t)]
         for i in range(t)]
    assert average_forgetting(_matrix(a)) <= 0.0


@settings(max_examples=30, deadline=None)
@given(t=st.integers(2, 6), seed=st.integers(0, 10_000))
def test_affine_shift_moves_aa_and_keeps_af(t, seed):
    # adding a constant to every cell shifts AA by that constant and leaves AF unchanged
    a = _lower(t, seed)
    shifted = [[None if v is None else v * 0.5 + 0.25 for v in row] for row in a]
    half = [[None if v is None else v * 0.5 for v in row] for row in a]
    assert average_accuracy(_matrix(shifted)) == pytest.approx(average_accuracy(_matrix(half)) + 0.25)
    assert average_forgetting(_matrix(shifted)) == pytest.approx(average_forgetting(_matrix(half)), abs=1e-12)
