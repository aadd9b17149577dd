import numpy as np
import pytest

from dymoe.graph import GraphBlockSequence, SynthConfig, synth_gaussian_sequence

DATA = __import__("pathlib").Path(__file__).parent / "data"


def tiny_sequence(task_kind="class"):
    """Three blocks shaped like the motivating example: block 3 attaches to block 2.

    Nodes 0-3 form block 1, 4-7 block 2, 8-9 block 3.
    """
    blocks = np.array([1, 1, 1, 1, 2, 2, 2, 2, 3, 3])
    if task_kind == "class":
        labels = np.array([0, 1, 0, 1, 2, 3, 2, 3, 4, 5])
    else:
        labels = np.array([0, 1, 0, 1, 0, 1, 0, 1, 0, 1])
    split = np.array([0, 0, 2, 2, 0, 0, 2, 2, 0, 2], dtype=np.int8)
    edges = np.array([[0, 1], [1, 2], [2, 3], [4, 5], [5, 6], [6, 7], [3, 4], [8, 5], [9, 6], [8, 9]])
    edge_blocks = np.array([1, 1, 1, 2, 2, 2, 2, 3, 3, 3])
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(10, 4)) + labels[:, None] * 0.5
    return GraphBlockSequence(blocks=blocks, labels=labels, features=feats, split=split,
                              edges=edges, edge_blocks=edge_blocks, task_kind=task_kind)


@pytest.fixture
def tiny_seq():
    return tiny_sequence()


@pytest.fixture(scope="session")
def small_synth():
    return synth_gaussian_sequence(SynthConfig(num_blocks=3, nodes_per_block=60, dim=8, seed=1))


@pytest.fixture
def data_dir():
    return DATA


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> str:
    """Print and keep one pass/fail line for an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
