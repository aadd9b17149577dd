"""Class-proportional memory of representative nodes per block."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class EmptyClassError(ValueError):
    pass


class EmptyBlockError(ValueError):
    pass


def class_representative(embeddings) -> np.ndarray:
    f = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if f.shape[0] == 0 or f.size == 0:
        raise EmptyClassError("cannot average an empty class")
    return f.mean(axis=0)


def representativeness(f_x, x_c) -> float:
    """Negative Euclidean distance to the class representative."""
    f_x = np.asarray(f_x, dtype=np.float64)
    x_c = np.asarray(x_c, dtype=np.float64)
    if f_x.shape != x_c.shape:
        raise ValueError(f"shape mismatch {f_x.shape} vs {x_c.shape}")
    return -float(np.linalg.norm(f_x - x_c))


def class_quota(class_size: int, p: float) -> int:
    """``max(1, round(p * class_size))`` with halves rounded up."""
    return max(1, int(math.floor(p * class_size + 0.5)))


def select_by_representativeness(node_ids, labels, embeddings, p: float) -> np.ndarray:
    """Keep the ``class_quota`` nodes of each class nearest their class mean.

    Ties on distance go to the lower node id.  Returns sorted node ids.
    """
    if not 0 < p < 1:
        raise ValueError("memory fraction must lie in (0, 1)")
    node_ids = np.asarray(node_ids, dtype=np.int64)
    labels = np.asarray(labels)
    emb = np.asarray(embeddings, dtype=np.float64)
    if node_ids.size == 0:
        raise EmptyBlockError("no training nodes in block")
    keep = []
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        center = class_representative(emb[idx])
        score = -np.linalg.norm(emb[idx] - center, axis=1)
        order = np.lexsort((node_ids[idx], -score))
        keep.append(node_ids[idx[order[:class_quota(idx.size, p)]]])
    return np.sort(np.concatenate(keep))


@dataclass
class MemoryBank:
    p: float
    sets: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("memory fraction must lie in (0, 1)")

    def add(self, block: int, node_ids) -> None:
        self.sets[block] = np.sort(np.asarray(node_ids, dtype=np.int64))

    def union(self, upto: int) -> np.ndarray:
        parts = [ids for b, ids in self.sets.items() if b <= upto]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    @property
    def size(self) -> int:
        return int(sum(ids.size for ids in self.sets.values()))

    def write_manifest(self, path) -> Path:
        path = Path(path)
        rows = [f"{b}\t{v}" for b in sorted(self.sets) for v in self.sets[b].tolist()]
        path.write_text("".join(r + "\n" for r in rows))
        return path

    @classmethod
    def read_manifest(cls, path, p: float) -> "MemoryBank":
        bank = cls(p)
        groups: dict[int, list[int]] = {}
        for line in Path(path).read_text().splitlines():
            if line.strip():
                b, v = line.split("\t")
                groups.setdefault(int(b), []).append(int(v))
        for b, ids in groups.items():
            bank.add(b, ids)
        return bank


def training_mix(bank: MemoryBank, new_block_train, stage: int, t: int) -> np.ndarray:
    """Stage 1: old memories plus the new block; stage 2: memories through ``t``."""
    if stage == 1:
        return np.concatenate([bank.union(t - 1), np.asarray(new_block_train, dtype=np.int64)])
    if stage == 2:
        if t not in bank.sets:
            raise ValueError(f"stage 2 needs the memory of block {t}")
        return bank.union(t)
    raise ValueError(f"unknown stage {stage}")
