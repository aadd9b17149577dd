"""Incremental graph block sequences, snapshots and neighbor sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "valid", "test")
SPLIT_CODE = {name: i for i, name in enumerate(SPLITS)}


class GraphFormatError(ValueError):
    """Malformed input row; message carries the file and line number."""


class GraphReferenceError(KeyError):
    pass


class GraphInvariantError(ValueError):
    pass


class LeakageError(RuntimeError):
    """A node or edge from a future block was touched through a snapshot view."""


@dataclass
class GraphBlockSequence:
    """Nodes and edges tagged with the block in which they first appear.

    Node ids are dense integers ``0..N-1``; ``blocks`` holds 1-based block
    indices.  ``edges`` is an ``(E, 2)`` array of undirected pairs and
    ``edge_blocks`` their arrival blocks.
    """

    blocks: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    split: np.ndarray
    edges: np.ndarray
    edge_blocks: np.ndarray
    task_kind: str = "class"
    external_ids: list[str] | None = None

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.split = np.asarray(self.split, dtype=np.int8)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.edge_blocks = np.asarray(self.edge_blocks, dtype=np.int64)
        self.validate()
        self._views: dict[int, GraphView] = {}

    @property
    def num_nodes(self) -> int:
        return int(self.blocks.size)

    @property
    def num_blocks(self) -> int:
        return int(self.blocks.max()) if self.blocks.size else 0

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def classes_per_block(self) -> list[list[int]]:
        out = []
        for i in range(1, self.num_blocks + 1):
            out.append(sorted(set(self.labels[self.blocks == i].tolist())))
        return out

    def validate(self) -> None:
        n = self.blocks.size
        if not (self.labels.size == self.split.size == self.features.shape[0] == n):
            raise GraphInvariantError("per-node arrays have inconsistent lengths")
        if n and self.blocks.min() < 1:
            raise GraphInvariantError("block indices must start at 1")
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise GraphReferenceError("edge references an unknown node")
            need = np.maximum(self.blocks[self.edges[:, 0]], self.blocks[self.edges[:, 1]])
            bad = np.nonzero(self.edge_blocks < need)[0]
            if bad.size:
                u, v = self.edges[bad[0]]
                raise GraphInvariantError(
                    f"edge ({u}, {v}) arrives in block {self.edge_blocks[bad[0]]} "
                    f"before its endpoints (block {need[bad[0]]})"
                )
            if self.edge_blocks.max() > self.num_blocks:
                raise GraphInvariantError("edge arrives after the last node block")
        if self.task_kind == "class":
            seen: dict[int, int] = {}
            for lab, blk in zip(self.labels.tolist(), self.blocks.tolist()):
                if seen.setdefault(lab, blk) != blk:
                    raise GraphInvariantError(
                        f"class {lab} appears in blocks {seen[lab]} and {blk} "
                        "(class-incremental blocks need disjoint classes)"
                    )

    def block_of(self, v: int) -> int:
        if not 0 <= v < self.num_nodes:
            raise GraphReferenceError(f"unknown node {v}")
        return int(self.blocks[v])

    def _check_block(self, i: int) -> None:
        if not 1 <= i <= self.num_blocks:
            raise IndexError(f"block {i} outside [1, {self.num_blocks}]")

    def snapshot(self, i: int) -> "GraphView":
        """Cumulative graph with every node and edge of block <= ``i``."""
        self._check_block(i)
        if i not in self._views:
            self._views[i] = GraphView(self, i)
        return self._views[i]

    def delta(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(node ids, edge rows) arriving exactly in block ``i``."""
        self._check_block(i)
        return np.nonzero(self.blocks == i)[0], self.edges[self.edge_blocks == i]

    def nodes_where(self, block: int | None = None, split: str | None = None,
                    max_block: int | None = None) -> np.ndarray:
        m = np.ones(self.num_nodes, dtype=bool)
        if block is not None:
            m &= self.blocks == block
        if max_block is not None:
            m &= self.blocks <= max_block
        if split is not None:
            m &= self.split == SPLIT_CODE[split]
        return np.nonzero(m)[0]


class GraphView:
    """Read-only snapshot with CSR adjacency and access instrumentation.

    Every node whose neighbors or features are read is checked against the
    snapshot block; ``max_block_seen`` and ``violations`` record the outcome.
    With ``strict`` (the default) a violation raises immediately.
    """

    def __init__(self, seq: GraphBlockSequence, block: int, strict: bool = True):
        self.seq = seq
        self.block = block
        self.strict = strict
        self.max_block_seen = 0
        self.violations = 0
        self.accesses = 0
        keep = seq.edge_blocks <= block
        e = seq.edges[keep]
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        self.indptr = np.zeros(seq.num_nodes + 1, dtype=np.int64)
        np.add.at(self.indptr, src + 1, 1)
        self.indptr = np.cumsum(self.indptr)
        self.indices = dst
        self.num_edges = int(e.shape[0])
        self.node_ids = np.nonzero(seq.blocks <= block)[0]

    def touch(self, ids) -> None:
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if not ids.size:
            return
        if ids.min() < 0 or ids.max() >= self.seq.num_nodes:
            raise GraphReferenceError("unknown node id")
        self.accesses += ids.size
        top = int(self.seq.blocks[ids].max())
        self.max_block_seen = max(self.max_block_seen, top)
        if top > self.block:
            self.violations += int((self.seq.blocks[ids] > self.block).sum())
            if self.strict:
                raise LeakageError(f"node from block {top} read through snapshot {self.block}")

    def reset_instrumentation(self) -> None:
        self.max_block_seen = 0
        self.violations = 0
        self.accesses = 0

    def contains(self, v: int) -> bool:
        return 0 <= v < self.seq.num_nodes and self.seq.blocks[v] <= self.block

    def neighbors(self, v: int) -> np.ndarray:
        self.touch([v])
        nb = self.indices[self.indptr[v]:self.indptr[v + 1]]
        self.touch(nb)
        return nb

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def features(self, ids) -> np.ndarray:
        self.touch(ids)
        return self.seq.features[np.asarray(ids, dtype=np.int64)]

    def edge_set(self) -> set[tuple[int, int]]:
        keep = self.seq.edge_blocks <= self.block
        return {(int(min(u, v)), int(max(u, v))) for u, v in self.seq.edges[keep]}

    def sample_many(self, nodes: np.ndarray, fanout: int | None,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Sample up to ``fanout`` neighbors for each node.

        Returns a padded ``(len(nodes), width)`` id matrix and a validity mask.
        ``fanout=None`` keeps every neighbor.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        self.touch(nodes)
        starts = self.indptr[nodes]
        deg = self.indptr[nodes + 1] - starts
        cap = deg if fanout is None else np.minimum(deg, fanout)
        width = int(cap.max()) if cap.size else 0
        ids = np.zeros((nodes.size, width), dtype=np.int64)
        mask = np.zeros((nodes.size, width), dtype=bool)
        total = int(deg.sum())
        if width == 0 or total == 0:
            return ids, mask
        seg = np.repeat(np.arange(nodes.size), deg)
        offs = np.arange(total) - np.repeat(np.cumsum(deg) - deg, deg)
        flat = self.indices[np.repeat(starts, deg) + offs]
        if fanout is not None and np.any(deg > fanout):
            keys = rng.random(total)
            order = np.lexsort((keys, seg))
            seg, flat = seg[order], flat[order]
        rank = np.arange(total) - np.repeat(np.cumsum(deg) - deg, deg)
        keep = rank < np.repeat(cap, deg)
        ids[seg[keep], rank[keep]] = flat[keep]
        mask[seg[keep], rank[keep]] = True
        self.touch(flat[keep])
        return ids, mask


def sample_neighbors(view: GraphView, v: int, fanout: int, seed: int) -> list[int]:
    """Uniform sample of at most ``fanout`` neighbors, without replacement."""
    if not view.contains(v):
        raise GraphReferenceError(f"node {v} not in snapshot {view.block}")
    if fanout < 0:
        raise ValueError("fanout must be >= 0")
    nb = view.neighbors(v)
    if nb.size <= fanout:
        return nb.tolist()
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(nb, size=fanout, replace=False).tolist())


# -- file formats --------------------------------------------------------
def load_sequence(node_path, edge_path, task_kind: str | None = None) -> GraphBlockSequence:
    """Read ``nodes.tsv`` and ``edges.tsv``.

    External node ids are remapped to dense integers in file order.  The
    split and edge-block columns are optional; missing splits default to a
    deterministic 60/20/20 split per block and missing edge blocks to the
    later endpoint's block.
    """
    node_path, edge_path = Path(node_path), Path(edge_path)
    ext_ids: list[str] = []
    index: dict[str, int] = {}
    blocks, labels, splits, feats = [], [], [], []
    for lineno, line in enumerate(node_path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (4, 5):
            raise GraphFormatError(f"{node_path}:{lineno}: expected 4 or 5 columns, got {len(cols)}")
        try:
            nid = cols[0]
            blk = int(cols[1])
            lab = int(cols[2])
            if len(cols) == 5:
                spl = cols[3]
                if spl not in SPLIT_CODE:
                    raise ValueError(f"bad split {spl!r}")
            else:
                spl = ""
            fvec = [float(x) for x in cols[-1].split(",")]
        except ValueError as exc:
            raise GraphFormatError(f"{node_path}:{lineno}: {exc}") from None
        if nid in index:
            raise GraphFormatError(f"{node_path}:{lineno}: duplicate node id {nid!r}")
        if feats and len(fvec) != len(feats[0]):
            raise GraphFormatError(f"{node_path}:{lineno}: feature width {len(fvec)} != {len(feats[0])}")
        index[nid] = len(ext_ids)
        ext_ids.append(nid)
        blocks.append(blk)
        labels.append(lab)
        splits.append(spl)
        feats.append(fvec)
    blocks_arr = np.asarray(blocks, dtype=np.int64)
    split_arr = _fill_splits(blocks_arr, splits)

    edges, eblocks = [], []
    for lineno, line in enumerate(edge_path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (2, 3):
            raise GraphFormatError(f"{edge_path}:{lineno}: expected 2 or 3 columns, got {len(cols)}")
        try:
            u, v = index[cols[0]], index[cols[1]]
        except KeyError as exc:
            raise GraphReferenceError(f"{edge_path}:{lineno}: unknown node {exc.args[0]!r}") from None
        if len(cols) == 3:
            try:
                eb = int(cols[2])
            except ValueError:
                raise GraphFormatError(f"{edge_path}:{lineno}: bad block {cols[2]!r}") from None
        else:
            eb = max(blocks[u], blocks[v])
        edges.append((u, v))
        eblocks.append(eb)

    if task_kind is None:
        task_kind = _infer_task_kind(blocks_arr, np.asarray(labels))
    return GraphBlockSequence(
        blocks=blocks_arr,
        labels=labels,
        features=np.asarray(feats, dtype=np.float64).reshape(len(blocks), -1),
        split=split_arr,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        edge_blocks=eblocks,
        task_kind=task_kind,
        external_ids=ext_ids,
    )


def _infer_task_kind(blocks: np.ndarray, labels: np.ndarray) -> str:
    first: dict[int, int] = {}
    for lab, blk in zip(labels.tolist(), blocks.tolist()):
        if first.setdefault(lab, blk) != blk:
            return "instance"
    return "class"


def _fill_splits(blocks: np.ndarray, splits: list[str]) -> np.ndarray:
    out = np.array([SPLIT_CODE.get(s, -1) for s in splits], dtype=np.int8)
    for b in np.unique(blocks):
        idx = np.nonzero((blocks == b) & (out < 0))[0]
        if idx.size:
            out[idx] = default_split(idx.size)
    return out


def default_split(n: int) -> np.ndarray:
    """60/20/20 train/valid/test codes assigned round-robin over ``n`` nodes."""
    pattern = np.array([0, 0, 0, 1, 2], dtype=np.int8)
    return pattern[np.arange(n) % 5]


def write_sequence(seq: GraphBlockSequence, out_dir) -> tuple[Path, Path]:
    """Write ``nodes.tsv``/``edges.tsv`` in canonical (id-sorted) order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = seq.external_ids or [str(i) for i in range(seq.num_nodes)]
    lines = []
    for i in range(seq.num_nodes):
        feats = ",".join(repr(float(x)) for x in seq.features[i])
        lines.append(f"{names[i]}\t{seq.blocks[i]}\t{seq.labels[i]}\t{SPLITS[seq.split[i]]}\t{feats}")
    node_path = out_dir / "nodes.tsv"
    node_path.write_text("\n".join(lines) + "\n")
    order = np.lexsort((seq.edges[:, 1], seq.edges[:, 0])) if seq.edges.size else []
    elines = [f"{names[seq.edges[k, 0]]}\t{names[seq.edges[k, 1]]}\t{seq.edge_blocks[k]}" for k in order]
    edge_path = out_dir / "edges.tsv"
    edge_path.write_text("\n".join(elines) + ("\n" if elines else ""))
    return node_path, edge_path


# -- synthetic data ------------------------------------------------------
@dataclass
class SynthConfig:
    num_blocks: int = 5
    classes_per_block: int = 2
    nodes_per_block: int = 200
    dim: int = 16
    sigma: float = 1.0
    mean_scale: float = 2.0
    p_intra: float = 0.02
    p_inter: float = 0.005
    homophily: float = 0.8
    task: str = "class"
    seed: int = 0
    means: np.ndarray | None = field(default=None, repr=False)


def synth_gaussian_sequence(cfg: SynthConfig) -> GraphBlockSequence:
    """Gaussian-mixture node features on a random block-structured graph.

    Class means are drawn once per class from ``N(0, mean_scale^2 I)``
    unless ``cfg.means`` supplies them (shape ``(num_classes, dim)``).  Within a
    block, a candidate edge survives with probability ``p_intra``; between a
    node and an earlier-block node with probability ``p_inter``.  ``homophily``
    is the share of intra-block edges that join same-class pairs.
    """
    if cfg.num_blocks < 1:
        raise ValueError("need at least one block")
    if cfg.sigma <= 0:
        raise ValueError("sigma must be positive")
    for name in ("p_intra", "p_inter", "homophily"):
        val = getattr(cfg, name)
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"{name}={val} outside [0, 1]")
    if cfg.task not in ("class", "instance"):
        raise ValueError(f"unknown task {cfg.task!r}")
    rng = np.random.default_rng(cfg.seed)
    c = cfg.classes_per_block
    n_classes = c * cfg.num_blocks if cfg.task == "class" else c
    if cfg.means is not None:
        means = np.asarray(cfg.means, dtype=np.float64)
        if means.shape != (n_classes, cfg.dim):
            raise ValueError(f"means must have shape {(n_classes, cfg.dim)}")
    else:
        means = rng.normal(0.0, cfg.mean_scale, size=(n_classes, cfg.dim))
    drift = rng.normal(0.0, cfg.mean_scale / 4, size=(cfg.num_blocks, cfg.dim))

    blocks, labels, feats = [], [], []
    for b in range(1, cfg.num_blocks + 1):
        cls = np.arange(c) + ((b - 1) * c if cfg.task == "class" else 0)
        lab = cls[np.arange(cfg.nodes_per_block) % c]
        lab = rng.permutation(lab)
        mu = means[lab]
        if cfg.task == "instance":
            mu = mu + drift[b - 1]
        feats.append(mu + rng.normal(0.0, cfg.sigma, size=(cfg.nodes_per_block, cfg.dim)))
        labels.append(lab)
        blocks.append(np.full(cfg.nodes_per_block, b))
    blocks_arr = np.concatenate(blocks)
    labels_arr = np.concatenate(labels)
    feats_arr = np.concatenate(feats)

    n = blocks_arr.size
    iu, ju = np.triu_indices(n, k=1)
    same_block = blocks_arr[iu] == blocks_arr[ju]
    same_class = labels_arr[iu] == labels_arr[ju]
    base = np.where(same_block, cfg.p_intra, cfg.p_inter)
    # homophily splits expected degree between same-class and other pairs
    frac_same = 1.0 / c
    w_same = cfg.homophily / frac_same
    w_diff = (1 - cfg.homophily) / (1 - frac_same) if c > 1 else 0.0
    weight = np.where(same_class, w_same, w_diff)
    prob = np.clip(base * np.where(same_block, weight, 1.0), 0.0, 1.0)
    keep = rng.random(iu.size) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    eblocks = np.maximum(blocks_arr[edges[:, 0]], blocks_arr[edges[:, 1]])

    split = np.empty(n, dtype=np.int8)
    for b in range(1, cfg.num_blocks + 1):
        idx = np.nonzero(blocks_arr == b)[0]
        split[idx] = rng.permutation(default_split(idx.size))
    return GraphBlockSequence(
        blocks=blocks_arr,
        labels=labels_arr,
        features=feats_arr,
        split=split,
        edges=edges,
        edge_blocks=eblocks,
        task_kind=cfg.task,
    )


# -- minibatches ---------------------------------------------------------
@dataclass
class LayerBlock:
    """Message-passing step from ``nodes[l]`` rows to the first ``num_dst`` of them."""

    num_dst: int
    nbr: np.ndarray
    mask: np.ndarray


@dataclass
class EgoBatch:
    """Sampled multi-hop computation graph for a set of target nodes.

    ``nodes[0]`` lists every input node; ``nodes[l+1]`` is a prefix of
    ``nodes[l]`` and ``nodes[-1]`` equals ``targets``.  ``layers[l]`` indexes
    neighbors of ``nodes[l+1]`` as positions in ``nodes[l]``.
    """

    targets: np.ndarray
    nodes: list[np.ndarray]
    layers: list[LayerBlock]
    blocks: list[np.ndarray]
    labels: np.ndarray
    features: np.ndarray
    snapshot: int


def build_ego_batch(view: GraphView, targets, num_layers: int, fanout: int | None,
                    rng: np.random.Generator) -> EgoBatch:
    seq = view.seq
    targets = np.asarray(targets, dtype=np.int64)
    if np.unique(targets).size != targets.size:
        raise ValueError("duplicate target nodes")
    view.touch(targets)
    cur = targets
    nodes = [cur]
    layers = []
    for _ in range(num_layers):
        ids, mask = view.sample_many(cur, fanout, rng)
        extra = np.setdiff1d(np.unique(ids[mask]), cur, assume_unique=True)
        src = np.concatenate([cur, extra])
        pos = np.full(seq.num_nodes, -1, dtype=np.int64)
        pos[src] = np.arange(src.size)
        nbr = np.where(mask, pos[ids], 0)
        layers.append(LayerBlock(num_dst=len(cur), nbr=nbr, mask=mask))
        nodes.append(src)
        cur = src
    nodes.reverse()
    layers.reverse()
    return EgoBatch(
        targets=targets,
        nodes=nodes,
        layers=layers,
        blocks=[seq.blocks[n] for n in nodes],
        labels=seq.labels[targets],
        features=view.features(nodes[0]),
        snapshot=view.block,
    )
