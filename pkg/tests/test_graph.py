import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dymoe.graph import (GraphFormatError, GraphInvariantError, GraphReferenceError, LeakageError,
                         SynthConfig, build_ego_batch, load_sequence, sample_neighbors,
                         synth_gaussian_sequence, write_sequence)

from .conftest import tiny_sequence


def _write(tmp_path, nodes, edges):
    (tmp_path / "nodes.tsv").write_text(nodes)
    (tmp_path / "edges.tsv").write_text(edges)
    return tmp_path / "nodes.tsv", tmp_path / "edges.tsv"


def test_load_smallest_fixture(tmp_path):
    seq = load_sequence(*_write(tmp_path, "u\t1\t0\ttrain\t1,2\nv\t1\t1\ttest\t3,4\n", "u\tv\t1\n"))
    assert seq.num_blocks == 1 and seq.num_nodes == 2
    view = seq.snapshot(1)
    assert view.num_edges == 1
    assert view.neighbors(0).tolist() == [1] and view.neighbors(1).tolist() == [0]


def test_load_rejects_early_edge(tmp_path):
    paths = _write(tmp_path, "u\t1\t0\ttrain\t1\nv\t2\t1\ttrain\t2\n", "u\tv\t1\n")
    with pytest.raises(GraphInvariantError):
        load_sequence(*paths)


def test_load_reports_line_number(tmp_path):
    paths = _write(tmp_path, "u\t1\t0\ttrain\t1\nv\tx\t1\ttrain\t2\n", "")
    with pytest.raises(GraphFormatError, match=r"nodes\.tsv:2"):
        load_sequence(*paths)


def test_load_unknown_edge_endpoint(tmp_path):
    paths = _write(tmp_path, "u\t1\t0\ttrain\t1\n", "u\tzz\t1\n")
    with pytest.raises(GraphReferenceError):
        load_sequence(*paths)


def test_three_block_fixture_round_trip(data_dir, tmp_path):
    seq = load_sequence(data_dir / "three_block" / "nodes.tsv", data_dir / "three_block" / "edges.tsv")
    file_blocks = [int(line.split("\t")[1]) for line in (data_dir / "three_block" / "nodes.tsv").read_text().splitlines()]
    assert seq.blocks.tolist() == file_blocks
    nodes2, edges2 = seq.delta(2)
    assert [seq.external_ids[v] for v in nodes2] == ["d", "e"]
    assert sorted(tuple(sorted((seq.external_ids[u], seq.external_ids[v]))) for u, v in edges2) == [("c", "d"), ("d", "e")]
    write_sequence(seq, tmp_path)
    again = load_sequence(tmp_path / "nodes.tsv", tmp_path / "edges.tsv")
    np.testing.assert_array_equal(again.blocks, seq.blocks)
    np.testing.assert_array_equal(again.features, seq.features)
    assert sorted((data_dir / "three_block" / "nodes.tsv").read_text().splitlines()) == \
        sorted((tmp_path / "nodes.tsv").read_text().splitlines())


def test_missing_split_and_edge_block_defaults(tmp_path):
    nodes = "".join(f"n{i}\t{1 if i < 5 else 2}\t{0 if i < 5 else 1}\n" for i in range(10))
    seq = load_sequence(*_write(tmp_path, nodes.replace("\n", "\t\t0.5\n").replace("\t\t", "\t"), "n0\tn7\n"))
    # edge block defaults to the later endpoint's block
    assert seq.edge_blocks.tolist() == [2]
    assert (seq.split == 0).sum() == 6


def test_block_of():
    seq = tiny_sequence()
    assert seq.block_of(0) == 1
    assert seq.block_of(9) == 3
    with pytest.raises(GraphReferenceError):
        seq.block_of(42)


def test_block_histogram_matches_generator():
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=3, nodes_per_block=40, dim=4, seed=2))
    assert np.bincount(seq.blocks)[1:].tolist() == [40, 40, 40]


def test_snapshot_full_and_first():
    seq = tiny_sequence()
    full = seq.snapshot(3)
    assert full.num_edges == seq.edges.shape[0]
    first = seq.snapshot(1)
    assert first.node_ids.tolist() == [0, 1, 2, 3]
    assert first.edge_set() == {(0, 1), (1, 2), (2, 3)}
    with pytest.raises(IndexError):
        seq.snapshot(0)
    with pytest.raises(IndexError):
        seq.snapshot(4)


def test_snapshot_nesting_and_partition():
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=4, nodes_per_block=30, dim=3, seed=4))
    for i in range(1, 4):
        a, b = seq.snapshot(i), seq.snapshot(i + 1)
        assert set(a.node_ids) <= set(b.node_ids)
        assert a.edge_set() <= b.edge_set()
    nodes = [seq.delta(i)[0] for i in range(1, 5)]
    assert sum(n.size for n in nodes) == seq.num_nodes
    assert np.unique(np.concatenate(nodes)).size == seq.num_nodes
    assert sum(seq.delta(i)[1].shape[0] for i in range(1, 5)) == seq.edges.shape[0]
    n1, e1 = seq.delta(1)
    assert set(n1) == set(seq.snapshot(1).node_ids)
    assert {tuple(sorted(e)) for e in e1.tolist()} == seq.snapshot(1).edge_set()


def test_snapshot_is_induced_subgraph_of_full():
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=3, nodes_per_block=30, dim=3, seed=5))
    full = seq.snapshot(3)
    for i in (1, 2):
        expect = {(u, v) for (u, v) in full.edge_set() if seq.blocks[u] <= i and seq.blocks[v] <= i}
        got = seq.snapshot(i).edge_set()
        # edges between old nodes may arrive later, so the snapshot is a subset
        assert got <= expect
        arrived = {tuple(sorted(e)) for e, b in zip(seq.edges.tolist(), seq.edge_blocks) if b <= i}
        assert got == arrived


def test_sample_neighbors_small_degree():
    seq = tiny_sequence()
    view = seq.snapshot(3)
    assert sample_neighbors(view, 5, 10, seed=0) == sorted(view.neighbors(5).tolist())
    assert sample_neighbors(view, 5, 0, seed=0) == []
    with pytest.raises(GraphReferenceError):
        sample_neighbors(seq.snapshot(1), 8, 3, seed=0)


def test_sample_neighbors_deterministic_and_seed_dependent():
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=1, nodes_per_block=150, dim=2, p_intra=0.9, seed=0))
    view = seq.snapshot(1)
    v = int(np.argmax([view.degree(i) for i in range(seq.num_nodes)]))
    assert view.degree(v) >= 100
    a = sample_neighbors(view, v, 10, seed=1)
    assert a == sample_neighbors(view, v, 10, seed=1)
    assert a != sample_neighbors(view, v, 10, seed=2)
    assert len(set(a)) == 10 and set(a) <= set(view.neighbors(v).tolist())


def test_synth_single_block_balance():
    fracs = []
    for seed in range(20):
        seq = synth_gaussian_sequence(SynthConfig(num_blocks=1, classes_per_block=2, nodes_per_block=100, dim=4, seed=seed))
        assert seq.num_blocks == 1 and seq.num_nodes == 100
        fracs.append((seq.labels == 0).mean())
    # binomial(100, 0.5) share: 4 standard errors is 0.2
    assert all(abs(f - 0.5) <= 0.2 for f in fracs)
    assert abs(np.mean(fracs) - 0.5) < 0.05


def test_synth_no_inter_block_edges():
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=3, nodes_per_block=40, dim=2, p_inter=0.0, seed=3))
    assert np.all(seq.blocks[seq.edges[:, 0]] == seq.blocks[seq.edges[:, 1]])


def test_synth_class_means():
    means = np.arange(8.0).reshape(4, 2)
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=2, nodes_per_block=400, dim=2, sigma=1.0, means=means, seed=6))
    for c in range(4):
        rows = seq.features[seq.labels == c]
        assert np.all(np.abs(rows.mean(axis=0) - means[c]) < 3 / np.sqrt(rows.shape[0]))


def test_synth_classes_disjoint_per_block():
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=4, nodes_per_block=20, dim=2, seed=1))
    sets = [set(c) for c in seq.classes_per_block]
    for i in range(4):
        for j in range(i + 1, 4):
            assert not sets[i] & sets[j]


def test_synth_rejects_bad_probability():
    with pytest.raises(ValueError):
        synth_gaussian_sequence(SynthConfig(p_intra=1.5))


def test_class_mode_rejects_shared_classes():
    seq = tiny_sequence("instance")
    with pytest.raises(GraphInvariantError):
        type(seq)(blocks=seq.blocks, labels=seq.labels, features=seq.features, split=seq.split,
                  edges=seq.edges, edge_blocks=seq.edge_blocks, task_kind="class")


def test_leakage_guard_raises_on_future_node():
    seq = tiny_sequence()
    view = seq.snapshot(2)
    with pytest.raises(LeakageError):
        view.features([8])
    assert view.violations == 1 and view.max_block_seen == 3


def test_ego_batch_respects_snapshot_and_fanout():
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=3, nodes_per_block=50, dim=3, seed=7))
    view = seq.snapshot(2)
    view.reset_instrumentation()
    targets = seq.nodes_where(block=2, split="train")[:20]
    batch = build_ego_batch(view, targets, 2, 3, np.random.default_rng(0))
    assert batch.nodes[-1].tolist() == targets.tolist()
    for layer, (src, dst) in enumerate(zip(batch.nodes[:-1], batch.nodes[1:])):
        assert src[: dst.size].tolist() == dst.tolist()
        blk = batch.layers[layer]
        assert blk.mask.sum(axis=1).max() <= 3
        edges = view.edge_set()
        for r, v in enumerate(dst):
            for u in src[blk.nbr[r][blk.mask[r]]]:
                assert (min(u, v), max(u, v)) in edges
    assert view.max_block_seen <= 2 and view.violations == 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), blocks=st.integers(1, 4))
def test_edge_arrival_never_precedes_endpoints(seed, blocks):
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=blocks, nodes_per_block=15, dim=2, seed=seed))
    if seq.edges.size:
        need = np.maximum(seq.blocks[seq.edges[:, 0]], seq.blocks[seq.edges[:, 1]])
        assert np.all(seq.edge_blocks == need)
