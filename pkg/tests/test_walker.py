import hashlib
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nembed._rng import derive_seed
from nembed.errors import ManifestError
from nembed.graph import BlockGrid, Graph
from nembed.walker import (EpisodeSampleStore, WalkConfig, augment, estimate_samples, generate_samples,
                           random_walk, read_block, run_walk_engine, write_block)
from conftest import make_graph
from oracles import bfs_within, enumerate_count, window_pairs


def test_chain_walk():
    g = Graph.from_edges([(0, 1), (1, 2), (2, 3)])
    assert random_walk(g, 0, 3, 0).tolist() == [0, 1, 2, 3]
    assert random_walk(g, 2, 5, 0).tolist() == [2, 3]


def test_isolated_node_walk():
    g = Graph.from_edges([(1, 2)], 3)
    assert random_walk(g, 0, 5, 1).tolist() == [0]
    with pytest.raises(IndexError):
        random_walk(g, 3, 1, 0)


def test_star_leaf_frequencies():
    g = Graph.from_edges([(0, i) for i in range(1, 5)])
    trials = 100_000
    hits = Counter(int(random_walk(g, 0, 1, 11, walk_index=t)[1]) for t in range(trials))
    freq = np.array([hits[i] for i in range(1, 5)]) / trials
    assert np.all(np.abs(freq - 0.25) <= 0.01)
    # chi-square against uniform, 3 dof, p > 0.001
    chi2 = ((np.array([hits[i] for i in range(1, 5)]) - trials / 4) ** 2 / (trials / 4)).sum()
    assert chi2 < 16.27


def test_walk_steps_follow_edges(small_graph):
    rng = np.random.default_rng(3)
    for t in range(200):
        p = random_walk(small_graph, int(rng.integers(200)), 8, rng)
        for a, b in zip(p, p[1:]):
            assert small_graph.has_edge(a, b)


def test_augment_examples():
    assert augment(list("abcd"), 2) == [("a", "b"), ("a", "c"), ("b", "c"), ("b", "d"), ("c", "d")]
    assert augment(["a"], 3) == []
    with pytest.raises(ValueError):
        augment([1, 2], 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8))
def test_augment_closed_form(k, l):
    assume_l = min(l, k)
    path = list(range(k + 1))
    got = augment(path, assume_l)
    assert got == window_pairs(path, assume_l)
    assert len(got) == k * assume_l - assume_l * (assume_l - 1) // 2
    assert len(augment(path, l)) == estimate_samples(1, k, l)


def test_estimate_examples():
    assert estimate_samples(1, 1, 1) == 1
    assert estimate_samples(1, 4, 2) == 7
    assert estimate_samples(1, 2, 3) == 3
    assert estimate_samples(10, 4, 2) == 70


@pytest.mark.parametrize("seed", range(6))
def test_sample_counts_match_enumeration_and_bfs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 1000))
    g = make_graph(n, int(rng.integers(n, 4 * n)), seed, symmetrize=bool(seed % 2))
    k, l = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    cfg = WalkConfig(k, l, 2, seed)
    pairs, walk_of, starts = generate_samples(g, cfg)
    seed = derive_seed(seed, 0)
    lengths = [len(random_walk(g, int(st_), k, seed, walk_index=t % 2)) for t, st_ in enumerate(starts)]
    assert len(pairs) == enumerate_count(lengths, k, l)
    adj = {u: set(g.neighbors(u).tolist()) for u in range(n)}
    for u, v in {tuple(p) for p in pairs.tolist()}:
        assert bfs_within(adj, u, v, min(l, k))


def test_generated_pairs_equal_augmented_walks(small_graph):
    cfg = WalkConfig(4, 3, 2, seed=9)
    pairs, walk_of, starts = generate_samples(small_graph, cfg, epoch=1)
    seed = derive_seed(9, 1)
    expect = []
    for t, s in enumerate(starts):
        path = random_walk(small_graph, int(s), 4, seed, walk_index=t % 2)
        expect += augment(path.tolist(), 3)
    assert pairs.tolist() == [list(p) for p in expect]


def test_triangle_manifest(tmp_path, triangle):
    grid = BlockGrid.build(3, 1, 1, 1)
    m = run_walk_engine(triangle, WalkConfig(2, 1, 1, 0), tmp_path, grid)
    store = EpisodeSampleStore(m.parent)
    assert store.total_samples == 6
    assert store.episode_total(0) == 6
    assert sum(len(b) for b in store.load_episode(0).values()) == 6
    assert (m.parent / "MANIFEST.done").exists()


def test_blocks_respect_grid(tmp_path, small_graph):
    grid = BlockGrid.build(small_graph.node_count, 1, 2, 3)
    m = run_walk_engine(small_graph, WalkConfig(5, 3, 1, 4, episodes_per_epoch=2), tmp_path, grid)
    store = EpisodeSampleStore(m.parent)
    store.check_grid(grid)
    total = 0
    for s in range(2):
        for (i, j), blk in store.load_episode(s).items():
            total += len(blk)
            if len(blk):
                assert np.all(grid.vertex.part_of(blk[:, 0]) == i)
                assert np.all(grid.context.part_of(blk[:, 1]) == j)
    assert total == store.total_samples
    pairs, _, _ = generate_samples(small_graph, WalkConfig(5, 3, 1, 4, episodes_per_epoch=2))
    assert total == len(pairs)


def test_episode_totals_balanced(tmp_path, small_graph):
    grid = BlockGrid.build(small_graph.node_count, 1, 2, 2)
    m = run_walk_engine(small_graph, WalkConfig(5, 5, 1, 0, episodes_per_epoch=4), tmp_path, grid)
    store = EpisodeSampleStore(m.parent)
    totals = [store.episode_total(s) for s in range(4)]
    assert max(totals) - min(totals) <= grid.shape[0] * grid.shape[1]


def test_degree_order(tmp_path, small_graph):
    grid = BlockGrid.build(small_graph.node_count, 1, 1, 2)
    m = run_walk_engine(small_graph, WalkConfig(3, 2, 1, 0, 3, order="degree"), tmp_path, grid)
    store = EpisodeSampleStore(m.parent)
    assert sum(store.episode_total(s) for s in range(3)) == store.total_samples


def _tree_digest(d):
    h = hashlib.sha256()
    for p in sorted(d.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(d)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_rerun_is_byte_identical(tmp_path, small_graph):
    grid = BlockGrid.build(small_graph.node_count, 1, 2, 2)
    cfg = WalkConfig(5, 5, 2, 17, episodes_per_epoch=2)
    a = run_walk_engine(small_graph, cfg, tmp_path / "a", grid).parent
    b = run_walk_engine(small_graph, cfg, tmp_path / "b", grid).parent
    assert _tree_digest(a) == _tree_digest(b)
    c = run_walk_engine(small_graph, WalkConfig(5, 5, 2, 18, 2), tmp_path / "c", grid).parent
    assert _tree_digest(a) != _tree_digest(c)


def test_block_file_format(tmp_path):
    s = np.array([[1, 2], [3, 4], [5, 6]])
    write_block(tmp_path / "b.bin", s, seed=42)
    raw = (tmp_path / "b.bin").read_bytes()
    assert raw[:4] == b"NEBS" and len(raw) == 24 + 3 * 8
    got, seed = read_block(tmp_path / "b.bin")
    assert got.tolist() == s.tolist() and seed == 42
    (tmp_path / "t.bin").write_bytes(raw[:-4])
    with pytest.raises(ManifestError):
        read_block(tmp_path / "t.bin")


def test_store_guards(tmp_path, small_graph):
    grid = BlockGrid.build(small_graph.node_count, 1, 2, 2)
    m = run_walk_engine(small_graph, WalkConfig(2, 2, 1, 0), tmp_path, grid)
    store = EpisodeSampleStore(m.parent)
    with pytest.raises(ManifestError):
        store.check_grid(BlockGrid.build(small_graph.node_count, 1, 2, 4))
    with pytest.raises(ManifestError):
        store.block_path(0, 99, 0)
    (m.parent / "episode_0" / "block_0_0.bin").unlink()
    with pytest.raises(ManifestError, match="block_0_0"):
        store.load_block(0, 0, 0)
    (m.parent / "MANIFEST.done").unlink()
    with pytest.raises(ManifestError, match="MANIFEST.done"):
        EpisodeSampleStore(m.parent)


def test_io_error_cleans_up(tmp_path, small_graph, monkeypatch):
    import nembed.walker as walker
    grid = BlockGrid.build(small_graph.node_count, 1, 1, 2)
    calls = {"n": 0}
    real = walker.write_block

    def flaky(path, *a, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise OSError(28, "No space left on device")
        return real(path, *a, **kw)

    monkeypatch.setattr(walker, "write_block", flaky)
    with pytest.raises(OSError, match="block_1_0"):
        run_walk_engine(small_graph, WalkConfig(2, 2, 1, 0), tmp_path, grid)
    assert not any(tmp_path.iterdir())


def test_walk_config_validation():
    for bad in (dict(walk_distance=0), dict(context_length=0), dict(walks_per_node=0),
                dict(episodes_per_epoch=0), dict(order="bfs")):
        with pytest.raises(ValueError):
            WalkConfig(**bad)
