import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nembed.errors import DensityError
from nembed.evaluator import auc, evaluate, gen_negative_pairs, score_pairs, split_edges
from nembed.graph import Graph
from nembed.sgns import EmbeddingMatrix, sgns_score
from conftest import make_graph
from oracles import brute_auc


def test_auc_examples():
    assert auc([0.9], [0.1]) == 1.0
    assert auc([0.5], [0.5]) == 0.5
    assert auc([0.8, 0.4], [0.6, 0.2]) == 0.75
    with pytest.raises(ValueError):
        auc([], [0.1])
    with pytest.raises(ValueError):
        auc([0.1], [])


def test_auc_matches_brute_force_on_1000_sets():
    rng = np.random.default_rng(0)
    for t in range(1000):
        n, m = rng.integers(1, 40, size=2)
        # coarse grid forces many ties
        levels = int(rng.integers(2, 12))
        pos = rng.integers(0, levels, n) / levels
        neg = rng.integers(0, levels, m) / levels
        assert auc(pos, neg) == brute_auc(pos, neg)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
       st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_auc_property_oracle(pos, neg):
    assert auc(pos, neg) == brute_auc(pos, neg)
    # strictly increasing transform (on the observed values) leaves the ranking alone
    levels = np.unique(pos + neg)
    f = lambda x: np.exp(np.searchsorted(levels, x) / 7.0)  # noqa: E731
    assert auc(f(pos), f(neg)) == auc(pos, neg)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=60))
def test_auc_self_is_half(x):
    assert auc(x, x) == 0.5


def test_split_sizes_and_disjointness(small_graph):
    s = split_edges(small_graph, 0.1, 0.05, 3)
    m = small_graph.edge_count
    assert len(s.test) == round(0.1 * m) and len(s.valid) == round(0.05 * m)
    assert len(s.train) + len(s.test) + len(s.valid) == m
    keys = [set(map(tuple, a.tolist())) for a in (s.train, s.test, s.valid)]
    assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
    assert len(s.test_neg) == len(s.test) and len(s.valid_neg) == len(s.valid)
    for u, v in np.concatenate([s.test_neg, s.valid_neg]):
        assert u != v and not small_graph.has_edge(u, v)


def test_split_examples(small_graph):
    s = split_edges(small_graph, 0.0, 0.0, 0)
    assert len(s.train) == small_graph.edge_count and len(s.test) == 0
    a, b = split_edges(small_graph, 0.2, 0.0, 5), split_edges(small_graph, 0.2, 0.0, 5)
    assert np.array_equal(a.test, b.test) and np.array_equal(a.test_neg, b.test_neg)
    with pytest.raises(ValueError, match="no test edges"):
        split_edges(Graph.from_edges([(0, 1), (1, 2)]), 0.01, 0.0, 0)
    with pytest.raises(ValueError):
        split_edges(small_graph, 0.6, 0.5, 0)


def test_youtube_sized_split_count():
    m = 4_945_382
    assert round(0.01 * m) == 49_454
    # a chain with m edges has the same edge count as the dataset
    n = m + 1
    offsets = np.arange(n + 1, dtype=np.int64)
    offsets[-1] = m
    g = Graph(n, offsets, np.arange(1, n, dtype=np.uint32))
    s = split_edges(g, 0.01, 0.0001, 0)
    assert len(s.test) == 49_454
    assert len(s.valid) == 495


def test_negatives_forced_pair():
    n = 4
    edges = [(u, v) for u in range(n) for v in range(n) if u != v and (u, v) != (2, 3)]
    g = Graph.from_edges(edges, n)
    assert gen_negative_pairs(g, 1, 0).tolist() == [[2, 3]]
    assert gen_negative_pairs(g, 0, 0).shape == (0, 2)


def test_negatives_absent_from_graph():
    g = make_graph(300, 3000, 2)
    neg = gen_negative_pairs(g, 2000, 7)
    adj = {(int(u), int(v)) for u, v in g.edges()}
    assert not any((int(u), int(v)) in adj for u, v in neg)
    assert np.all(neg[:, 0] != neg[:, 1])


def test_complete_graph_is_density_error():
    n = 5
    g = Graph.from_edges([(u, v) for u in range(n) for v in range(n) if u != v], n)
    with pytest.raises(DensityError):
        gen_negative_pairs(g, 1, 0)


def test_score_pairs():
    V = EmbeddingMatrix.zeros(5, 3)
    assert np.all(score_pairs([(0, 1), (2, 3)], V, V) == 0.5)
    rng = np.random.default_rng(0)
    V = EmbeddingMatrix(rng.normal(size=(20, 6)).astype(np.float32))
    C = EmbeddingMatrix(rng.normal(size=(20, 6)).astype(np.float32))
    pairs = rng.integers(0, 20, (50, 2))
    s = score_pairs(pairs, V, C)
    assert s.tolist() == [sgns_score(V.values[u], C.values[v]) for u, v in pairs]
    perm = rng.permutation(50)
    assert np.array_equal(score_pairs(pairs[perm], V, C), s[perm])
    vv = score_pairs(pairs, V, C, "vertex-vertex")
    assert vv.tolist() == [sgns_score(V.values[u], V.values[v]) for u, v in pairs]
    with pytest.raises(IndexError):
        score_pairs([(0, 20)], V, C)
    with pytest.raises(ValueError):
        score_pairs(pairs, V, C, "cosine")


def test_zero_embeddings_give_half(small_graph):
    s = split_edges(small_graph, 0.1, 0.0, 1)
    Z = EmbeddingMatrix.zeros(small_graph.node_count, 4)
    assert evaluate(s, Z, Z) == 0.5
