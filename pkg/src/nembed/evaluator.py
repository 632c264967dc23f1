"""Link-prediction evaluation: edge split, negative pairs, scoring and AUC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.stats import rankdata

from ._rng import derive_seed, next_below
from .errors import DensityError
from .graph import Graph
from .sgns import EmbeddingMatrix, _score_pairs_kernel


@dataclass
class EvalSplit:
    train: np.ndarray  # (n, 2) edges
    test: np.ndarray
    valid: np.ndarray
    test_neg: np.ndarray
    valid_neg: np.ndarray

    def sizes(self) -> dict[str, int]:
        return {k: len(getattr(self, k)) for k in ("train", "test", "valid", "test_neg", "valid_neg")}


def split_edges(g: Graph, test_frac: float, valid_frac: float, seed, *, negatives_from: Graph | None = None) -> EvalSplit:
    """Uniform random edge split plus 1:1 non-edge pairs for test and validation.

    ``negatives_from`` is the graph non-edges are checked against (defaults
    to ``g``; pass the symmetrised graph for undirected data).
    """
    if not (0 <= test_frac < 1 and 0 <= valid_frac < 1 and test_frac + valid_frac < 1):
        raise ValueError("fractions must lie in [0, 1) and sum below 1")
    edges = g.edges()
    m = len(edges)
    n_test = int(round(test_frac * m))
    n_valid = int(round(valid_frac * m))
    if test_frac > 0 and n_test == 0:
        raise ValueError(f"test_frac={test_frac} selects no test edges from a {m}-edge graph")
    perm = np.random.default_rng(derive_seed(seed, 0x5B1)).permutation(m)
    test = edges[np.sort(perm[:n_test])]
    valid = edges[np.sort(perm[n_test:n_test + n_valid])]
    train = edges[np.sort(perm[n_test + n_valid:])]
    full = negatives_from or g
    return EvalSplit(train, test, valid,
                     gen_negative_pairs(full, n_test, derive_seed(seed, 0x7E5)),
                     gen_negative_pairs(full, n_valid, derive_seed(seed, 0x7A1)))


@njit(cache=True)
def _draw_non_edges(offsets, targets, n_nodes, n, seed, limit, out):
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    got = 0
    misses = 0
    while got < n:
        u = next_below(state, n_nodes)
        v = next_below(state, n_nodes)
        hit = u == v
        if not hit:
            lo = offsets[u]
            hi = offsets[u + 1]
            # binary search in the sorted row
            while lo < hi:
                mid = (lo + hi) // 2
                if targets[mid] < v:
                    lo = mid + 1
                else:
                    hi = mid
            hit = lo < offsets[u + 1] and targets[lo] == v
        if hit:
            misses += 1
            if misses >= limit:
                return got
        else:
            misses = 0
            out[got, 0] = u
            out[got, 1] = v
            got += 1
    return got


def gen_negative_pairs(g: Graph, n: int, seed) -> np.ndarray:
    """``n`` uniform pairs ``(u, v)``, ``u != v``, with no edge ``u -> v`` in ``g``."""
    out = np.empty((n, 2), dtype=np.int64)
    if n == 0:
        return out
    if g.node_count < 2:
        raise DensityError("need at least two nodes to draw non-edges")
    got = _draw_non_edges(g.offsets, g.targets, g.node_count, n, np.uint64(derive_seed(seed)), 1000 * n, out)
    if got < n:
        raise DensityError(f"{1000 * n} consecutive rejections after {got} negatives; graph too dense")
    return out


def score_pairs(pairs, vertex: EmbeddingMatrix, context: EmbeddingMatrix, mode="vertex-context") -> np.ndarray:
    """``sigmoid(row_u . row_v)`` per pair; ``mode`` picks the matrix ``v`` is read from."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    other = {"vertex-context": context, "vertex-vertex": vertex}.get(mode)
    if other is None:
        raise ValueError(f"unknown score mode {mode!r}")
    if len(pairs) and (pairs.min() < 0 or pairs[:, 0].max() >= vertex.rows or pairs[:, 1].max() >= other.rows):
        raise IndexError("pair id out of embedding range")
    out = np.empty(len(pairs), dtype=np.float64)
    _score_pairs_kernel(np.ascontiguousarray(pairs[:, 0]), np.ascontiguousarray(pairs[:, 1]),
                        vertex.values, other.values, out)
    return out


def auc(pos_scores, neg_scores) -> float:
    """Rank-based AUC; ties between a positive and a negative count one half."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("auc needs non-empty positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))  # average ranks for ties
    u = ranks[:len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def evaluate(split: EvalSplit, vertex: EmbeddingMatrix, context: EmbeddingMatrix, mode="vertex-context",
             which="test") -> float:
    pos = getattr(split, which)
    neg = getattr(split, f"{which}_neg")
    return auc(score_pairs(pos, vertex, context, mode), score_pairs(neg, vertex, context, mode))
