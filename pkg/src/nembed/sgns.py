"""Skip-gram negative sampling on embedding row blocks.

All numerics funnel through the jitted ``_sgns_step`` so the single-pair
API, the block trainer and the evaluator agree bit for bit.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from ._rng import next_below, next_float, seed_from
from .errors import ScheduleViolation

CLAMP = 30.0
# smallest / largest score after clamping; scores stay strictly inside (EPS, 1 - EPS)
EPS = 1.0 / (1.0 + math.exp(CLAMP)) / 2

EMB_MAGIC = b"NEBE"
EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4sBBHQII")  # 24 bytes


@dataclass
class TrainConfig:
    dim: int = 128
    negatives: int = 5
    lr: float = 0.025
    epochs: int = 1
    seed: int = 0
    deterministic: bool = True
    lr_decay: bool = False
    noise_power: float = 0.75

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.negatives < 0:
            raise ValueError("negatives must be >= 0")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def lr_at(self, epoch: int) -> float:
        """Linear decay from ``lr`` to ``lr / 10`` over the run when enabled."""
        if not self.lr_decay or self.epochs == 1:
            return self.lr
        frac = min(epoch, self.epochs - 1) / (self.epochs - 1)
        return self.lr * (1.0 - 0.9 * frac)


# --------------------------------------------------------------------------
# kernels

@njit(cache=True, nogil=True)
def _sigmoid(x):
    if x > CLAMP:
        x = CLAMP
    elif x < -CLAMP:
        x = -CLAMP
    return 1.0 / (1.0 + math.exp(-x))


@njit(cache=True, nogil=True)
def _dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += float(a[i]) * float(b[i])
    return s


@njit(cache=True, nogil=True)
def _sgns_step(v, c, label, lr):
    """In-place SGD step on one (vertex row, context row) pair; returns the loss."""
    x = _dot(v, c)
    s = _sigmoid(x)
    g = s - label
    step = lr * g
    for i in range(v.shape[0]):
        vi = v[i]
        v[i] = vi - step * c[i]
        c[i] = c[i] - step * vi
    p = s if label > 0.5 else 1.0 - s
    return -math.log(p)


@njit(cache=True, nogil=True)
def _alias_draw(prob, alias, state):
    i = next_below(state, prob.shape[0])
    if next_float(state) < prob[i]:
        return i
    return alias[i]


@njit(cache=True, nogil=True)
def _train_block_kernel(src, dst, V, v_lo, C, c_lo, prob, alias, m, lr, seed):
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    total = 0.0
    for t in range(src.shape[0]):
        vrow = V[src[t] - v_lo]
        total += _sgns_step(vrow, C[dst[t] - c_lo], 1.0, lr)
        for _ in range(m):
            j = _alias_draw(prob, alias, state)
            total += _sgns_step(vrow, C[j], 0.0, lr)
    return total


@njit(cache=True)
def _build_alias(w):
    n = w.shape[0]
    prob = np.zeros(n, dtype=np.float64)
    alias = np.arange(n).astype(np.int64)
    scaled = w * (n / w.sum())
    small = np.empty(n, dtype=np.int64)
    large = np.empty(n, dtype=np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        g = large[nl - 1]
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            nl -= 1
            small[ns] = g
            ns += 1
    # leftovers are 1 up to rounding
    for t in range(nl):
        prob[large[t]] = 1.0
    for t in range(ns):
        prob[small[t]] = 1.0
    return prob, alias


@njit(cache=True, nogil=True)
def _score_pairs_kernel(u, v, A, B, out):
    for t in range(u.shape[0]):
        out[t] = _sigmoid(_dot(A[u[t]], B[v[t]]))


# --------------------------------------------------------------------------
# public API

def sgns_score(v_row, c_row) -> float:
    """Logistic score of a vertex/context pair, with the dot product clamped to +-30."""
    v_row = np.asarray(v_row)
    c_row = np.asarray(c_row)
    if v_row.shape != c_row.shape:
        raise ValueError("rows must have equal length")
    return float(_sigmoid(_dot(v_row, c_row)))


def sgns_loss(v_row, c_row, label) -> float:
    s = sgns_score(v_row, c_row)
    return -math.log(s if label else 1.0 - s)


def sgns_update(v_row, c_row, label, lr):
    """Return updated copies ``(v', c')`` after one SGD step on the logistic loss.

    ``g = sigmoid(v.c) - label``; ``v' = v - lr*g*c`` and ``c' = c - lr*g*v``
    with the pre-update ``v``.  Arithmetic is done in the rows' dtype.
    """
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    v = np.array(v_row, copy=True)
    c = np.array(c_row, copy=True)
    if v.shape != c.shape or v.ndim != 1:
        raise ValueError("rows must be 1-d and of equal length")
    if v.dtype != c.dtype:
        c = c.astype(v.dtype)
    _sgns_step(v, c, float(label), float(lr))
    return v, c


@dataclass(frozen=True)
class NoiseTable:
    """Alias tables over node ids ``offset .. offset + n - 1``."""

    prob: np.ndarray
    alias: np.ndarray
    offset: int = 0

    def __len__(self):
        return len(self.prob)

    def distribution(self) -> np.ndarray:
        """Exact sampling distribution implied by the tables."""
        n = len(self.prob)
        p = self.prob.copy()
        np.add.at(p, self.alias, 1.0 - self.prob)
        return p / n


def build_noise_table(degrees, power: float = 0.75, offset: int = 0) -> NoiseTable:
    """Alias table sampling node ``i`` with weight ``degree[i] ** power``.

    Falls back to uniform when every degree is zero.
    """
    w = np.asarray(degrees, dtype=np.float64)
    if w.ndim != 1 or len(w) == 0:
        raise ValueError("need at least one node")
    if np.any(w < 0):
        raise ValueError("degrees must be non-negative")
    w = np.power(w, power)
    w[np.asarray(degrees) == 0] = 0.0
    if not w.sum() > 0:
        w = np.ones_like(w)
    prob, alias = _build_alias(w)
    return NoiseTable(prob, alias, int(offset))


def negative_sample(table: NoiseTable, rng, m: int) -> np.ndarray:
    """``m`` independent draws from ``table``; ``rng`` is a numpy Generator."""
    if m < 0:
        raise ValueError("m must be >= 0")
    n = len(table)
    idx = rng.integers(0, n, size=m)
    keep = rng.random(size=m) < table.prob[idx]
    out = np.where(keep, idx, table.alias[idx])
    return out.astype(np.int64) + table.offset


@dataclass
class EmbeddingMatrix:
    """Row-major float32 rows; ``offset`` is the global id of row 0."""

    values: np.ndarray
    offset: int = 0

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("embedding values must be 2-d")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def row_range(self) -> tuple[int, int]:
        return self.offset, self.offset + self.rows

    def view(self, lo: int, hi: int) -> "EmbeddingMatrix":
        a, b = lo - self.offset, hi - self.offset
        if a < 0 or b > self.rows or a > b:
            raise IndexError(f"rows [{lo}, {hi}) outside [{self.offset}, {self.offset + self.rows})")
        return EmbeddingMatrix(self.values[a:b], lo)

    def copy(self) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.values.copy(), self.offset)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    @classmethod
    def zeros(cls, rows: int, dim: int) -> "EmbeddingMatrix":
        return cls(np.zeros((rows, dim), dtype=np.float32))

    @classmethod
    def init_vertex(cls, rows: int, dim: int, seed) -> "EmbeddingMatrix":
        rng = np.random.default_rng(seed)
        vals = rng.uniform(-0.5 / dim, 0.5 / dim, size=(rows, dim)).astype(np.float32)
        return cls(vals)

    def save(self, path):
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(_EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, 4, 0, self.rows, self.dim, 0))
            fh.write(np.ascontiguousarray(self.values, dtype="<f4").tobytes())

    def save_text(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for i, row in enumerate(self.values):
                fh.write(f"{i + self.offset} " + " ".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingMatrix":
        with open(path, "rb") as fh:
            head = fh.read(_EMB_HEADER.size)
            if len(head) != _EMB_HEADER.size:
                raise ValueError(f"{path}: truncated embedding header")
            magic, version, width, _, rows, dim, _ = _EMB_HEADER.unpack(head)
            if magic != EMB_MAGIC or version != EMB_VERSION or width != 4:
                raise ValueError(f"{path}: not a float32 NEBE file")
            vals = np.fromfile(fh, dtype="<f4", count=rows * dim)
        if len(vals) != rows * dim:
            raise ValueError(f"{path}: expected {rows * dim} values, got {len(vals)}")
        return cls(vals.reshape(rows, dim).astype(np.float32))


@dataclass(frozen=True)
class TrainStats:
    samples: int
    mean_loss: float


def train_block(samples, vertex_subpart: EmbeddingMatrix, context_part: EmbeddingMatrix,
                noise: NoiseTable, cfg: TrainConfig, rng, lr=None) -> TrainStats:
    """Train one sample block in order: a positive step then ``m`` negatives per sample.

    Negatives are drawn from ``noise``, which must cover exactly the rows of
    ``context_part``.  Any sample whose endpoints fall outside the given row
    ranges raises :class:`ScheduleViolation`.
    """
    samples = np.asarray(samples).reshape(-1, 2)
    if len(samples) == 0:
        return TrainStats(0, 0.0)
    src = np.ascontiguousarray(samples[:, 0], dtype=np.int64)
    dst = np.ascontiguousarray(samples[:, 1], dtype=np.int64)
    v_lo, v_hi = vertex_subpart.row_range
    c_lo, c_hi = context_part.row_range
    if src.min() < v_lo or src.max() >= v_hi:
        raise ScheduleViolation(f"source rows [{src.min()}, {src.max()}] outside vertex sub-part [{v_lo}, {v_hi})",
                                row_range=(v_lo, v_hi))
    if dst.min() < c_lo or dst.max() >= c_hi:
        raise ScheduleViolation(f"context rows [{dst.min()}, {dst.max()}] outside context partition [{c_lo}, {c_hi})",
                                row_range=(c_lo, c_hi))
    if cfg.negatives and (noise.offset != c_lo or len(noise) != c_hi - c_lo):
        raise ScheduleViolation("noise table does not match the resident context partition",
                                row_range=(c_lo, c_hi))
    total = _train_block_kernel(src, dst, vertex_subpart.values, v_lo, context_part.values, c_lo,
                                noise.prob, noise.alias, cfg.negatives,
                                float(cfg.lr if lr is None else lr), np.uint64(seed_from(rng)))
    return TrainStats(len(src), total / len(src))
