"""Walk engine: random walks, window augmentation, episode-partitioned sample files.

On-disk layout produced by :func:`run_walk_engine`::

    out_dir/epoch_{e}/MANIFEST              key=value summary
    out_dir/epoch_{e}/MANIFEST.done         completion marker, written last
    out_dir/epoch_{e}/degrees.npy           out-degrees for the noise tables
    out_dir/epoch_{e}/episode_{s}/manifest.txt   "i j count" per block
    out_dir/epoch_{e}/episode_{s}/block_{i}_{j}.bin
"""
from __future__ import annotations

import logging
import os
import shutil
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from numba import njit

from ._rng import derive_seed, mix64, next_below, seed_from
from .errors import ManifestError
from .graph import BlockGrid, Graph

log = logging.getLogger(__name__)

SAMPLE_MAGIC = b"NEBS"
SAMPLE_VERSION = 1
_BLOCK_HEADER = struct.Struct("<4sBBHQQ")  # 24 bytes
_ID_DTYPES = {4: np.dtype("<u4"), 8: np.dtype("<u8")}


@dataclass(frozen=True)
class WalkConfig:
    walk_distance: int = 5
    context_length: int = 5
    walks_per_node: int = 1
    seed: int = 0
    episodes_per_epoch: int = 1
    order: str = "shuffle"  # or "degree"

    def __post_init__(self):
        for name in ("walk_distance", "context_length", "walks_per_node", "episodes_per_epoch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.order not in ("shuffle", "degree"):
            raise ValueError(f"unknown walk order {self.order!r}")


# --------------------------------------------------------------------------
# kernels

@njit(cache=True, nogil=True)
def _walk_seed(seed, start, walk_index):
    h = mix64(np.uint64(start) * np.uint64(0x100000001B3) + np.uint64(walk_index))
    return np.uint64(seed) ^ h


@njit(cache=True, nogil=True)
def _walk_into(offsets, targets, start, k, seed, out):
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    v = start
    out[0] = v
    n = 1
    for _ in range(k):
        lo = offsets[v]
        deg = offsets[v + 1] - lo
        if deg == 0:
            break
        v = np.int64(targets[lo + next_below(state, deg)])
        out[n] = v
        n += 1
    return n


@njit(cache=True, nogil=True)
def _walk_all(offsets, targets, starts, walk_idx, k, seed, paths, lengths):
    for t in range(starts.shape[0]):
        lengths[t] = _walk_into(offsets, targets, starts[t], k, _walk_seed(seed, starts[t], walk_idx[t]), paths[t])


@njit(cache=True, nogil=True)
def _augment_all(paths, lengths, l, offsets_out, out):
    for t in range(paths.shape[0]):
        p = offsets_out[t]
        n = lengths[t]
        for i in range(n):
            for d in range(1, l + 1):
                if i + d >= n:
                    break
                out[p, 0] = paths[t, i]
                out[p, 1] = paths[t, i + d]
                p += 1


# --------------------------------------------------------------------------
# single-walk API

def random_walk(g: Graph, start: int, k: int, rng, walk_index: int = 0) -> np.ndarray:
    """Uniform first-order walk of at most ``k`` steps, stopping at sinks.

    ``rng`` is an int seed or a numpy Generator; with an int seed the walk is
    the same one :func:`run_walk_engine` produces for ``(start, walk_index)``.
    """
    if not 0 <= start < g.node_count:
        raise IndexError(f"start node {start} outside graph")
    out = np.empty(k + 1, dtype=np.int64)
    seed = np.uint64(_walk_seed(np.uint64(seed_from(rng)), np.int64(start), np.int64(walk_index)))
    n = _walk_into(g.offsets, g.targets, np.int64(start), k, seed, out)
    return out[:n]


def augment(path, l: int) -> list[tuple[int, int]]:
    """Forward window pairs ``(path[i], path[i+d])`` for ``1 <= d <= l``."""
    if l < 1:
        raise ValueError("context length must be >= 1")
    path = list(path)
    return [(path[i], path[i + d]) for i in range(len(path)) for d in range(1, l + 1) if i + d < len(path)]


def estimate_samples(num_walks: int, k: int, l: int) -> int:
    """Exact pair count for ``num_walks`` full-length walks (``l`` clamped to ``k``)."""
    if k < 1 or l < 1:
        raise ValueError("k and l must be >= 1")
    c = min(l, k)
    return num_walks * (k * c - c * (c - 1) // 2)


# --------------------------------------------------------------------------
# block files

def write_block(path, samples: np.ndarray, seed: int, id_width: int = 4):
    samples = np.asarray(samples).reshape(-1, 2)
    with open(path, "wb") as fh:
        fh.write(_BLOCK_HEADER.pack(SAMPLE_MAGIC, SAMPLE_VERSION, id_width, 0, len(samples), seed & (2**64 - 1)))
        fh.write(samples.astype(_ID_DTYPES[id_width]).tobytes())


def read_block(path) -> tuple[np.ndarray, int]:
    """Return ``(samples int64[n, 2], seed)``."""
    with open(path, "rb") as fh:
        head = fh.read(_BLOCK_HEADER.size)
        if len(head) != _BLOCK_HEADER.size:
            raise ManifestError(f"{path}: truncated block header")
        magic, version, width, _, count, seed = _BLOCK_HEADER.unpack(head)
        if magic != SAMPLE_MAGIC or version != SAMPLE_VERSION or width not in _ID_DTYPES:
            raise ManifestError(f"{path}: not a sample block file")
        data = np.fromfile(fh, dtype=_ID_DTYPES[width], count=2 * count)
    if len(data) != 2 * count:
        raise ManifestError(f"{path}: expected {count} samples, found {len(data) // 2}")
    return data.astype(np.int64).reshape(-1, 2), seed


# --------------------------------------------------------------------------
# engine

def generate_samples(g: Graph, cfg: WalkConfig, epoch: int = 0):
    """All walks and their window pairs, in (start node, walk index) order.

    Returns ``(pairs int64[n, 2], walk_of_pair int64[n], walk_starts)``.
    """
    seed = derive_seed(cfg.seed, epoch)
    n = g.node_count
    w = cfg.walks_per_node
    starts = np.repeat(np.arange(n, dtype=np.int64), w)
    walk_idx = np.tile(np.arange(w, dtype=np.int64), n)
    k = cfg.walk_distance
    paths = np.empty((len(starts), k + 1), dtype=np.int64)
    lengths = np.empty(len(starts), dtype=np.int64)
    if len(starts):
        _walk_all(g.offsets, g.targets, starts, walk_idx, k, np.uint64(seed), paths, lengths)
    l = cfg.context_length
    dd = np.arange(1, l + 1)
    counts = np.clip(lengths[:, None] - dd[None, :], 0, None).sum(axis=1).astype(np.int64)
    offs = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offs[1:])
    pairs = np.empty((int(offs[-1]), 2), dtype=np.int64)
    if len(pairs):
        _augment_all(paths, lengths, l, offs, pairs)
    walk_of = np.repeat(np.arange(len(counts), dtype=np.int64), counts)
    return pairs, walk_of, starts


def _episode_assignment(g, cfg, epoch, pairs, walk_of, starts):
    """Order samples and assign each to an episode; returns (order, episode_of_ordered)."""
    E = cfg.episodes_per_epoch
    rng = np.random.default_rng(derive_seed(cfg.seed, epoch, 0x5EED))
    if cfg.order == "shuffle":
        order = rng.permutation(len(pairs))
        episode = np.arange(len(pairs), dtype=np.int64) % E
        return order, episode
    # degree-guided: walks ranked by descending start degree, dealt to episodes round-robin
    deg = g.out_degrees()[starts]
    walk_rank = np.empty(len(starts), dtype=np.int64)
    walk_rank[np.argsort(-deg, kind="stable")] = np.arange(len(starts))
    ep_of_pair = walk_rank[walk_of] % E
    perm = rng.permutation(len(pairs))
    order = perm[np.argsort(ep_of_pair[perm], kind="stable")]
    return order, ep_of_pair[order]


def _manifest_lines(cfg, grid, epoch, ep_counts, total, id_width):
    lines = [
        "format=nembed-samples",
        f"version={SAMPLE_VERSION}",
        f"epoch={epoch}",
        f"episodes={cfg.episodes_per_epoch}",
        f"vertex_parts={grid.vertex.num_partitions}",
        f"context_parts={grid.context.num_partitions}",
        f"node_count={grid.vertex.node_count}",
        f"partition_hash={grid.digest()}",
        f"id_width={id_width}",
        f"total_samples={total}",
    ]
    lines += [f"walk.{k}={v}" for k, v in asdict(cfg).items()]
    lines += [f"episode_samples.{s}={c}" for s, c in enumerate(ep_counts)]
    return lines


def run_walk_engine(g: Graph, cfg: WalkConfig, out_dir, grid: BlockGrid, epoch: int = 0) -> Path:
    """Walk, augment and write one epoch of block files; return the MANIFEST path.

    Output is staged in a temporary directory and renamed into place, so a
    failure never leaves a partial epoch behind.
    """
    if grid.vertex.node_count != g.node_count:
        raise ValueError("block grid does not match graph node count")
    out_dir = Path(out_dir)
    final = out_dir / f"epoch_{epoch}"
    tmp = out_dir / f".epoch_{epoch}.tmp"
    pairs, walk_of, starts = generate_samples(g, cfg, epoch)
    order, episode = _episode_assignment(g, cfg, epoch, pairs, walk_of, starts)
    pairs = pairs[order]
    seed = derive_seed(cfg.seed, epoch)
    bi, bj = grid.block_ids(pairs[:, 0], pairs[:, 1]) if len(pairs) else (np.zeros(0, np.int64),) * 2
    P, Q = grid.shape
    key = (episode * P + bi) * Q + bj
    id_width = g.id_width
    current = None
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir()
        srt = np.argsort(key, kind="stable")
        bounds = np.searchsorted(key[srt], np.arange(cfg.episodes_per_epoch * P * Q + 1))
        ep_counts = []
        for s in range(cfg.episodes_per_epoch):
            ep_dir = tmp / f"episode_{s}"
            ep_dir.mkdir()
            rows = []
            for i in range(P):
                for j in range(Q):
                    b = (s * P + i) * Q + j
                    sel = srt[bounds[b]:bounds[b + 1]]
                    current = ep_dir / f"block_{i}_{j}.bin"
                    write_block(current, pairs[sel], seed, id_width)
                    rows.append(f"{i} {j} {len(sel)}")
            ep_counts.append(int(bounds[(s + 1) * P * Q] - bounds[s * P * Q]))
            current = ep_dir / "manifest.txt"
            current.write_text("\n".join(rows) + "\n")
        np.save(tmp / "degrees.npy", g.out_degrees().astype(np.int64))
        current = tmp / "MANIFEST"
        current.write_text("\n".join(_manifest_lines(cfg, grid, epoch, ep_counts, len(pairs), id_width)) + "\n")
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
        (final / "MANIFEST.done").write_text("ok\n")
    except OSError as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        raise OSError(exc.errno, f"walk engine failed writing {current}: {exc.strerror}") from exc
    log.info("epoch %d: %d walks, %d samples -> %s", epoch, len(starts), len(pairs), final)
    return final / "MANIFEST"


# --------------------------------------------------------------------------
# reader

def _read_kv(path) -> dict[str, str]:
    out = {}
    for ln in Path(path).read_text().splitlines():
        if ln.strip() and not ln.startswith("#"):
            k, _, v = ln.partition("=")
            out[k.strip()] = v.strip()
    return out


class EpisodeSampleStore:
    """Read side of one epoch directory written by :func:`run_walk_engine`."""

    def __init__(self, epoch_dir):
        self.root = Path(epoch_dir)
        if not self.root.is_dir():
            raise ManifestError(f"missing epoch directory {self.root}")
        if not (self.root / "MANIFEST.done").exists():
            raise ManifestError(f"{self.root}: MANIFEST.done marker missing (incomplete walk output)")
        self.meta = _read_kv(self.root / "MANIFEST")
        self.episodes = int(self.meta["episodes"])
        self.grid_shape = (int(self.meta["vertex_parts"]), int(self.meta["context_parts"]))
        self.partition_hash = self.meta["partition_hash"]
        self.total_samples = int(self.meta["total_samples"])
        self._counts = {}

    @classmethod
    def open(cls, out_dir, epoch: int) -> "EpisodeSampleStore":
        return cls(Path(out_dir) / f"epoch_{epoch}")

    def check_grid(self, grid: BlockGrid):
        if grid.shape != self.grid_shape or grid.digest() != self.partition_hash:
            raise ManifestError(
                f"{self.root}: partition hash {self.partition_hash} {self.grid_shape} does not match "
                f"trainer grid {grid.digest()} {grid.shape}")

    def degrees(self) -> np.ndarray:
        return np.load(self.root / "degrees.npy")

    def episode_dir(self, s: int) -> Path:
        d = self.root / f"episode_{s}"
        if not d.is_dir():
            raise ManifestError(f"missing episode directory {d}")
        return d

    def block_counts(self, s: int) -> dict[tuple[int, int], int]:
        if s not in self._counts:
            counts = {}
            path = self.episode_dir(s) / "manifest.txt"
            if not path.exists():
                raise ManifestError(f"missing episode manifest {path}")
            for ln in path.read_text().split("\n"):
                if ln.strip():
                    i, j, c = map(int, ln.split())
                    counts[(i, j)] = c
            self._counts[s] = counts
        return self._counts[s]

    def block_path(self, s: int, i: int, j: int) -> Path:
        if (i, j) not in self.block_counts(s):
            raise ManifestError(f"block ({i}, {j}) of episode {s} not listed in manifest")
        p = self.root / f"episode_{s}" / f"block_{i}_{j}.bin"
        if not p.exists():
            raise ManifestError(f"missing block file {p}")
        return p

    def load_block(self, s: int, i: int, j: int) -> np.ndarray:
        samples, _ = read_block(self.block_path(s, i, j))
        return samples

    def load_episode(self, s: int) -> dict[tuple[int, int], np.ndarray]:
        return {b: self.load_block(s, *b) for b in self.block_counts(s)}

    def episode_total(self, s: int) -> int:
        return sum(self.block_counts(s).values())
