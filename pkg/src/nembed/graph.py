"""Graph storage (CSR), edge-list IO and contiguous-range partitioning."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EdgeListFormatError, EdgeListParseError

BINARY_MAGIC = b"NEBG"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sBBHQ")  # 16 bytes

_ID_DTYPES = {4: np.dtype("<u4"), 8: np.dtype("<u8")}


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed graph in compressed sparse row layout.

    Targets inside each row are sorted, so two graphs built from the same
    edge multiset compare equal regardless of input order.
    """

    node_count: int
    offsets: np.ndarray  # int64[node_count + 1]
    targets: np.ndarray  # uint32 / uint64 [edge_count]
    directed: bool = True

    def __post_init__(self):
        if len(self.offsets) != self.node_count + 1:
            raise ValueError("offsets must have node_count + 1 entries")
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.targets):
            raise ValueError("offsets do not span the target array")
        if np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must be non-decreasing")
        if len(self.targets) and int(self.targets.max()) >= self.node_count:
            raise ValueError("target id out of range")
        self.offsets.setflags(write=False)
        self.targets.setflags(write=False)

    @property
    def edge_count(self) -> int:
        return len(self.targets)

    @property
    def id_width(self) -> int:
        return self.targets.dtype.itemsize

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def neighbors(self, v: int) -> np.ndarray:
        return self.targets[self.offsets[v]:self.offsets[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        i = np.searchsorted(row, v)
        return bool(i < len(row) and row[i] == v)

    def edges(self) -> np.ndarray:
        """All edges as an (edge_count, 2) int64 array in CSR order."""
        src = np.repeat(np.arange(self.node_count, dtype=np.int64), self.out_degrees())
        return np.column_stack([src, self.targets.astype(np.int64)])

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and self.directed == other.directed
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.targets, other.targets)
        )

    @classmethod
    def from_edges(cls, edges, node_count=None, *, symmetrize=False, id_width=4) -> "Graph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges) and edges.min() < 0:
            raise ValueError("node ids must be non-negative")
        if node_count is None:
            node_count = int(edges.max()) + 1 if len(edges) else 0
        elif len(edges) and edges.max() >= node_count:
            raise ValueError("edge endpoint >= node_count")
        if id_width not in _ID_DTYPES:
            raise ValueError("id_width must be 4 or 8")
        if id_width == 4 and node_count > 2**32:
            raise EdgeListFormatError("node ids exceed 32-bit id width")
        if symmetrize and len(edges):
            edges = np.concatenate([edges, edges[:, ::-1]])
            edges = np.unique(edges, axis=0)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
        counts = np.bincount(edges[:, 0], minlength=node_count) if node_count else np.zeros(0, np.int64)
        offsets = np.zeros(node_count + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        targets = edges[:, 1].astype(_ID_DTYPES[id_width])
        return cls(node_count, offsets, targets, directed=not symmetrize)


def _parse_text(path: Path, id_width: int) -> np.ndarray:
    raw = path.read_bytes()
    lines = raw.splitlines()
    keep = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith(b"#")]
    try:
        flat = np.array(b" ".join(keep).split(), dtype=np.uint64)
        ok = len(flat) == 2 * len(keep) and all(len(ln.split()) == 2 for ln in keep)
    except (ValueError, OverflowError):
        ok = False
    if not ok:
        # slow path only to locate the offending line
        for lineno, ln in enumerate(lines, 1):
            s = ln.strip()
            if not s or s.startswith(b"#"):
                continue
            parts = s.split()
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                raise EdgeListParseError(str(path), lineno, ln.decode("utf-8", "replace"))
        raise EdgeListFormatError(f"{path}: id does not fit 64 bits")
    limit = 2**32 if id_width == 4 else 2**63
    if len(flat) and int(flat.max()) >= limit:
        raise EdgeListFormatError(f"{path}: id {int(flat.max())} overflows {id_width * 8}-bit ids")
    return flat.astype(np.int64).reshape(-1, 2)


def _parse_binary(path: Path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise EdgeListFormatError(f"{path}: truncated header")
        magic, version, width, _, count = _HEADER.unpack(head)
        if magic != BINARY_MAGIC or version != BINARY_VERSION:
            raise EdgeListFormatError(f"{path}: bad magic/version {magic!r} v{version}")
        if width not in _ID_DTYPES:
            raise EdgeListFormatError(f"{path}: id width {width} not in (4, 8)")
        data = np.fromfile(fh, dtype=_ID_DTYPES[width], count=2 * count)
    if len(data) != 2 * count:
        raise EdgeListFormatError(f"{path}: expected {count} edges, found {len(data) // 2}")
    if width == 8 and len(data) and int(data.max()) >= 2**63:
        raise EdgeListFormatError(f"{path}: id overflows signed 64-bit range")
    return data.astype(np.int64).reshape(-1, 2), width


def load_edge_list(path, format="text", *, symmetrize=False, id_width=4) -> Graph:
    """Read a text or binary edge list into a :class:`Graph`.

    ``node_count`` is one more than the largest id seen.  With ``symmetrize``
    every edge is mirrored and duplicates are dropped.
    """
    path = Path(path)
    if format == "text":
        edges = _parse_text(path, id_width)
    elif format == "binary":
        edges, width = _parse_binary(path)
        if width > id_width and len(edges) and edges.max() >= 2**32:
            raise EdgeListFormatError(f"{path}: ids overflow configured {id_width * 8}-bit width")
    else:
        raise ValueError(f"unknown edge list format {format!r}")
    return Graph.from_edges(edges, symmetrize=symmetrize, id_width=id_width)


def save_edge_list(g_or_edges, path, format="text", *, id_width=None):
    edges = g_or_edges.edges() if isinstance(g_or_edges, Graph) else np.asarray(g_or_edges, dtype=np.int64).reshape(-1, 2)
    path = Path(path)
    if format == "text":
        with open(path, "w", encoding="utf-8") as fh:
            for u, v in edges:
                fh.write(f"{u} {v}\n")
    elif format == "binary":
        if id_width is None:
            id_width = g_or_edges.id_width if isinstance(g_or_edges, Graph) else 4
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, id_width, 0, len(edges)))
            fh.write(edges.astype(_ID_DTYPES[id_width]).tobytes())
    else:
        raise ValueError(f"unknown edge list format {format!r}")


@dataclass(frozen=True, eq=False)
class PartitionMap:
    """Contiguous node-id ranges ``[boundaries[i], boundaries[i+1])``."""

    boundaries: np.ndarray
    has_empty: bool = field(default=False)

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.int64)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2 or b[0] != 0 or np.any(np.diff(b) < 0):
            raise ValueError("boundaries must start at 0 and be non-decreasing")
        if not self.has_empty and np.any(np.diff(b) == 0):
            raise ValueError("empty partition in a map not flagged has_empty")
        b.setflags(write=False)

    @property
    def num_partitions(self) -> int:
        return len(self.boundaries) - 1

    @property
    def node_count(self) -> int:
        return int(self.boundaries[-1])

    def range(self, i: int) -> tuple[int, int]:
        return int(self.boundaries[i]), int(self.boundaries[i + 1])

    def sizes(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def part_of(self, ids):
        """Partition index of each id (vectorised)."""
        ids = np.asarray(ids)
        return np.searchsorted(self.boundaries, ids, side="right") - 1

    def __eq__(self, other):
        return isinstance(other, PartitionMap) and np.array_equal(self.boundaries, other.boundaries)

    def digest(self) -> str:
        return hashlib.sha256(self.boundaries.astype("<i8").tobytes()).hexdigest()[:16]


def split_range(lo: int, hi: int, p: int) -> np.ndarray:
    """Split ``[lo, hi)`` into ``p`` contiguous ranges, remainder to the earlier ones."""
    if p < 1:
        raise ValueError("need at least one partition")
    n = hi - lo
    base, extra = divmod(n, p)
    sizes = np.full(p, base, dtype=np.int64)
    sizes[:extra] += 1
    out = np.empty(p + 1, dtype=np.int64)
    out[0] = lo
    np.cumsum(sizes, out=out[1:])
    out[1:] += lo
    return out


def partition_nodes(g_or_n, p: int) -> PartitionMap:
    n = g_or_n.node_count if isinstance(g_or_n, Graph) else int(g_or_n)
    b = split_range(0, n, p)
    return PartitionMap(b, has_empty=p > n)


def block_of(src: int, dst: int, pm: PartitionMap, dst_pm: PartitionMap | None = None) -> tuple[int, int]:
    """Return ``(i, j)`` with ``src`` in range ``i`` and ``dst`` in range ``j``.

    ``dst_pm`` defaults to ``pm``; the trainer uses a finer map for sources
    (vertex sub-parts) than for destinations (context partitions).
    """
    dst_pm = pm if dst_pm is None else dst_pm
    if not 0 <= src < pm.node_count:
        raise IndexError(f"source id {src} outside [0, {pm.node_count})")
    if not 0 <= dst < dst_pm.node_count:
        raise IndexError(f"destination id {dst} outside [0, {dst_pm.node_count})")
    return int(pm.part_of(src)), int(dst_pm.part_of(dst))


@dataclass(frozen=True)
class BlockGrid:
    """Hierarchical split used by the trainer.

    The node-id space is split across cluster nodes, then across the workers
    of each node, then into ``k`` sub-parts per worker.  ``vertex`` has one
    range per sub-part, ``context`` one per worker; sub-part ``x`` lies inside
    context range ``x // k``.
    """

    vertex: PartitionMap
    context: PartitionMap
    subparts_per_worker: int

    @classmethod
    def build(cls, node_count: int, num_nodes: int, workers_per_node: int, subparts: int) -> "BlockGrid":
        nodes = split_range(0, node_count, num_nodes)
        worker_b = [0]
        for a in range(num_nodes):
            worker_b.extend(split_range(nodes[a], nodes[a + 1], workers_per_node)[1:])
        worker_b = np.array(worker_b, dtype=np.int64)
        sub_b = [0]
        for w in range(len(worker_b) - 1):
            sub_b.extend(split_range(worker_b[w], worker_b[w + 1], subparts)[1:])
        sub_b = np.array(sub_b, dtype=np.int64)
        empty = bool(np.any(np.diff(sub_b) == 0))
        return cls(PartitionMap(sub_b, has_empty=empty),
                   PartitionMap(worker_b, has_empty=bool(np.any(np.diff(worker_b) == 0))),
                   subparts)

    @property
    def shape(self) -> tuple[int, int]:
        return self.vertex.num_partitions, self.context.num_partitions

    def block_of(self, src, dst):
        return block_of(src, dst, self.vertex, self.context)

    def block_ids(self, src, dst):
        return self.vertex.part_of(src), self.context.part_of(dst)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertex.boundaries.astype("<i8").tobytes())
        h.update(b"|")
        h.update(self.context.boundaries.astype("<i8").tobytes())
        return h.hexdigest()[:16]
