"""Memory footprint, arithmetic intensity and pipelined episode-time estimates.

Sizes are reported in binary units (1 GB here = 1024**3 bytes).  With that
convention 1.05e9 nodes x 128 dims x 4 bytes = 500.7 GB.

The edge rows use exact arithmetic: 300e9 edges x 8 bytes is 2.4e12 bytes,
2.18 TB binary.  The 2.24 "TB" figure often quoted for this configuration
is 2235 GiB divided by 1000 (mixed units), and the same reading gives 22.4
for 3e12 augmented edges; :func:`mixed_unit_tb` reproduces it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .scheduler import ClusterShape

GiB = 1024 ** 3


@dataclass(frozen=True)
class CostInputs:
    nodes: float
    edges: float
    augmentation: float = 10.0  # k*l samples per original edge
    dim: int = 128
    id_bytes: int = 4
    real_bytes: int = 4
    negatives: int = 5
    samples: float | None = None  # trained samples; defaults to edges * augmentation

    def __post_init__(self):
        for name in ("nodes", "edges", "augmentation", "dim", "id_bytes", "real_bytes", "negatives"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def sample_count(self) -> float:
        return self.edges * self.augmentation if self.samples is None else self.samples


@dataclass(frozen=True)
class MemoryBreakdown:
    nodes: float
    edges: float
    augmented_edges: float
    vertex_embeddings: float
    context_embeddings: float

    def rows(self):
        return [("nodes", self.nodes), ("edges", self.edges), ("augmented edges", self.augmented_edges),
                ("vertex embeddings", self.vertex_embeddings), ("context embeddings", self.context_embeddings)]

    @property
    def total(self) -> float:
        return sum(v for _, v in self.rows())


def memory_cost(inp: CostInputs) -> MemoryBreakdown:
    """Storage in bytes for topology, augmented samples and both embedding matrices."""
    emb = inp.nodes * inp.dim * inp.real_bytes
    return MemoryBreakdown(
        nodes=inp.nodes * inp.id_bytes,
        edges=inp.edges * 2 * inp.id_bytes,
        augmented_edges=inp.edges * inp.augmentation * 2 * inp.id_bytes,
        vertex_embeddings=emb,
        context_embeddings=emb,
    )


def mixed_unit_tb(n: float) -> float:
    """Bytes -> GiB / 1000, the unit behind the quoted edge-row figures."""
    return n / GiB / 1000


def format_bytes(n: float) -> str:
    for unit, scale in (("TB", 1024 ** 4), ("GB", GiB), ("MB", 1024 ** 2), ("KB", 1024)):
        if n >= scale:
            return f"{n / scale:.2f}{unit}"
    return f"{n:.0f}B"


@dataclass(frozen=True)
class Intensity:
    flops: float
    bytes: float

    @property
    def intensity(self) -> float:
        return self.flops / self.bytes if self.bytes else 0.0


def per_sample_flops(inp: CostInputs) -> float:
    # d FMAs (2d flops) per pair forward, backward about twice that
    return 2 * inp.dim * (1 + inp.negatives) * 3


def per_sample_bytes(inp: CostInputs) -> float:
    # both rows of each of the 1+m pairs, read then written
    return 2 * (1 + inp.negatives) * inp.dim * inp.real_bytes * 2


def arithmetic_intensity(inp: CostInputs) -> Intensity:
    """Totals over all samples; the ratio does not depend on the sample count."""
    n = inp.sample_count
    return Intensity(n * per_sample_flops(inp), n * per_sample_bytes(inp))


@dataclass(frozen=True)
class BandwidthProfile:
    """Bytes/s and seconds per link class; ``inf`` bandwidth means free transfers."""

    intra_p2p: float = math.inf
    cross_socket: float | None = None  # defaults to intra_p2p / penalty
    host_staging: float = math.inf
    inter_node: float = math.inf
    intra_latency: float = 0.0
    host_latency: float = 0.0
    inter_latency: float = 0.0
    cross_socket_penalty: float = 1.3
    disk: float = math.inf

    def __post_init__(self):
        vals = [self.intra_p2p, self.host_staging, self.inter_node, self.disk, self.cross_socket_penalty]
        if self.cross_socket is not None:
            vals.append(self.cross_socket)
        if any(not v > 0 for v in vals) or min(self.intra_latency, self.host_latency, self.inter_latency) < 0:
            raise ValueError("bandwidths must be positive and latencies non-negative")

    def cross_socket_time(self, nbytes: float) -> float:
        if self.cross_socket is not None:
            return self.intra_latency + nbytes / self.cross_socket
        return (self.intra_latency + nbytes / self.intra_p2p) * self.cross_socket_penalty


def _xfer(latency, nbytes, bw):
    return latency + nbytes / bw


@dataclass(frozen=True)
class TimelineEstimate:
    total: float
    stages: dict
    p2p_per_exchange: float
    compute: float
    steps: int


def timeline_estimate(shape: ClusterShape, inp: CostInputs, bw: BandwidthProfile,
                      compute_rate: float) -> TimelineEstimate:
    """Critical-path time of one episode covering all samples.

    Only the per-step sample load (stage 1) and the intra-node ring exchange
    (stage 4) sit on the critical path; stage-in/out, inter-node transfer and
    disk prefetch are hidden behind training and only their excess counts.
    """
    if not compute_rate > 0:
        raise ValueError("compute_rate must be positive")
    W = shape.num_workers
    k = shape.subparts
    G = shape.workers_per_node
    N = shape.num_nodes
    steps = W * k
    n = inp.sample_count
    compute_total = n * per_sample_flops(inp) / compute_rate  # summed over workers
    step_compute = compute_total / W / steps
    sub_bytes = inp.nodes / (W * k) * inp.dim * inp.real_bytes
    block_bytes = n / (W * W * k) * 2 * inp.id_bytes

    load = steps * _xfer(bw.host_latency, block_bytes, bw.host_staging)
    p2p_one = _xfer(bw.intra_latency, sub_bytes, bw.intra_p2p)
    crossings = 0 if G == 1 or shape.sockets_per_node == 1 else shape.sockets_per_node
    # each rotation hand-off is one exchange per sub-part slot; socket crossings pay the penalty
    exchanges = N * (G - 1) * k
    if G > 1:
        share_cross = crossings / G
        p2p = exchanges * ((1 - share_cross) * p2p_one + share_cross * bw.cross_socket_time(sub_bytes))
    else:
        p2p = 0.0
    # stage 6: a sub-part sent after its last rotation is needed k steps later
    inter_one = _xfer(bw.inter_latency, sub_bytes, bw.inter_node)
    hide = (k - 1) * step_compute
    inter_exposed = (N - 1) * max(0.0, inter_one - hide) if N > 1 else 0.0
    # first stage-in and last stage-out are not overlapped
    stage_io = 2 * _xfer(bw.host_latency, sub_bytes, bw.host_staging)
    compute = steps * step_compute
    core = compute + load + p2p + inter_exposed + stage_io
    disk_bytes = n * 2 * inp.id_bytes / W
    disk_exposed = max(0.0, disk_bytes / bw.disk - core)
    total = core + disk_exposed
    stages = {
        1: load,
        2: stage_io / 2,
        3: compute,
        4: p2p,
        5: stage_io / 2,
        6: (N - 1) * inter_one if N > 1 else 0.0,
        7: disk_bytes / bw.disk,
    }
    return TimelineEstimate(total, stages, p2p_one, compute, steps)
