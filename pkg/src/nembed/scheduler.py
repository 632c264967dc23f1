"""Hierarchical episode schedule: fixed context partitions, rotating vertex sub-parts.

Worker ``w = node * G + g`` keeps context partition ``w`` for the whole
episode.  Sub-part ``x = origin_worker * k + slot``.  Steps are ordered as
``N`` macro-rounds x ``G`` intra-node rotations x ``k`` slots.  At macro-round
``r``, rotation ``q``, slot ``s`` worker ``(n, g)`` trains slot ``s`` of the
sub-parts that started on worker ``g - q`` of node ``n - r`` (both mod their
ring sizes).  After training, a sub-part moves to the next worker on the
intra-node ring; after its last rotation on a node it moves to the next node
of the inter-node ring, landing on the worker where its next round begins.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ManifestError
from .graph import BlockGrid

INTRA = "intra-ring"
INTER = "inter-ring"
STAGED = "host-staged"


@dataclass(frozen=True)
class ClusterShape:
    num_nodes: int = 1
    workers_per_node: int = 1
    subparts: int = 4
    sockets_per_node: int = 1

    def __post_init__(self):
        if min(self.num_nodes, self.workers_per_node, self.subparts, self.sockets_per_node) < 1:
            raise ValueError("all cluster shape fields must be >= 1")
        if self.sockets_per_node > self.workers_per_node:
            raise ValueError("more sockets than workers on a node")

    @property
    def num_workers(self) -> int:
        return self.num_nodes * self.workers_per_node

    @property
    def num_subparts(self) -> int:
        return self.num_workers * self.subparts

    @property
    def num_steps(self) -> int:
        return self.num_workers * self.subparts

    def node_of(self, worker: int) -> int:
        return worker // self.workers_per_node

    def socket_of(self, worker: int) -> int:
        g = worker % self.workers_per_node
        return g * self.sockets_per_node // self.workers_per_node


class Assignment(NamedTuple):
    subpart: int
    context: int

    @property
    def block(self) -> tuple[int, int]:
        return self.subpart, self.context


class Transfer(NamedTuple):
    subpart: int
    src: int
    dst: int
    kind: str


class StepIndex(NamedTuple):
    macro_round: int
    rotation: int
    slot: int


@dataclass(frozen=True)
class RingTopology:
    intra: tuple[tuple[int, ...], ...]  # per node, cyclic worker order
    inter: tuple[int, ...]  # cyclic node order

    @classmethod
    def for_shape(cls, shape: ClusterShape) -> "RingTopology":
        G = shape.workers_per_node
        intra = tuple(tuple(n * G + g for g in range(G)) for n in range(shape.num_nodes))
        return cls(intra, tuple(range(shape.num_nodes)))


def ring_neighbors(t: RingTopology, worker: int) -> tuple[int, int]:
    """``(prev, next)`` of ``worker`` on its intra-node ring."""
    for ring in t.intra:
        if worker in ring:
            i = ring.index(worker)
            return ring[(i - 1) % len(ring)], ring[(i + 1) % len(ring)]
    raise LookupError(f"worker {worker} not in topology")


def inter_neighbors(t: RingTopology, node: int) -> tuple[int, int]:
    if node not in t.inter:
        raise LookupError(f"node {node} not in topology")
    i = t.inter.index(node)
    return t.inter[(i - 1) % len(t.inter)], t.inter[(i + 1) % len(t.inter)]


@dataclass(frozen=True)
class EpisodePlan:
    shape: ClusterShape
    steps: tuple[tuple[Assignment, ...], ...]  # steps[t][worker]
    transfers: tuple[tuple[Transfer, ...], ...]  # issued after training step t
    topology: RingTopology = field(repr=False, default=None)

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    def step_index(self, t: int) -> StepIndex:
        k, G = self.shape.subparts, self.shape.workers_per_node
        return StepIndex(t // (G * k), (t // k) % G, t % k)

    def outgoing(self, t: int, worker: int) -> Transfer | None:
        for tr in self.transfers[t]:
            if tr.src == worker:
                return tr
        return None

    def first_use(self) -> dict[int, int]:
        """Step at which each sub-part is first trained."""
        seen = {}
        for t, step in enumerate(self.steps):
            for a in step:
                seen.setdefault(a.subpart, t)
        return seen

    def dump(self) -> str:
        lines = ["# step worker subpart context block_i block_j"]
        for t, step in enumerate(self.steps):
            for w, a in enumerate(step):
                lines.append(f"{t} {w} {a.subpart} {a.context} {a.subpart} {a.context}")
        lines.append("# transfers: step subpart from to kind")
        for t, trs in enumerate(self.transfers):
            for tr in trs:
                lines.append(f"T {t} {tr.subpart} {tr.src} {tr.dst} {tr.kind}")
        return "\n".join(lines) + "\n"


def build_schedule(shape: ClusterShape) -> EpisodePlan:
    N, G, k = shape.num_nodes, shape.workers_per_node, shape.subparts
    topo = RingTopology.for_shape(shape)
    steps, transfers = [], []
    for r in range(N):
        for q in range(G):
            for s in range(k):
                row, moves = [], []
                for n in range(N):
                    for g in range(G):
                        w = n * G + g
                        origin = ((n - r) % N) * G + (g - q) % G
                        x = origin * k + s
                        row.append(Assignment(x, w))
                        if q < G - 1:
                            dst = n * G + (g + 1) % G
                            kind = INTRA if shape.socket_of(w) == shape.socket_of(dst) else STAGED
                            moves.append(Transfer(x, w, dst, kind))
                        elif r < N - 1:
                            # after G-1 hops the set is one hop short of home; land where round r+1 starts
                            moves.append(Transfer(x, w, ((n + 1) % N) * G + (g + 1) % G, INTER))
                steps.append(tuple(row))
                transfers.append(tuple(moves))
    return EpisodePlan(shape, tuple(steps), tuple(transfers), topo)


class BlockRef(NamedTuple):
    i: int
    j: int
    path: object = None
    count: int | None = None


def blocks_for_step(plan: EpisodePlan, step: int, grid: BlockGrid, store=None, episode: int = 0) -> dict[int, BlockRef]:
    """Sample block each worker trains at ``step``, resolved against ``store`` if given."""
    shape = plan.shape
    if grid.shape != (shape.num_subparts, shape.num_workers):
        raise ManifestError(
            f"grid {grid.shape} does not match plan ({shape.num_subparts} sub-parts, {shape.num_workers} workers)")
    out = {}
    for w, a in enumerate(plan.steps[step]):
        if store is None:
            out[w] = BlockRef(a.subpart, a.context)
        else:
            path = store.block_path(episode, a.subpart, a.context)
            out[w] = BlockRef(a.subpart, a.context, path, store.block_counts(episode)[a.block])
    return out
