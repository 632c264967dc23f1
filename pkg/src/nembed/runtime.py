"""Threaded execution of an episode plan with the 7-stage pipeline.

Worker threads stand in for GPUs.  The caller's vertex/context matrices play
the role of host memory: each worker copies its context partition in once,
stages its home sub-parts in, trains them, and passes sub-part buffers along
the rings through :class:`CommChannel` objects whose copy engines run on
their own threads (so transfers overlap training).  Pipeline stages:

    1 load block samples into the worker      2 stage sub-part out to host
    3 train                                   4 intra-node ring transfer
    5 stage sub-part in from host             6 inter-node transfer
    7 prefetch next episode's samples from disk

Training kernels release the GIL, so workers genuinely run in parallel on
multi-core machines.
"""
from __future__ import annotations

import logging
import math
import queue
import threading
import time
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import derive_seed
from .errors import ChannelClosed, ManifestError, OwnershipError, ScheduleViolation
from .graph import BlockGrid
from .scheduler import INTER, STAGED, EpisodePlan
from .sgns import EmbeddingMatrix, NoiseTable, TrainConfig, build_noise_table, train_block

log = logging.getLogger(__name__)

STAGE_NAMES = {
    1: "load samples",
    2: "stage out",
    3: "train",
    4: "p2p",
    5: "stage in",
    6: "inter-node",
    7: "prefetch",
}

P2P = "intra-p2p"
CROSS_SOCKET = "cross-socket-staged"
INTER_NODE = "inter-node"
IO_WORKER = -1


# --------------------------------------------------------------------------
# timeline

@dataclass(frozen=True)
class StageEvent:
    worker: int
    stage: int
    subpart: int
    t_start: int
    t_end: int
    step: int = -1


class StageTimeline:
    """Thread-safe event log with nanosecond timestamps relative to creation."""

    def __init__(self):
        self.events: list[StageEvent] = []
        self._lock = threading.Lock()
        self._t0 = time.perf_counter_ns()

    def now(self) -> int:
        return time.perf_counter_ns() - self._t0

    def record(self, worker, stage, subpart, t_start, t_end, step=-1):
        if stage not in STAGE_NAMES:
            raise ValueError(f"unknown stage {stage}")
        with self._lock:
            self.events.append(StageEvent(worker, stage, subpart, t_start, t_end, step))

    @contextmanager
    def span(self, worker, stage, subpart=-1, step=-1):
        t = self.now()
        try:
            yield
        finally:
            self.record(worker, stage, subpart, t, self.now(), step)

    def intervals(self, stage, worker=None):
        return sorted((e.t_start, e.t_end) for e in self.events
                      if e.stage == stage and (worker is None or e.worker == worker))

    def wall_time_ns(self) -> int:
        if not self.events:
            return 0
        return max(e.t_end for e in self.events) - min(e.t_start for e in self.events)

    def dump(self) -> str:
        """One ``worker stage subpart t_start_ns t_end_ns`` line per event."""
        evs = sorted(self.events, key=lambda e: (e.t_start, e.worker, e.stage))
        return "".join(f"{e.worker} {e.stage} {e.subpart} {e.t_start} {e.t_end}\n" for e in evs)

    def save(self, path):
        Path(path).write_text(self.dump())

    @classmethod
    def parse(cls, text: str) -> "StageTimeline":
        tl = cls()
        for ln in text.splitlines():
            if ln.strip():
                w, s, x, a, b = map(int, ln.split())
                tl.record(w, s, x, a, b)
        return tl


def validate_timeline(tl: StageTimeline) -> list[str]:
    """Structural problems in ``tl``; empty when the timeline is well formed."""
    problems = []
    for e in tl.events:
        if e.stage not in STAGE_NAMES:
            problems.append(f"bad stage {e.stage}")
        if e.t_end < e.t_start:
            problems.append(f"event ends before it starts: {e}")
    for w in {e.worker for e in tl.events}:
        iv = tl.intervals(3, w)
        for (a0, a1), (b0, b1) in zip(iv, iv[1:]):
            if b0 < a1:
                problems.append(f"worker {w}: overlapping training intervals {(a0, a1)} {(b0, b1)}")
    return problems


def inter_node_overlap(tl: StageTimeline) -> tuple[int, int]:
    """``(hidden, total)`` stage-6 events; hidden ones intersect some training interval."""
    train = tl.intervals(3)
    inter = tl.intervals(6)
    hidden = sum(1 for a, b in inter if any(s < b and a < e for s, e in train))
    return hidden, len(inter)


# --------------------------------------------------------------------------
# communication

@dataclass
class ChannelProfile:
    """Simulated link parameters; bandwidths in bytes/s, latencies in seconds."""

    intra_latency: float = 0.0
    intra_bandwidth: float = math.inf
    cross_socket_penalty: float = 1.3
    inter_latency: float = 0.0
    inter_bandwidth: float = math.inf
    jitter: float = 0.0
    seed: int = 0

    def channel(self, kind, timeline=None, name="") -> "CommChannel":
        if kind == INTER_NODE:
            return CommChannel(kind, self.inter_latency, self.inter_bandwidth, 1.0, timeline,
                               jitter=self.jitter, seed=derive_seed(self.seed, zlib.crc32(name.encode())), name=name)
        penalty = self.cross_socket_penalty if kind == CROSS_SOCKET else 1.0
        return CommChannel(kind, self.intra_latency, self.intra_bandwidth, penalty, timeline,
                           jitter=self.jitter, seed=derive_seed(self.seed, zlib.crc32(name.encode())), name=name)


class Receipt:
    def __init__(self, subpart, nbytes):
        self.subpart = subpart
        self.nbytes = nbytes
        self.hops = 0
        self.sim_time = 0.0
        self.payload = None
        self.error = None
        self._done = threading.Event()

    def wait(self, timeout=None) -> "Receipt":
        if not self._done.wait(timeout):
            raise TimeoutError(f"sub-part {self.subpart} not delivered")
        if self.error is not None:
            raise self.error
        return self

    @property
    def delivered(self) -> bool:
        return self._done.is_set()


class CommChannel:
    """FIFO, exactly-once, point-to-point link with a dedicated copy thread.

    A lone transfer takes ``(latency + nbytes / bandwidth) * penalty`` seconds
    of wall time.  Back-to-back messages queue on the wire for their
    ``nbytes / bandwidth`` share only; latency is pipelined.  Staged kinds
    copy through an intermediate host buffer.
    """

    def __init__(self, kind, latency=0.0, bandwidth=math.inf, penalty=1.0, timeline=None,
                 *, jitter=0.0, seed=0, name=""):
        if kind not in (P2P, CROSS_SOCKET, INTER_NODE):
            raise ValueError(f"unknown channel kind {kind!r}")
        if latency < 0 or not bandwidth > 0 or penalty < 1.0:
            raise ValueError("latency must be >= 0, bandwidth > 0, penalty >= 1")
        self.kind = kind
        self.latency = latency
        self.bandwidth = bandwidth
        self.penalty = penalty
        self.timeline = timeline
        self.jitter = jitter
        self.name = name
        self._rng = np.random.default_rng(seed)
        self._q: queue.SimpleQueue = queue.SimpleQueue()
        self._wire_free = 0.0  # perf_counter time the wire finishes its last message
        self._closed = False
        self._thread = threading.Thread(target=self._run, name=f"chan-{name or kind}", daemon=True)
        self._thread.start()

    def transfer_time(self, nbytes: int) -> float:
        return (self.latency + nbytes / self.bandwidth) * self.penalty

    @property
    def hops(self) -> int:
        return 1 if self.kind == P2P else 2

    def send(self, payload: np.ndarray, deliver, *, subpart=-1, sender=-1, step=-1) -> Receipt:
        if self._closed:
            raise ChannelClosed(f"channel {self.name} closed")
        r = Receipt(subpart, payload.nbytes)
        self._q.put((payload, deliver, r, sender, step, time.perf_counter()))
        return r

    def close(self):
        if not self._closed:
            self._closed = True
            self._q.put(None)

    def join(self, timeout=None):
        self._thread.join(timeout)

    def _delay(self, nbytes, t_sent):
        """Seconds to wait from now until a message sent at ``t_sent`` lands."""
        wire = nbytes / self.bandwidth * self.penalty
        if self.jitter:
            wire += float(self._rng.uniform(0, self.jitter))
        self._wire_free = max(self._wire_free, t_sent) + wire
        arrive = self._wire_free + self.latency * self.penalty
        return arrive - t_sent, max(0.0, arrive - time.perf_counter())

    def _run(self):
        while True:
            item = self._q.get()
            if item is None:
                return
            payload, deliver, r, sender, step, t_sent = item
            try:
                t0 = self.timeline.now() if self.timeline else 0
                if self.kind == P2P:
                    sim, wait = self._delay(payload.nbytes, t_sent)
                    if wait > 0:
                        time.sleep(wait)
                    out = payload.copy()
                else:
                    staging = payload.copy()  # device -> host
                    if self.kind == INTER_NODE and self.timeline:
                        t1 = self.timeline.now()
                        self.timeline.record(sender, 2, r.subpart, t0, t1, step)
                        t0 = t1
                    sim, wait = self._delay(payload.nbytes, t_sent)
                    if wait > 0:
                        time.sleep(wait)
                    # inter-node delivers into host memory; the receiver stages it in (stage 5)
                    out = staging if self.kind == INTER_NODE else staging.copy()
                if self.timeline:
                    self.timeline.record(sender, 6 if self.kind == INTER_NODE else 4, r.subpart, t0,
                                         self.timeline.now(), step)
                r.hops = self.hops
                r.sim_time = sim
                r.payload = out
                deliver(out)
            except BaseException as exc:  # surfaces through Receipt.wait
                r.error = exc
            finally:
                r._done.set()


class Mailbox:
    """Keyed inbox; ``take`` blocks until the requested sub-part arrives."""

    def __init__(self):
        self._items = {}
        self._cv = threading.Condition()
        self._closed = False

    def put(self, key, item):
        with self._cv:
            if key in self._items:
                raise OwnershipError(f"sub-part {key} delivered twice")
            self._items[key] = item
            self._cv.notify_all()

    def take(self, key, timeout=None):
        with self._cv:
            ok = self._cv.wait_for(lambda: key in self._items or self._closed, timeout)
            if key in self._items:
                return self._items.pop(key)
            if self._closed:
                raise ChannelClosed(f"mailbox closed while waiting for sub-part {key}")
            if not ok:
                raise TimeoutError(f"sub-part {key} did not arrive")

    def close(self):
        with self._cv:
            self._closed = True
            self._cv.notify_all()


HOST = "host"
IN_FLIGHT = "in-flight"


class OwnershipRegistry:
    """Who holds each vertex sub-part: a worker id, ``host`` or ``in-flight``."""

    def __init__(self):
        self._owner = {}
        self._lock = threading.Lock()

    def owner(self, subpart):
        with self._lock:
            return self._owner.get(subpart, HOST)

    def stage_in(self, subpart, worker):
        with self._lock:
            cur = self._owner.get(subpart, HOST)
            if cur != HOST:
                raise OwnershipError(f"worker {worker} staged in sub-part {subpart} held by {cur}")
            self._owner[subpart] = worker

    def begin_send(self, subpart, worker):
        with self._lock:
            cur = self._owner.get(subpart, HOST)
            if cur != worker:
                raise OwnershipError(f"worker {worker} sent sub-part {subpart} held by {cur}")
            self._owner[subpart] = IN_FLIGHT

    def deliver(self, subpart, worker):
        with self._lock:
            if self._owner.get(subpart) != IN_FLIGHT:
                raise OwnershipError(f"sub-part {subpart} delivered without a send")
            self._owner[subpart] = worker

    def stage_out(self, subpart, worker):
        with self._lock:
            if self._owner.get(subpart) != worker:
                raise OwnershipError(f"worker {worker} staged out sub-part {subpart} it does not hold")
            self._owner[subpart] = HOST


class WriteTracker:
    """Debug check that no two workers write the same global rows at once."""

    def __init__(self):
        self._held = {}  # (matrix, lo, hi) -> worker
        self._lock = threading.Lock()
        self.max_concurrent = 0

    @contextmanager
    def writing(self, worker, matrix, lo, hi):
        with self._lock:
            for (m, a, b), w in self._held.items():
                if m == matrix and a < hi and lo < b and w != worker:
                    raise OwnershipError(f"worker {worker} writes {matrix} rows [{lo}, {hi}) held by worker {w}")
            key = (matrix, lo, hi)
            self._held[key] = worker
            self.max_concurrent = max(self.max_concurrent, len(self._held))
        try:
            yield
        finally:
            with self._lock:
                self._held.pop(key, None)


@dataclass
class Worker:
    wid: int
    node: int
    context: EmbeddingMatrix  # private, resident for the episode
    noise: NoiseTable
    mailbox: Mailbox = field(default_factory=Mailbox)
    buffers: list = field(default_factory=lambda: [None, None])  # ping-pong
    trained: int = 0
    loss_sum: float = 0.0


def exchange_subpart(registry: OwnershipRegistry, src: Worker, dst: Worker, subpart: int,
                     buffer: EmbeddingMatrix, ch: CommChannel, step: int = -1) -> Receipt:
    """Hand ``subpart`` from ``src`` to ``dst`` over ``ch``; returns immediately.

    Ownership leaves ``src`` at send time and reaches ``dst`` on delivery, so
    a second send of the same sub-part raises :class:`OwnershipError`.
    """
    registry.begin_send(subpart, src.wid)
    offset = buffer.offset

    def deliver(arr):
        registry.deliver(subpart, dst.wid)
        dst.mailbox.put(subpart, (EmbeddingMatrix(arr, offset), ch.kind == INTER_NODE))

    return ch.send(buffer.values, deliver, subpart=subpart, sender=src.wid, step=step)


# --------------------------------------------------------------------------
# episode execution

def build_context_noise(degrees, grid: BlockGrid, power=0.75) -> list[NoiseTable]:
    tables = []
    for j in range(grid.context.num_partitions):
        lo, hi = grid.context.range(j)
        if hi > lo:
            tables.append(build_noise_table(degrees[lo:hi], power, offset=lo))
        else:
            tables.append(NoiseTable(np.zeros(0), np.zeros(0, dtype=np.int64), lo))
    return tables


def block_seed(cfg: TrainConfig, epoch: int, episode: int, i: int, j: int) -> int:
    return derive_seed(cfg.seed, 0xB10C, epoch, episode, i, j)


@dataclass
class EpisodeResult:
    vertex: EmbeddingMatrix
    context: EmbeddingMatrix
    timeline: StageTimeline
    samples: int
    mean_loss: float


def _load_samples(store, episode, timeline):
    with timeline.span(IO_WORKER, 7):
        return store.load_episode(episode)


def _resolve_samples(samples, store, episode, plan, timeline):
    if samples is None:
        if store is None:
            raise ValueError("need a store or preloaded samples")
        samples = _load_samples(store, episode, timeline)
    shape = plan.shape
    missing = [(i, j) for i in range(shape.num_subparts) for j in range(shape.num_workers) if (i, j) not in samples]
    if missing:
        raise ManifestError(f"episode {episode}: block {missing[0]} missing from sample store")
    return samples


def run_episode(plan: EpisodePlan, store, vertex: EmbeddingMatrix, context: EmbeddingMatrix,
                cfg: TrainConfig, *, grid: BlockGrid, noise: list[NoiseTable], episode: int = 0,
                epoch: int = 0, lr=None, samples=None, profile: ChannelProfile | None = None,
                timeline: StageTimeline | None = None, tracker: WriteTracker | None = None,
                timeout: float = 600.0) -> EpisodeResult:
    """Run every step of ``plan`` with one thread per worker; updates embeddings in place.

    ``samples`` (block -> array) skips loading from ``store``.  In
    deterministic mode the result is bitwise equal to
    :func:`sequential_replay`.
    """
    shape = plan.shape
    W = shape.num_workers
    if vertex.rows != grid.vertex.node_count or context.rows != grid.context.node_count:
        raise ValueError("embedding row counts do not match the block grid")
    if grid.shape != (shape.num_subparts, W):
        raise ManifestError(f"grid {grid.shape} does not match plan shape {shape}")
    timeline = timeline or StageTimeline()
    profile = profile or ChannelProfile()
    samples = _resolve_samples(samples, store, episode, plan, timeline)
    lr = cfg.lr_at(epoch) if lr is None else lr
    registry = OwnershipRegistry()

    workers = []
    for w in range(W):
        lo, hi = grid.context.range(w)
        with timeline.span(w, 5):
            ctx = context.view(lo, hi).copy()
        workers.append(Worker(w, shape.node_of(w), ctx, noise[w]))

    channels = {}
    for trs in plan.transfers:
        for tr in trs:
            if (tr.src, tr.dst) not in channels:
                kind = INTER_NODE if tr.kind == INTER else CROSS_SOCKET if tr.kind == STAGED else P2P
                channels[(tr.src, tr.dst)] = profile.channel(kind, timeline, name=f"{tr.src}->{tr.dst}")

    abort = threading.Event()
    errors = []
    barrier = threading.Barrier(W) if cfg.deterministic else None
    steps_per_round = shape.workers_per_node * shape.subparts

    def fail(exc):
        errors.append(exc)
        abort.set()
        if barrier is not None:
            barrier.abort()
        for wk in workers:
            wk.mailbox.close()

    def worker_main(wk: Worker):
        w = wk.wid
        rng = None if cfg.deterministic else np.random.default_rng(derive_seed(cfg.seed, epoch, episode, w))
        try:
            for t in range(plan.num_steps):
                if abort.is_set():
                    return
                a = plan.steps[t][w]
                x = a.subpart
                r, q, _ = plan.step_index(t)
                lo, hi = grid.vertex.range(x)
                if r == 0 and q == 0:
                    with timeline.span(w, 5, x, t):
                        registry.stage_in(x, w)
                        buf = vertex.view(lo, hi).copy()
                else:
                    buf, host_resident = wk.mailbox.take(x, timeout)
                    if host_resident:
                        with timeline.span(w, 5, x, t):
                            buf = buf.copy()
                wk.buffers[t % 2] = buf
                with timeline.span(w, 1, x, t):
                    block = np.ascontiguousarray(samples[a.block])
                seed = block_seed(cfg, epoch, episode, *a.block) if rng is None else rng
                with timeline.span(w, 3, x, t):
                    try:
                        if tracker is not None:
                            with tracker.writing(w, "vertex", lo, hi), \
                                    tracker.writing(w, "context", *wk.context.row_range):
                                st = train_block(block, buf, wk.context, wk.noise, cfg, seed, lr)
                        else:
                            st = train_block(block, buf, wk.context, wk.noise, cfg, seed, lr)
                    except ScheduleViolation as exc:
                        raise ScheduleViolation(f"worker {w}, step {t}: {exc}", w, t, exc.row_range) from exc
                wk.trained += st.samples
                wk.loss_sum += st.mean_loss * st.samples
                tr = plan.outgoing(t, w)
                if tr is not None:
                    exchange_subpart(registry, wk, workers[tr.dst], x, buf, channels[(w, tr.dst)], t)
                else:
                    with timeline.span(w, 2, x, t):
                        registry.stage_out(x, w)
                        vertex.values[lo - vertex.offset:hi - vertex.offset] = buf.values
                wk.buffers[t % 2] = None
                if barrier is not None and (t + 1) % steps_per_round == 0:
                    barrier.wait()
            with timeline.span(w, 2):
                c0, c1 = wk.context.row_range
                context.values[c0 - context.offset:c1 - context.offset] = wk.context.values
        except threading.BrokenBarrierError:
            if not errors:
                fail(ChannelClosed("step barrier broken"))
        except BaseException as exc:
            fail(exc)

    threads = [threading.Thread(target=worker_main, args=(wk,), name=f"worker-{wk.wid}") for wk in workers]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for ch in channels.values():
        ch.close()
    for ch in channels.values():
        ch.join(timeout=5)
    if errors:
        raise errors[0]
    n = sum(wk.trained for wk in workers)
    loss = sum(wk.loss_sum for wk in workers) / n if n else 0.0
    return EpisodeResult(vertex, context, timeline, n, loss)


def sequential_replay(plan: EpisodePlan, samples, vertex: EmbeddingMatrix, context: EmbeddingMatrix,
                      cfg: TrainConfig, *, grid: BlockGrid, noise: list[NoiseTable], episode: int = 0,
                      epoch: int = 0, lr=None) -> int:
    """Canonical order: every step, workers in id order, directly on the host matrices."""
    lr = cfg.lr_at(epoch) if lr is None else lr
    total = 0
    for step in plan.steps:
        for a in step:
            i, j = a.block
            st = train_block(samples[a.block], vertex.view(*grid.vertex.range(i)),
                             context.view(*grid.context.range(j)), noise[j], cfg,
                             block_seed(cfg, epoch, episode, i, j), lr)
            total += st.samples
    return total


class SamplePrefetcher:
    """Loads one episode's blocks on a background IO thread (stage 7)."""

    def __init__(self, store, episode, timeline):
        self._result = None
        self._error = None
        self._thread = threading.Thread(target=self._run, args=(store, episode, timeline),
                                        name=f"prefetch-{episode}", daemon=True)
        self._thread.start()

    def _run(self, store, episode, timeline):
        try:
            self._result = _load_samples(store, episode, timeline)
        except BaseException as exc:
            self._error = exc

    def get(self):
        self._thread.join()
        if self._error is not None:
            raise self._error
        return self._result


@dataclass
class EpochResult:
    samples: int
    mean_loss: float
    timeline: StageTimeline
    episodes: list = field(default_factory=list)


def run_epoch(plan: EpisodePlan, store, vertex: EmbeddingMatrix, context: EmbeddingMatrix,
              cfg: TrainConfig, *, grid: BlockGrid, epoch: int = 0, noise=None,
              profile: ChannelProfile | None = None, prefetch: bool = True,
              timeline: StageTimeline | None = None, tracker: WriteTracker | None = None) -> EpochResult:
    """Train all episodes of one epoch in order, prefetching episode ``s+1`` during ``s``.

    ``plan`` may be a single plan or one plan per episode.
    """
    store.check_grid(grid)
    plans = plan if isinstance(plan, (list, tuple)) else [plan] * store.episodes
    if len(plans) != store.episodes:
        raise ManifestError(f"{len(plans)} plans for {store.episodes} episodes")
    timeline = timeline or StageTimeline()
    if noise is None:
        noise = build_context_noise(store.degrees(), grid, cfg.noise_power)
    results = []
    pending = SamplePrefetcher(store, 0, timeline) if prefetch else None
    for s in range(store.episodes):
        if prefetch:
            samples = pending.get()
            pending = SamplePrefetcher(store, s + 1, timeline) if s + 1 < store.episodes else None
        else:
            samples = _load_samples(store, s, timeline)
        res = run_episode(plans[s], None, vertex, context, cfg, grid=grid, noise=noise, episode=s,
                          epoch=epoch, samples=samples, profile=profile, timeline=timeline, tracker=tracker)
        results.append(res)
    n = sum(r.samples for r in results)
    loss = sum(r.mean_loss * r.samples for r in results) / n if n else 0.0
    if n != store.total_samples:
        raise ManifestError(f"trained {n} samples but manifest lists {store.total_samples}")
    return EpochResult(n, loss, timeline, results)
