"""Inter-node latency sweep and node-group scaling on a synthetic graph.

Prints, per injected latency, the episode wall time relative to the
zero-latency run and how many stage-6 transfers overlapped training; then the
throughput of 1 vs 2 node-groups.  Pass --timeline to dump a Gantt-ready log.
"""
import argparse
import os
import statistics
import tempfile
import time

import numpy as np

from nembed.graph import BlockGrid, Graph
from nembed.runtime import ChannelProfile, build_context_noise, inter_node_overlap, run_episode
from nembed.scheduler import ClusterShape, build_schedule
from nembed.sgns import EmbeddingMatrix, TrainConfig
from nembed.walker import EpisodeSampleStore, WalkConfig, run_walk_engine


def prepare(g, shape, root):
    grid = BlockGrid.build(g.node_count, shape.num_nodes, shape.workers_per_node, shape.subparts)
    store = EpisodeSampleStore(run_walk_engine(g, WalkConfig(5, 5, 1, 0), root, grid).parent)
    return grid, store, build_context_noise(g.out_degrees(), grid), build_schedule(shape), store.load_episode(0)


def timed(g, prep, cfg, profile):
    grid, store, noise, plan, samples = prep
    V = EmbeddingMatrix.init_vertex(g.node_count, cfg.dim, 0)
    C = EmbeddingMatrix.zeros(g.node_count, cfg.dim)
    t = time.perf_counter()
    res = run_episode(plan, None, V, C, cfg, grid=grid, noise=noise, samples=samples, profile=profile)
    return time.perf_counter() - t, res


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=10_000)
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--subparts", type=int, default=4)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--timeline")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    e = rng.integers(0, args.nodes, size=(5 * args.nodes, 2))
    g = Graph.from_edges(e[e[:, 0] != e[:, 1]], args.nodes, symmetrize=True)
    cfg = TrainConfig(dim=args.dim)
    root = tempfile.mkdtemp(prefix="nembed-ov-")
    prep = prepare(g, ClusterShape(2, 1, args.subparts), f"{root}/two")
    timed(g, prep, cfg, ChannelProfile())
    probe = timed(g, prep, cfg, ChannelProfile())[1]
    step = statistics.median(b - a for a, b in probe.timeline.intervals(3)) / 1e9
    base = min(timed(g, prep, cfg, ChannelProfile())[0] for _ in range(args.repeats))
    print(f"per-step compute {step * 1e3:.1f} ms, zero-latency episode {base:.3f} s")
    print(f"{'latency/step':>12} {'latency ms':>10} {'wall s':>8} {'ratio':>6} {'hidden':>7}")
    for frac in (0.25, 0.5, 1.0, 2.0, 4.0):
        L = frac * step
        runs = [timed(g, prep, cfg, ChannelProfile(inter_latency=L)) for _ in range(args.repeats)]
        wall, res = min(runs, key=lambda r: r[0])
        hidden, total = inter_node_overlap(res.timeline)
        print(f"{frac:>12.2f} {L * 1e3:>10.1f} {wall:>8.3f} {wall / base:>6.3f} {hidden:>3}/{total:<3}")
        if args.timeline and frac == 0.5:
            res.timeline.save(args.timeline)

    tput = {}
    for N in (1, 2):
        p = prepare(g, ClusterShape(N, 1, args.subparts), f"{root}/n{N}")
        timed(g, p, cfg, ChannelProfile())
        tput[N] = p[1].total_samples / min(timed(g, p, cfg, ChannelProfile())[0] for _ in range(args.repeats))
        print(f"{N} node-group(s): {tput[N]:,.0f} samples/s")
    cores = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    print(f"speedup x{tput[2] / tput[1]:.2f} on {cores} core(s)")


if __name__ == "__main__":
    main()
