"""Command line: ``walk``, ``train``, ``eval``, ``estimate`` and end-to-end ``run``.

Every config key is also a flag (``--train.dim 96``).  Failures print one
line ``nembed: error: <Kind>: <message>`` on stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import RunConfig
from .errors import ManifestError
from .evaluator import EvalSplit, evaluate, split_edges
from .graph import BlockGrid, Graph, load_edge_list
from .perfmodel import (BandwidthProfile, CostInputs, arithmetic_intensity, format_bytes, memory_cost,
                        timeline_estimate)
from .runtime import build_context_noise, run_epoch
from .scheduler import EpisodePlan, build_schedule
from .sgns import EmbeddingMatrix
from .walker import EpisodeSampleStore, run_walk_engine

log = logging.getLogger("nembed")


class UsageError(Exception):
    pass


@dataclass
class Prepared:
    cfg: RunConfig
    full: Graph  # graph non-edges are checked against
    train_graph: Graph
    split: EvalSplit
    grid: BlockGrid
    plan: EpisodePlan

    @property
    def out(self) -> Path:
        return Path(self.cfg.output)

    @property
    def walks_dir(self) -> Path:
        return self.out / "walks"


def prepare(cfg: RunConfig) -> Prepared:
    """Load the graph, hold out evaluation edges and build the block grid and plan."""
    cfg.validate()
    if not cfg.graph:
        raise UsageError("no graph given (set graph=... or --graph)")
    if not Path(cfg.graph).exists():
        raise UsageError(f"graph file not found: {cfg.graph}")
    raw = load_edge_list(cfg.graph, cfg.graph_format, id_width=cfg.id_width)
    full = Graph.from_edges(raw.edges(), raw.node_count, symmetrize=True, id_width=cfg.id_width) \
        if cfg.undirected else raw
    if cfg.eval.test_frac > 0 or cfg.eval.valid_frac > 0:
        split = split_edges(raw, cfg.eval.test_frac, cfg.eval.valid_frac, cfg.seed, negatives_from=full)
    else:
        empty = np.zeros((0, 2), dtype=np.int64)
        split = EvalSplit(raw.edges(), empty, empty, empty, empty)
    train_graph = Graph.from_edges(split.train, raw.node_count, symmetrize=cfg.undirected, id_width=cfg.id_width)
    shape = cfg.cluster_shape()
    grid = BlockGrid.build(train_graph.node_count, shape.num_nodes, shape.workers_per_node, shape.subparts)
    return Prepared(cfg, full, train_graph, split, grid, build_schedule(shape))


def cmd_walk(cfg: RunConfig, prep: Prepared | None = None, corpora=None) -> list[Path]:
    """Generate walk corpora (all of them by default); returns MANIFEST paths."""
    prep = prep or prepare(cfg)
    corpora = range(cfg.walk.epochs) if corpora is None else corpora
    return [run_walk_engine(prep.train_graph, cfg.walk_config(), prep.walks_dir, prep.grid, epoch=c)
            for c in corpora]


def _wait_for_corpus(walks_dir: Path, c: int, producer: threading.Thread | None, errors: list, timeout=None):
    done = walks_dir / f"epoch_{c}" / "MANIFEST.done"
    t0 = time.monotonic()
    while not done.exists():
        if errors:
            raise errors[0]
        if producer is None or not producer.is_alive():
            if done.exists():
                break
            raise ManifestError(f"walk corpus {c} not found under {walks_dir} (run `nembed walk` first)")
        if timeout is not None and time.monotonic() - t0 > timeout:
            raise ManifestError(f"timed out waiting for {done}")
        time.sleep(0.02)
    return EpisodeSampleStore.open(walks_dir, c)


def _save_checkpoint(d: Path, vertex: EmbeddingMatrix, context: EmbeddingMatrix):
    d.mkdir(parents=True, exist_ok=True)
    vertex.save(d / "vertex.nebe")
    context.save(d / "context.nebe")


def _report(prep: Prepared, aucs: list[tuple[str, float, float | None]]) -> str:
    lines = ["# nembed link-prediction report"]
    lines += [f"split.{k}={v}" for k, v in prep.split.sizes().items()]
    lines.append(f"score_mode={prep.cfg.eval.score_mode}")
    for label, test_auc, valid_auc in aucs:
        lines.append(f"checkpoint.{label}.test_auc={test_auc!r}")
        if valid_auc is not None:
            lines.append(f"checkpoint.{label}.valid_auc={valid_auc!r}")
    lines += [f"config.{ln}" for ln in cfgmod.dumps(prep.cfg, exclude=("output",)).splitlines()]
    return "\n".join(lines) + "\n"


def _aucs(prep, vertex, context):
    mode = prep.cfg.eval.score_mode
    test = evaluate(prep.split, vertex, context, mode, "test") if len(prep.split.test) else float("nan")
    valid = evaluate(prep.split, vertex, context, mode, "valid") if len(prep.split.valid) else None
    return test, valid


def cmd_train(cfg: RunConfig, prep: Prepared | None = None, *, concurrent_walk=False, eval_each_epoch=False,
              timeline_dir=None) -> Path:
    """Train all epochs; returns the final checkpoint directory.

    With ``concurrent_walk`` the walk corpora are produced on a background
    thread while earlier epochs train.
    """
    prep = prep or prepare(cfg)
    tcfg = cfg.train_config()
    out = prep.out
    out.mkdir(parents=True, exist_ok=True)
    n = prep.train_graph.node_count
    vertex = EmbeddingMatrix.init_vertex(n, tcfg.dim, cfg.seed)
    context = EmbeddingMatrix.zeros(n, tcfg.dim)
    noise = build_context_noise(prep.train_graph.out_degrees(), prep.grid, tcfg.noise_power)

    errors: list = []
    producer = None
    if concurrent_walk:
        def produce():
            try:
                cmd_walk(cfg, prep)
            except BaseException as exc:
                errors.append(exc)

        producer = threading.Thread(target=produce, name="walk-engine", daemon=True)
        producer.start()

    aucs = []
    profile = cfg.channel_profile()
    for e in range(tcfg.epochs):
        store = _wait_for_corpus(prep.walks_dir, e % cfg.walk.epochs, producer, errors)
        res = run_epoch(prep.plan, store, vertex, context, tcfg, grid=prep.grid, epoch=e, noise=noise,
                        profile=profile)
        log.info("epoch %d: %d samples, mean loss %.5f", e, res.samples, res.mean_loss)
        if timeline_dir is not None:
            Path(timeline_dir).mkdir(parents=True, exist_ok=True)
            res.timeline.save(Path(timeline_dir) / f"timeline_epoch_{e}.txt")
        _save_checkpoint(out / "checkpoints" / f"epoch_{e}", vertex, context)
        if eval_each_epoch:
            t, v = _aucs(prep, vertex, context)
            aucs.append((f"epoch_{e}", t, v))
            log.info("epoch %d: test AUC %.4f", e, t)
    if producer is not None:
        producer.join()
        if errors:
            raise errors[0]
    _save_checkpoint(out / "final", vertex, context)
    if eval_each_epoch:
        (out / "eval_report.txt").write_text(_report(prep, aucs))
    return out / "final"


def cmd_eval(cfg: RunConfig, checkpoint=None, prep: Prepared | None = None) -> Path:
    """Score the held-out split with a checkpoint directory; writes and returns the report path."""
    prep = prep or prepare(cfg)
    ck = Path(checkpoint) if checkpoint else prep.out / "final"
    if not (ck / "vertex.nebe").exists():
        raise ManifestError(f"no checkpoint at {ck}")
    vertex = EmbeddingMatrix.load(ck / "vertex.nebe")
    context = EmbeddingMatrix.load(ck / "context.nebe")
    if vertex.rows != prep.train_graph.node_count:
        raise ManifestError(f"checkpoint has {vertex.rows} rows, graph has {prep.train_graph.node_count} nodes")
    if len(prep.split.test) == 0:
        raise UsageError("eval.test_frac is 0; nothing to evaluate")
    t, v = _aucs(prep, vertex, context)
    path = prep.out / "eval_report.txt"
    prep.out.mkdir(parents=True, exist_ok=True)
    path.write_text(_report(prep, [(ck.name, t, v)]))
    return path


def estimate_rows(cfg: RunConfig, nodes, edges, aug=None, compute_rate=1e12, id_bytes=None):
    aug = cfg.walk.k * cfg.walk.l if aug is None else aug
    inp = CostInputs(nodes, edges, aug, cfg.train.dim, id_bytes or cfg.id_width, 4, cfg.train.negatives)
    mem = memory_cost(inp)
    ai = arithmetic_intensity(inp)
    c = cfg.channel
    bw = BandwidthProfile(intra_p2p=c.intra_bandwidth, inter_node=c.inter_bandwidth,
                          intra_latency=c.intra_latency, inter_latency=c.inter_latency,
                          cross_socket_penalty=c.cross_socket_penalty)
    est = timeline_estimate(cfg.cluster_shape(), inp, bw, compute_rate)
    return inp, mem, ai, est


def cmd_estimate(cfg: RunConfig, nodes=None, edges=None, aug=None, compute_rate=1e12, kv=False) -> str:
    if nodes is None or edges is None:
        if not cfg.graph:
            raise UsageError("estimate needs --nodes/--edges or a graph")
        g = load_edge_list(cfg.graph, cfg.graph_format, id_width=cfg.id_width)
        nodes = g.node_count if nodes is None else nodes
        edges = g.edge_count if edges is None else edges
    inp, mem, ai, est = estimate_rows(cfg, nodes, edges, aug, compute_rate)
    if kv:
        lines = [f"{name.replace(' ', '_')}_bytes={val:.0f}" for name, val in mem.rows()]
        lines += [f"{name.replace(' ', '_')}_gib={val / 1024 ** 3!r}" for name, val in mem.rows()]
        lines += [f"flops={ai.flops!r}", f"bytes_moved={ai.bytes!r}", f"intensity={ai.intensity!r}",
                  f"episode_time_s={est.total!r}", f"p2p_per_exchange_s={est.p2p_per_exchange!r}"]
        lines += [f"stage{s}_s={v!r}" for s, v in est.stages.items()]
        return "\n".join(lines) + "\n"
    sizes = {"nodes": f"{nodes:.3g}", "edges": f"{edges:.3g}", "augmented edges": f"{edges * inp.augmentation:.3g}",
             "vertex embeddings": f"{nodes:.3g}x{inp.dim}", "context embeddings": f"{nodes:.3g}x{inp.dim}"}
    out = [f"{'data type':<20}{'size':>18}{'storage':>12}"]
    out += [f"{name:<20}{sizes[name]:>18}{format_bytes(val):>12}" for name, val in mem.rows()]
    out.append("")
    out.append(f"{'arithmetic intensity':<28}{ai.intensity:.3f} flop/byte")
    out.append(f"{'episode estimate':<28}{est.total:.4g} s")
    out.append(f"{'p2p per exchange':<28}{est.p2p_per_exchange:.4g} s")
    return "\n".join(out) + "\n"


def cmd_run(cfg: RunConfig, timeline_dir=None) -> Path:
    prep = prepare(cfg)
    prep.out.mkdir(parents=True, exist_ok=True)
    cfgmod.save(cfg, prep.out / "config.txt")
    cmd_train(cfg, prep, concurrent_walk=True, eval_each_epoch=len(prep.split.test) > 0,
              timeline_dir=timeline_dir)
    return prep.out


# --------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    for key in cfgmod.config_keys():
        p.add_argument(f"--{key}", dest=key, default=None, metavar="VALUE")


def _config_from_args(args) -> RunConfig:
    cfg = cfgmod.load(args.config) if args.config else RunConfig()
    for key in cfgmod.config_keys():
        val = getattr(args, key, None)
        if val is not None:
            cfg = cfgmod.set_key(cfg, key, val)
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nembed", description="multi-worker node embedding")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("walk", help="generate walk corpora")
    _add_config_flags(p)
    p = sub.add_parser("train", help="train from existing walk corpora")
    _add_config_flags(p)
    p.add_argument("--concurrent-walk", action="store_true", help="walk while training")
    p.add_argument("--timeline-dir")
    p = sub.add_parser("eval", help="link-prediction AUC of a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", help="checkpoint directory (default OUTPUT/final)")
    p = sub.add_parser("estimate", help="memory and pipeline cost model")
    _add_config_flags(p)
    p.add_argument("--nodes", type=float)
    p.add_argument("--edges", type=float)
    p.add_argument("--aug", type=float, help="samples per edge (default walk.k * walk.l)")
    p.add_argument("--compute-rate", type=float, default=1e12, help="flop/s per worker")
    p.add_argument("--kv", action="store_true", help="machine-readable key=value output")
    p = sub.add_parser("run", help="walk + train + eval end to end")
    _add_config_flags(p)
    p.add_argument("--timeline-dir")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NEMBED_LOG", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "walk":
            for m in cmd_walk(cfg):
                print(m)
        elif args.command == "train":
            print(cmd_train(cfg, concurrent_walk=args.concurrent_walk, timeline_dir=args.timeline_dir))
        elif args.command == "eval":
            path = cmd_eval(cfg, args.checkpoint)
            sys.stdout.write(path.read_text())
        elif args.command == "estimate":
            sys.stdout.write(cmd_estimate(cfg, args.nodes, args.edges, args.aug, args.compute_rate, args.kv))
        elif args.command == "run":
            print(cmd_run(cfg, timeline_dir=args.timeline_dir))
    except UsageError as exc:
        print(f"nembed: error: UsageError: {exc}", file=sys.stderr)
        return 2
    except (Exception,) as exc:  # noqa: BLE001 - one-line report is the CLI contract
        msg = str(exc).replace("\n", " ")
        print(f"nembed: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        if os.environ.get("NEMBED_LOG", "").upper() == "DEBUG":
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
