"""Train on an edge list and print the per-epoch test AUC.

    python scripts/link_prediction.py --graph data/youtube.txt --epochs 200 --dim 128
    python scripts/link_prediction.py --sbm 2000      # planted-community toy graph
"""
import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from nembed.cli import main as nembed_main
from nembed.graph import save_edge_list


def sbm(n, blocks=8, p_in=0.05, p_out=0.001, seed=0):
    rng = np.random.default_rng(seed)
    label = rng.permutation(n) % blocks
    u, v = np.triu_indices(n, 1)
    keep = rng.random(len(u)) < np.where(label[u] == label[v], p_in, p_out)
    return np.column_stack([u[keep], v[keep]])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--graph")
    ap.add_argument("--sbm", type=int, help="generate a planted-community graph with this many nodes")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--walks", type=int, default=1, help="walks per node")
    ap.add_argument("--output", default=None)
    args = ap.parse_args()

    out = Path(args.output or tempfile.mkdtemp(prefix="nembed-lp-"))
    graph = args.graph
    if graph is None:
        out.mkdir(parents=True, exist_ok=True)
        graph = out / "sbm.txt"
        save_edge_list(sbm(args.sbm or 2000), graph)
    t0 = time.perf_counter()
    rc = nembed_main(["run", "--graph", str(graph), "--output", str(out), "--train.dim", str(args.dim),
                      "--train.epochs", str(args.epochs), "--walk.epochs", str(min(args.epochs, 10)),
                      "--walk.walks_per_node", str(args.walks), "--shape.workers_per_node", str(args.workers)])
    if rc:
        raise SystemExit(rc)
    print(f"# {time.perf_counter() - t0:.1f}s, output in {out}")
    for ln in (out / "eval_report.txt").read_text().splitlines():
        if "auc" in ln or ln.startswith("split."):
            print(ln)


if __name__ == "__main__":
    main()
