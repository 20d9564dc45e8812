"""Time the compiled tape against the pure-Python fallback.

Builds one scalar loss graph per KB size (a full prover batch plus the
bilinear terms, the shape the trainer produces), then times repeated
forward and backward sweeps through each backend.

Usage: python3 benchmarks/bench_tape.py [--repeats N] [--sizes 12,40,120]
"""

import argparse
import time

import numpy as np

from ntp.datasets import SynthKbConfig, gen_synthetic_kb
from ntp.graph import BACKEND, EmbeddingMatrix, Graph
from ntp.trainer import Hyperparams, TrainingExample, ntp_lambda_loss


def build_graph(n_facts: int, seed: int = 0):
    cfg = SynthKbConfig(n_facts=n_facts, n_constants=max(8, n_facts // 2),
                        n_rules=3, n_goals=8)
    kb, provable, unprovable = gen_synthetic_kb(cfg, seed=seed)
    hp = Hyperparams(k=8, kmax=10, mode="ntp-lambda", epochs=0)
    rng = np.random.default_rng(seed)
    emb = EmbeddingMatrix(
        rng.normal(scale=0.5, size=(len(kb.vocab), 2 * hp.k)),
        k=hp.k, mode="complex")
    batch = [TrainingExample(a, 1.0) for a in provable]
    batch += [TrainingExample(a, 0.0) for a in unprovable]
    graph = Graph(emb)
    root = ntp_lambda_loss(batch, kb, emb, hp, graph)
    return graph, root


def time_backend(graph, root, backend: str, repeats: int):
    graph.forward(backend=backend)            # warm up, pack buffers
    t0 = time.perf_counter()
    for _ in range(repeats):
        graph.forward(backend=backend)
    t_fwd = (time.perf_counter() - t0) / repeats
    t0 = time.perf_counter()
    for _ in range(repeats):
        graph.backward(root, backend=backend)
    t_bwd = (time.perf_counter() - t0) / repeats
    return t_fwd, t_bwd


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--sizes", default="12,40,120",
                    help="comma-separated KB fact counts")
    args = ap.parse_args()

    backends = ["python"]
    if BACKEND == "compiled":
        backends.append("compiled")
    else:
        print("compiled backend unavailable; timing the fallback only")

    header = (f"{'facts':>6} {'nodes':>8}"
              + "".join(f" {b + ' fwd':>14} {b + ' bwd':>14}"
                        for b in backends))
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)
    for size in (int(s) for s in args.sizes.split(",")):
        graph, root = build_graph(size)
        row = f"{size:>6} {len(graph):>8}"
        times = {}
        for b in backends:
            t_fwd, t_bwd = time_backend(graph, root, b, args.repeats)
            times[b] = t_fwd + t_bwd
            row += f" {t_fwd * 1e3:>12.3f}ms {t_bwd * 1e3:>12.3f}ms"
        if len(backends) == 2:
            row += f" {times['python'] / times['compiled']:>8.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
