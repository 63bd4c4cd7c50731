"""Benchmarks with delimited output and rendered figures.

Two studies ship with the toolchain: DP compile time versus device-chain
length (scaling shape), and the effect of block construction and pruning on
solver runtime. Each writes a CSV plus a PNG figure next to it.
"""

from __future__ import annotations

import csv
import statistics
import time
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .blockdag import build_block_dag
from .devmodel import DeviceProfile
from .instances import random_program, _mini_profile
from .ir import ResourceVector, build_dependency_graph
from .placer import adaptive_weights, place_multipath
from .topo import ClientServerSplit, ECNode, PathSet, ReducedTopology

import random


def _chain_topology(n: int, profile: DeviceProfile):
    """A reduced chain of n identical device classes with one flow across it."""
    reduced = ReducedTopology()
    registry = {profile.name: profile}
    for i in range(n):
        reduced.nodes[i] = ECNode(id=i, members=(f"d{i}",), profile=profile.name,
                                  role="tor", multiplicity=1)
        if i:
            reduced.edges.add((i - 1, i))
    client_parent = {n - 1: None}
    for i in range(n - 1):
        client_parent[i] = i + 1
    paths = PathSet(paths=[(0, n - 1, list(range(n)), 10.0, 0.0)])
    split = ClientServerSplit(root=n - 1, client_parent=client_parent,
                              server_parent={n - 1: None},
                              client_nodes=set(client_parent),
                              server_nodes={n - 1}, paths=paths)
    residuals = {ec: [s.copy() for s in profile.stages] for ec in reduced.nodes}
    return reduced, split, registry, residuals


def _bench_program(seed: int, n_ops: int, max_blocks: int, threshold: int):
    rng = random.Random(seed)
    attempt = 0
    while True:
        prog = random_program(random.Random((seed, attempt)), n_ops=n_ops)
        try:
            dag = build_block_dag(build_dependency_graph(prog), prog,
                                  threshold=threshold)
        except Exception:
            attempt += 1
            continue
        if len(dag.blocks) <= max_blocks:
            return prog, dag
        attempt += 1


def scaling_study(out_dir, sizes=(4, 8, 16, 32, 64), seed: int = 0) -> dict:
    """DP compile time on chains of growing length for a fixed program.

    Returns the best-fit exponent of time ~ devices^k (log-log regression).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prog, dag = _bench_program(seed, n_ops=11, max_blocks=6, threshold=4)
    profile = _mini_profile("bench", random.Random(seed), tight=False)
    w = adaptive_weights(1.0)
    rows = []
    for n in sizes:
        reduced, split, registry, residuals = _chain_topology(n, profile)
        t0 = time.perf_counter()
        plan = place_multipath(dag, prog, reduced, split, registry, residuals, w)
        elapsed = time.perf_counter() - t0
        rows.append({"devices": n, "seconds": elapsed, "gain": plan.gain,
                     "blocks": len(dag.blocks)})
    xs = np.log([r["devices"] for r in rows])
    ys = np.log([max(r["seconds"], 1e-6) for r in rows])
    exponent = float(np.polyfit(xs, ys, 1)[0])

    csv_path = out_dir / "scaling.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["devices", "seconds", "gain", "blocks"])
        writer.writeheader()
        writer.writerows(rows)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["devices"] for r in rows], [r["seconds"] for r in rows],
            marker="o", label="placement DP")
    ax.set_xlabel("devices in chain")
    ax.set_ylabel("compile time (s)")
    ax.set_title(f"Placement time vs. network size (fit exponent {exponent:.2f})")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "scaling.png", dpi=150)
    plt.close(fig)
    return {"rows": rows, "exponent": exponent,
            "csv": str(csv_path), "figure": str(out_dir / "scaling.png")}


def blocking_pruning_study(out_dir, seed: int = 0, n_ops: int = 50,
                           repeats: int = 3, devices: int = 4) -> dict:
    """Runtime effect of block construction (vs per-instruction placement)
    and of DP pruning, on one synthetic program."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profile = _mini_profile("bench", random.Random(seed), tight=False)
    w = adaptive_weights(1.0)

    def run(threshold, prune):
        prog, dag = _bench_program(seed, n_ops=n_ops, max_blocks=20,
                                   threshold=threshold)
        reduced, split, registry, residuals = _chain_topology(devices, profile)
        times = []
        gain = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            plan = place_multipath(dag, prog, reduced, split, registry,
                                   residuals, w, prune=prune)
            times.append(time.perf_counter() - t0)
            gain = plan.gain
        return statistics.median(times), gain, len(dag.blocks)

    t_blocked, gain_blocked, n_blocked = run(threshold=16, prune=True)
    t_instr, gain_instr, n_instr = run(threshold=1, prune=True)
    t_noprune, gain_noprune, _ = run(threshold=16, prune=False)

    rows = [
        {"setting": "blocks+pruning", "blocks": n_blocked,
         "median_seconds": t_blocked, "gain": gain_blocked},
        {"setting": "per-instruction", "blocks": n_instr,
         "median_seconds": t_instr, "gain": gain_instr},
        {"setting": "blocks,no-pruning", "blocks": n_blocked,
         "median_seconds": t_noprune, "gain": gain_noprune},
    ]
    csv_path = out_dir / "blocking.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["setting", "blocks",
                                                "median_seconds", "gain"])
        writer.writeheader()
        writer.writerows(rows)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([r["setting"] for r in rows], [r["median_seconds"] for r in rows],
           color=["tab:blue", "tab:orange", "tab:green"])
    ax.set_ylabel("median solve time (s)")
    ax.set_title("Effect of block construction and pruning")
    ax.tick_params(axis="x", rotation=15)
    fig.tight_layout()
    fig.savefig(out_dir / "blocking.png", dpi=150)
    plt.close(fig)
    return {"rows": rows, "speedup_blocking": t_instr / max(t_blocked, 1e-9),
            "csv": str(csv_path), "figure": str(out_dir / "blocking.png")}
