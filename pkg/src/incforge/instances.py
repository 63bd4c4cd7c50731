"""Seeded random instance generation for tests and benchmarks.

Instances are full pipelines: a random straight-line IR program, its block
DAG, a small reduced topology (chain or two client branches joining at a
root), a synthetic profile registry over two contended resource dimensions,
and a traffic specification. Everything derives deterministically from the
seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import ir
from .blockdag import BlockDAG, build_block_dag
from .errors import BlockOverflow
from .devmodel import DeviceProfile, FootprintModel
from .ir import IRProgram, ResourceVector, StateDecl, build_dependency_graph
from .topo import ClientServerSplit, ECNode, PathSet, ReducedTopology


@dataclass
class Instance:
    prog: IRProgram
    dag: BlockDAG
    reduced: ReducedTopology
    split: ClientServerSplit
    registry: dict
    residuals: dict
    seed: int


def random_program(rng: random.Random, n_ops: int = 10) -> IRProgram:
    """Straight-line IR with a mix of hashes, stateful counters, and integer
    arithmetic, wired so later instructions consume earlier temporaries."""
    prog = IRProgram(header_fields=[("hdr.a", 32), ("hdr.b", 32), ("hdr.out", 32)])
    n_states = rng.randint(1, 3)
    for s in range(n_states):
        prog.declared_states[f"st{s}"] = StateDecl(f"st{s}", "array", 256, 32)
        prog.declared_states[f"hf{s}"] = StateDecl(f"hf{s}", "hash", 256, 8,
                                                   stateful=False)
    temps = []
    fields = [ir.fieldref("hdr.a"), ir.fieldref("hdr.b")]

    def operand():
        pool = fields + [ir.var(t) for t in temps[-4:]]
        return rng.choice(pool)

    for i in range(n_ops):
        kind = rng.choice(["hash", "count", "get", "calc", "calc", "minmax"])
        dst = f"t{i}"
        if kind == "hash":
            s = rng.randrange(n_states)
            prog.instructions.append(ir.Instruction(
                index=i, opcode="hash", dst=dst,
                srcs=(ir.Operand("obj", f"hf{s}"), operand())))
            prog.var_width[dst] = 8
        elif kind == "count":
            s = rng.randrange(n_states)
            prog.instructions.append(ir.Instruction(
                index=i, opcode="count", dst=dst, srcs=(operand(), ir.const(1)),
                state_ref=(f"st{s}", "rmw")))
            prog.var_width[dst] = 32
        elif kind == "get":
            s = rng.randrange(n_states)
            prog.instructions.append(ir.Instruction(
                index=i, opcode="get", dst=dst, srcs=(operand(),),
                state_ref=(f"st{s}", "read")))
            prog.var_width[dst] = 32
        elif kind == "minmax":
            prog.instructions.append(ir.Instruction(
                index=i, opcode=f"calc.{rng.choice(['min', 'max'])}", dst=dst,
                srcs=(operand(), operand())))
            prog.var_width[dst] = 32
        else:
            op = rng.choice(["add", "sub", "xor", "and", "or"])
            prog.instructions.append(ir.Instruction(
                index=i, opcode=f"calc.{op}", dst=dst,
                srcs=(operand(), operand())))
            prog.var_width[dst] = 32
        temps.append(dst)
    # fold the last few temporaries into the packet so nothing is dead
    last = ir.Instruction(index=n_ops, opcode="assign", dst="hdr.out",
                          srcs=(ir.var(temps[-1]),))
    prog.instructions.append(last)
    prog.classify_all(FootprintModel())
    return prog


def _mini_profile(name: str, rng: random.Random, arch: str = "pipeline",
                  tight: bool = False) -> DeviceProfile:
    n_stages = 1 if arch == "rtc" else rng.randint(2, 4)
    lo, hi = (2, 4) if tight else (4, 8)
    stages = tuple(ResourceVector({
        "stateless_alu": rng.randint(lo, hi),
        "stateful_alu": rng.randint(lo, hi) if not tight else rng.randint(1, 3),
        "hash_units": 8,
        "sram_blocks": 64,
        "table_slots": 16,
        "crypto_units": 2,
    }) for _ in range(n_stages))
    caps = {"B_IN", "B_SO", "B_AF", "B_EM", "B_NEM", "B_BPF", "B_APF"}
    if rng.random() < 0.15:
        caps.discard("B_SO")
    return DeviceProfile(name=name, architecture=arch, stages=stages,
                         capabilities=frozenset(caps),
                         supports_cycles=arch != "pipeline",
                         bandwidth_gbps=100.0)


def synthetic_reduced(rng: random.Random, max_ecs: int = 4):
    """A chain of ECs or a two-branch join; returns (reduced, split, registry)."""
    registry = {}
    shape = rng.choice(["chain", "branch"])
    reduced = ReducedTopology()
    if shape == "chain":
        n = rng.randint(2, max_ecs)
        for i in range(n):
            pname = f"p{i}"
            arch = "hybrid" if rng.random() < 0.2 else "pipeline"
            registry[pname] = _mini_profile(pname, rng, arch=arch,
                                            tight=rng.random() < 0.4)
            reduced.nodes[i] = ECNode(id=i, members=(f"d{i}",), profile=pname,
                                      role="tor", multiplicity=1)
            if i:
                reduced.edges.add((i - 1, i))
        root = n - 1
        client_parent = {root: None}
        for i in range(n - 1):
            client_parent[i] = i + 1
        server_parent = {root: None}
        paths = PathSet(paths=[(0, root, list(range(n)), 10.0, 0.0)])
        split = ClientServerSplit(root=root, client_parent=client_parent,
                                  server_parent=server_parent,
                                  client_nodes=set(client_parent),
                                  server_nodes={root}, paths=paths)
    else:
        # ECs: leaf0, leaf1 -> root (id 2) -> optional server node (id 3)
        n_server = rng.randint(0, max_ecs - 3)
        ids = [0, 1, 2] + [3 + i for i in range(n_server)]
        for i in ids:
            pname = f"p{i}"
            registry[pname] = _mini_profile(pname, rng, tight=rng.random() < 0.4)
            reduced.nodes[i] = ECNode(id=i, members=(f"d{i}",), profile=pname,
                                      role="agg" if i >= 2 else "tor",
                                      multiplicity=1)
        reduced.edges.add((0, 2))
        reduced.edges.add((1, 2))
        for k in range(n_server):
            reduced.edges.add((2 + k, 3 + k))
        root = 2
        client_parent = {root: None, 0: root, 1: root}
        server_parent = {root: None}
        for k in range(n_server):
            server_parent[3 + k] = 2 + k
        tail = [3 + k for k in range(n_server)]
        server_leaf = tail[-1] if tail else root
        vol0 = rng.uniform(1.0, 10.0)
        vol1 = rng.uniform(1.0, 10.0)
        paths = PathSet(paths=[
            (0, server_leaf, [0, root] + tail, vol0, 0.0),
            (1, server_leaf, [1, root] + tail, vol1, 0.0),
        ])
        split = ClientServerSplit(root=root, client_parent=client_parent,
                                  server_parent=server_parent,
                                  client_nodes=set(client_parent),
                                  server_nodes=set(server_parent), paths=paths)
    return reduced, split, registry


def random_instance(seed: int, max_blocks: int = 6, max_ecs: int = 4,
                    n_ops: int = 10) -> Instance:
    """Deterministic placement instance; regenerates until the block DAG
    lands within the requested width."""
    attempt = 0
    while True:
        rng = random.Random((seed, attempt))
        prog = random_program(rng, n_ops=n_ops)
        try:
            dag = build_block_dag(build_dependency_graph(prog), prog, threshold=6)
        except BlockOverflow:
            attempt += 1
            continue
        if 2 <= len(dag.blocks) <= max_blocks:
            break
        attempt += 1
    reduced, split, registry = synthetic_reduced(rng, max_ecs=max_ecs)
    residuals = {ec: [s.copy() for s in registry[node.profile].stages]
                 for ec, node in reduced.nodes.items()}
    return Instance(prog=prog, dag=dag, reduced=reduced, split=split,
                    registry=registry, residuals=residuals, seed=seed)
