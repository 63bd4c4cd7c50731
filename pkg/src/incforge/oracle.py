"""Exhaustive reference solver for small placement instances.

Enumerates every block-to-position mapping over the canonical position
chain (client side, root, server side, plus accelerator slots), for every
subset of served client branches, and keeps the best feasible plan under
the same objective and tie-break as the production solver. Never used in
production compiles; it exists to pin down ground truth for the DP.
Accelerator slots are enumerated per device, so asymmetric switch/accel
splits across replicated branches are out of scope here.
"""

from __future__ import annotations

import itertools

from .blockdag import BlockDAG
from .devmodel import check_block_capability
from .errors import Infeasible, InstanceTooLarge
from .ir import IRProgram
from .placer import (GAIN_EPS, PlacementPlan, Weights, gain, path_bandwidth_ok,
                     place_intra_device)
from .topo import ClientServerSplit, ReducedTopology

MAX_BLOCKS = 8
MAX_ECS = 5


def _client_structure(split: ClientServerSplit):
    children = {}
    for node, par in split.client_parent.items():
        if par is not None:
            children.setdefault(par, []).append(node)
    root_children = sorted(children.get(split.root, ()))
    if not root_children:
        return [], "chain"
    if len(root_children) == 1:
        # single branch: follow the chain down to the leaf
        chain = []
        node = root_children[0]
        while True:
            chain.append(node)
            nxt = sorted(children.get(node, ()))
            if not nxt:
                break
            if len(nxt) > 1:
                raise InstanceTooLarge("oracle supports single-branch chains or "
                                       "depth-1 branching only")
            node = nxt[0]
        return list(reversed(chain)), "chain"
    for c in root_children:
        if children.get(c):
            raise InstanceTooLarge("oracle supports depth-1 client branching only")
    return root_children, "branches"


def _server_chain(split: ClientServerSplit):
    children = {}
    for node, par in split.server_parent.items():
        if par is not None:
            children.setdefault(par, []).append(node)
    chain = []
    node = split.root
    while True:
        nxt = sorted(children.get(node, ()))
        if not nxt:
            break
        if len(nxt) > 1:
            raise InstanceTooLarge("oracle supports chain-shaped server sides only")
        node = nxt[0]
        chain.append(node)
    return chain


def _ec_order(split: ClientServerSplit, reduced: ReducedTopology,
              accel_of: dict) -> dict:
    """Tie-break order: client postorder, then the server chain."""
    order = []
    children = {}
    for node, par in split.client_parent.items():
        if par is not None:
            children.setdefault(par, []).append(node)

    def post(node):
        for c in sorted(children.get(node, ())):
            post(c)
        order.append(node)
        order.extend(sorted(accel_of.get(node, ())))

    post(split.root)
    for node in _server_chain(split):
        order.append(node)
        order.extend(sorted(accel_of.get(node, ())))
    return {ec: i for i, ec in enumerate(order)}


def brute_force_place(dag: BlockDAG, prog: IRProgram, reduced: ReducedTopology,
                      split: ClientServerSplit, registry: dict, residuals: dict,
                      w: Weights, reverse_order: bool = False) -> PlacementPlan:
    """Ground-truth placement by full enumeration (hard caps apply).

    reverse_order flips the enumeration sequence; the result must not change
    (used to cross-check the enumerator itself).
    """
    n = len(dag.blocks)
    n_ecs = len(split.client_nodes | split.server_nodes)
    if n > MAX_BLOCKS or n_ecs > MAX_ECS:
        raise InstanceTooLarge(
            f"{n} blocks / {n_ecs} ECs beyond oracle caps "
            f"({MAX_BLOCKS} blocks, {MAX_ECS} ECs)")

    accel_of = {}
    for node in split.client_nodes | split.server_nodes:
        accel_of[node] = [a for a in reduced.neighbors(node)
                          if reduced.nodes[a].is_accelerator]
    ec_order = _ec_order(split, reduced, accel_of)
    client_positions, mode = _client_structure(split)
    server_nodes = _server_chain(split)

    # canonical positions in execution order; each holds >= 1 device slots
    if mode == "branches":
        sigma_choices = [frozenset(s)
                         for r in range(1, len(client_positions) + 1)
                         for s in itertools.combinations(client_positions, r)]
    else:
        sigma_choices = [frozenset(client_positions)]

    edges = sorted(dag.edges)
    best = None

    def consider(assignment_slots, sigma):
        nonlocal best
        # monotone dependency order along the position chain
        for a, b in edges:
            if assignment_slots[a][0] > assignment_slots[b][0]:
                return
        assignment = {}
        for blk, (_, ecs) in enumerate(assignment_slots):
            assignment[blk] = tuple(sorted(ecs))
        per_ec = {}
        for blk, ecs in assignment.items():
            for ec in ecs:
                per_ec.setdefault(ec, []).append(blk)
        for ec, blocks in per_ec.items():
            profile = registry[reduced.nodes[ec].profile]
            if any(not check_block_capability(dag.blocks[b], profile, prog)
                   for b in blocks):
                return
            instrs = [i for b in blocks for i in dag.blocks[b].members]
            if place_intra_device(instrs, prog, profile, residuals[ec]) is None:
                return
        g, h_t, h_r, h_p = gain(assignment, dag, reduced, split.paths, w, registry)
        if h_t <= 0.0:
            return
        sig = tuple((blk, tuple(ec_order[e] for e in assignment[blk]))
                    for blk in range(n))
        key = (g, sig)
        if best is None or g > best[0][0] + GAIN_EPS or (
                g > best[0][0] - GAIN_EPS and sig < best[0][1]):
            plan = PlacementPlan(assignment=assignment)
            for ec, blocks in per_ec.items():
                profile = registry[reduced.nodes[ec].profile]
                instrs = [i for b in blocks for i in dag.blocks[b].members]
                plan.stage_assignments[ec] = place_intra_device(
                    instrs, prog, profile, residuals[ec])
            plan.gain, plan.h_t, plan.h_r, plan.h_p = g, h_t, h_r, h_p
            best = (key, plan, sigma)

    for sigma in sigma_choices:
        # slots: (execution rank, (ec, ...)); accel slots share their host's rank
        slots = []
        rank = 0
        if mode == "branches":
            leaves = sorted(sigma)
            slots.append((rank, tuple(leaves)))
            for leaf in leaves:
                for a in accel_of.get(leaf, ()):
                    slots.append((rank, (a,)))
            rank += 1
            chain = [split.root] + server_nodes
        else:
            chain = client_positions + [split.root] + server_nodes
        for node in chain:
            slots.append((rank, (node,)))
            for a in accel_of.get(node, ()):
                slots.append((rank, (a,)))
            rank += 1
        options = slots if not reverse_order else list(reversed(slots))
        for combo in itertools.product(options, repeat=n):
            consider(list(combo), sigma)

    if best is None:
        raise Infeasible("oracle found no feasible serving placement",
                         binding_constraint="coverage")
    plan = best[1]
    served = []
    for cl in sorted({p[0] for p in split.paths.paths}):
        cl_paths = [p for p in split.paths.paths if p[0] == cl]
        from .placer import path_served
        if all(path_served(plan.assignment, p[2], reduced, n) and
               path_bandwidth_ok(p[2], reduced, registry, p[4])
               for p in cl_paths):
            served.append(cl)
    plan.served_client_leaves = tuple(served)
    return plan
