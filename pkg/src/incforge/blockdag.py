"""Instruction-block DAG construction: the unit of placement.

The dependency graph is condensed (state-sharing cycles merge into one
node), layered with Kahn's topological sort, then compacted by merging
same-class blocks within a layer (shared predecessor) and across adjacent
layers (direct successor), never exceeding the size threshold and never
creating bidirectional reachability between blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import BlockOverflow, CycleDetected
from .ir import DepGraph, IRProgram, ResourceVector

DEFAULT_BLOCK_THRESHOLD = 16


@dataclass
class Block:
    id: int
    members: tuple            # instruction indices, original order
    cap_class: str
    footprint: ResourceVector = field(default_factory=ResourceVector)
    state_names: frozenset = frozenset()
    kahn_level: int = 0
    boundary_in: tuple = ()   # temporaries read from other blocks
    boundary_out: tuple = ()  # temporaries defined here and read elsewhere


@dataclass
class BlockDAG:
    blocks: list = field(default_factory=list)
    edges: set = field(default_factory=set)        # (src block id, dst block id)
    transfer_bits: dict = field(default_factory=dict)  # edge -> total carried bits

    def successors(self, bid: int) -> list:
        return sorted(b for a, b in self.edges if a == bid)

    def predecessors(self, bid: int) -> list:
        return sorted(a for a, b in self.edges if b == bid)

    def block(self, bid: int) -> Block:
        return self.blocks[bid]

    def to_dot(self) -> str:
        lines = ["digraph blockdag {"]
        for b in self.blocks:
            members = ",".join(str(m) for m in b.members)
            lines.append(
                f'  b{b.id} [label="b{b.id} {b.cap_class}\\n[{members}]" shape=box];')
        for a, b in sorted(self.edges):
            bits = self.transfer_bits.get((a, b), 0)
            lines.append(f'  b{a} -> b{b} [label="{bits}b"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Step 2: cycle merging (strongly connected components)
# ---------------------------------------------------------------------------

@dataclass
class CondensedGraph:
    """Graph over instruction groups after collapsing every cycle."""

    nodes: list = field(default_factory=list)   # list of tuples of instruction indices
    edges: set = field(default_factory=set)     # (node idx, node idx)

    def successors(self, n: int) -> list:
        return sorted(b for a, b in self.edges if a == n)


def merge_cycles(g: DepGraph) -> CondensedGraph:
    """Collapse strongly connected components until the graph is acyclic."""
    sccs = _tarjan_sccs(g.n, g.all_edges())
    # Deterministic node order: by smallest member instruction index.
    sccs.sort(key=min)
    node_of = {}
    for i, comp in enumerate(sccs):
        for v in comp:
            node_of[v] = i
    out = CondensedGraph(nodes=[tuple(sorted(c)) for c in sccs])
    for a, b in g.all_edges():
        na, nb = node_of[a], node_of[b]
        if na != nb:
            out.edges.add((na, nb))
    return out


def _tarjan_sccs(n: int, edges: set) -> list:
    succ = [[] for _ in range(n)]
    for a, b in edges:
        succ[a].append(b)
    for lst in succ:
        lst.sort()
    index = {}
    low = {}
    on_stack = set()
    stack = []
    sccs = []
    counter = [0]
    for root in range(n):
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = low[v] = counter[0]
                counter[0] += 1
                stack.append(v)
                on_stack.add(v)
            advanced = False
            for i in range(pi, len(succ[v])):
                w = succ[v][i]
                if w not in index:
                    work[-1] = (v, i + 1)
                    work.append((w, 0))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(sorted(comp))
    return sccs


# ---------------------------------------------------------------------------
# Step 3: Kahn partition
# ---------------------------------------------------------------------------

def kahn_partition(nodes, edges) -> list:
    """Repeatedly peel in-degree-0 nodes; returns a list of node-id sets."""
    indeg = {v: 0 for v in nodes}
    succ = {v: [] for v in nodes}
    for a, b in edges:
        indeg[b] += 1
        succ[a].append(b)
    remaining = set(nodes)
    levels = []
    frontier = sorted(v for v in nodes if indeg[v] == 0)
    while frontier:
        levels.append(set(frontier))
        remaining -= set(frontier)
        nxt = []
        for v in frontier:
            for w in succ[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    nxt.append(w)
        frontier = sorted(set(nxt))
    if remaining:
        raise CycleDetected(f"cycle among nodes {sorted(remaining)}")
    return levels


# ---------------------------------------------------------------------------
# Block merging (Kahn-layer compaction)
# ---------------------------------------------------------------------------

class _MergeState:
    """Union-find over condensed nodes plus the evolving edge set."""

    def __init__(self, condensed: CondensedGraph, classes: dict, threshold: int):
        self.members = {i: set(ns) for i, ns in enumerate(condensed.nodes)}
        self.cls = dict(classes)
        self.edges = set(condensed.edges)
        self.threshold = threshold

    def nodes(self) -> list:
        return sorted(self.members)

    def preds(self, v: int) -> set:
        return {a for a, b in self.edges if b == v}

    def succs(self, v: int) -> set:
        return {b for a, b in self.edges if a == v}

    def can_merge(self, a: int, b: int) -> bool:
        if a == b or self.cls[a] != self.cls[b]:
            return False
        if len(self.members[a]) + len(self.members[b]) > self.threshold:
            return False
        # Merging must not create bidirectional reachability: any path
        # between the two (other than a direct edge) would become a cycle
        # through the merged node.
        return not (self._reaches_via_third(a, b) or self._reaches_via_third(b, a))

    def _reaches_via_third(self, src: int, dst: int) -> bool:
        seen = {src}
        frontier = [w for w in self.succs(src) if w != dst]
        while frontier:
            v = frontier.pop()
            if v == dst:
                return True
            if v in seen:
                continue
            seen.add(v)
            frontier.extend(self.succs(v))
        return False

    def merge(self, keep: int, absorb: int) -> None:
        self.members[keep] |= self.members[absorb]
        del self.members[absorb]
        new_edges = set()
        for a, b in self.edges:
            a = keep if a == absorb else a
            b = keep if b == absorb else b
            if a != b:
                new_edges.add((a, b))
        self.edges = new_edges

    def levels(self) -> dict:
        mapping = {}
        for i, level in enumerate(kahn_partition(self.nodes(), self.edges)):
            for v in level:
                mapping[v] = i
        return mapping


def build_block_dag(g: DepGraph, prog: IRProgram,
                    threshold: int = DEFAULT_BLOCK_THRESHOLD) -> BlockDAG:
    """Condense cycles, then merge non-exclusive blocks until fixpoint."""
    condensed = merge_cycles(g)
    classes = {}
    for i, members in enumerate(condensed.nodes):
        cls = {prog.instructions[m].cap_class for m in members}
        if len(cls) != 1:
            # A state-sharing cycle spanning classes cannot be a legal block.
            raise BlockOverflow(
                f"state-sharing group {members} mixes capability classes {sorted(cls)}")
        classes[i] = cls.pop()
        if len(members) > threshold:
            raise BlockOverflow(
                f"state-sharing group of {len(members)} instructions exceeds "
                f"block threshold {threshold}")
    st = _MergeState(condensed, classes, threshold)

    changed = True
    while changed:
        changed = _intra_partition_pass(st) | _inter_partition_pass(st)

    return _emit(st, prog)


def _intra_partition_pass(st: _MergeState) -> bool:
    """Merge same-class nodes in one Kahn layer that share a predecessor
    (or are both sources)."""
    changed = False
    levels = st.levels()
    order = sorted(st.nodes(), key=lambda v: min(st.members[v]))
    for v1 in order:
        if v1 not in st.members:
            continue
        for v2 in sorted((v for v in st.nodes() if v != v1),
                         key=lambda v: min(st.members[v])):
            if v2 not in st.members or v1 not in st.members:
                continue
            if levels.get(v1) != levels.get(v2):
                continue
            p1, p2 = st.preds(v1), st.preds(v2)
            related = bool(p1 & p2) or (not p1 and not p2)
            if related and st.can_merge(v1, v2):
                st.merge(v1, v2)
                levels = st.levels()
                changed = True
    return changed


def _inter_partition_pass(st: _MergeState) -> bool:
    """Merge a node with same-class direct successors in the next layer."""
    changed = False
    levels = st.levels()
    for v1 in sorted(st.nodes(), key=lambda v: min(st.members[v])):
        if v1 not in st.members:
            continue
        succ_next = [v2 for v2 in st.succs(v1)
                     if levels.get(v2) == levels.get(v1) + 1]
        for v2 in sorted(succ_next, key=lambda v: min(st.members[v])):
            if v2 not in st.members or v1 not in st.members:
                continue
            if st.can_merge(v1, v2):
                st.merge(v1, v2)
                levels = st.levels()
                changed = True
    return changed


def _emit(st: _MergeState, prog: IRProgram) -> BlockDAG:
    levels = st.levels()
    ordered = sorted(st.nodes(), key=lambda v: (levels[v], min(st.members[v])))
    id_of = {v: i for i, v in enumerate(ordered)}

    defs = {}
    for ins in prog.instructions:
        if ins.dst is not None and "." not in ins.dst:
            defs.setdefault(ins.dst, []).append(ins.index)

    instr_block = {}
    dag = BlockDAG()
    for v in ordered:
        members = tuple(sorted(st.members[v]))
        for m in members:
            instr_block[m] = id_of[v]
        footprint = ResourceVector.sum(prog.instructions[m].footprint for m in members)
        states = frozenset(prog.instructions[m].state_ref[0] for m in members
                           if prog.instructions[m].state_ref is not None)
        dag.blocks.append(Block(
            id=id_of[v], members=members, cap_class=st.cls[v],
            footprint=footprint, state_names=states, kahn_level=levels[v]))

    boundary_in = {b.id: set() for b in dag.blocks}
    boundary_out = {b.id: set() for b in dag.blocks}
    for ins in prog.instructions:
        dst_block = instr_block[ins.index]
        for name in ins.reads():
            for d in defs.get(name, ()):
                src_block = instr_block[d]
                if src_block != dst_block:
                    edge = (src_block, dst_block)
                    dag.edges.add(edge)
                    width = prog.var_width.get(name, 32)
                    key = (edge, name)
                    if key not in dag.transfer_bits:
                        dag.transfer_bits[key] = width
                    boundary_in[dst_block].add(name)
                    boundary_out[src_block].add(name)
    # Collapse (edge, var) entries into per-edge totals of distinct variables.
    per_edge = {}
    for (edge, name), width in dag.transfer_bits.items():
        per_edge[edge] = per_edge.get(edge, 0) + width
    dag.transfer_bits = per_edge
    # Ordering edges without carried temporaries (state/anti edges across
    # blocks, e.g. through packet fields) still constrain placement.
    for a, b in _cross_block_order_edges(st, id_of):
        if (a, b) not in dag.transfer_bits:
            dag.transfer_bits[(a, b)] = 0
        dag.edges.add((a, b))
    for b in dag.blocks:
        b.boundary_in = tuple(sorted(boundary_in[b.id]))
        b.boundary_out = tuple(sorted(boundary_out[b.id]))
    return dag


def _cross_block_order_edges(st: _MergeState, id_of: dict) -> set:
    out = set()
    for a, b in st.edges:
        out.add((id_of[a], id_of[b]))
    return out


def phi(dag: BlockDAG, src: int, dst: int) -> int:
    """Transfer bits carried from block src to block dst."""
    return dag.transfer_bits.get((src, dst), 0)


def total_phi(dag: BlockDAG) -> int:
    return sum(dag.transfer_bits.values())
