"""Block placement: objective, adaptive weights, and the two-level DP.

Cross-device placement runs bottom-up over the client and server subtrees
of the reduced topology (client side leaf-to-root, server side root-to-leaf),
keyed by dependency-closed block sets. Within a device, a second DP assigns
instructions to pipeline stages. The objective is

    G = w_t * h_t - w_r * h_r - w_p * h_p

where h_t is the served fraction of traffic volume (all-or-nothing per
path), h_r the normalized resource consumption (replicated placements
counted once per hosting EC), and h_p the normalized boundary-variable
bits crossing devices, counted once per served path per split edge.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from .blockdag import BlockDAG, total_phi
from .devmodel import (DeviceProfile, StageAssignment, check_block_capability,
                       dataflow_within, has_multipass_state_cycle, state_groups)
from .errors import DomainError, Infeasible, WidthExceeded
from .ir import IRProgram, ResourceVector
from .topo import ClientServerSplit, ReducedTopology

DP_WIDTH_LIMIT = 20
GAIN_EPS = 1e-12  # float-dust band: gains closer than this tie-break by signature


@dataclass(frozen=True)
class Weights:
    omega_t: float
    omega_r: float
    omega_p: float


def adaptive_weights(r: float) -> Weights:
    """Traffic weight is fixed at 1/2; the resource weight grows as the
    remaining-resource ratio r shrinks: w_r = 1 - 2^(r-1), w_p = 1/2 - w_r."""
    if not 0.0 <= r <= 1.0:
        raise DomainError(f"residual resource ratio {r} outside [0, 1]")
    omega_r = 1.0 - 2.0 ** (r - 1.0)
    return Weights(omega_t=0.5, omega_r=omega_r, omega_p=0.5 - omega_r)


@dataclass
class PlacementPlan:
    assignment: dict = field(default_factory=dict)   # block id -> tuple of EC ids
    stage_assignments: dict = field(default_factory=dict)  # EC id -> StageAssignment
    gain: float = 0.0
    h_t: float = 0.0
    h_r: float = 0.0
    h_p: float = 0.0
    served_client_leaves: tuple = ()
    steps: dict = field(default_factory=dict)        # block id -> step number

    def ecs_used(self) -> list:
        out = set()
        for ecs in self.assignment.values():
            out.update(ecs)
        return sorted(out)

    def blocks_on(self, ec: int) -> list:
        return sorted(b for b, ecs in self.assignment.items() if ec in ecs)

    def to_json(self, dag: BlockDAG) -> dict:
        per_ec = {}
        for ec in self.ecs_used():
            blocks = self.blocks_on(ec)
            stage = self.stage_assignments.get(ec)
            per_ec[str(ec)] = {
                "blocks": blocks,
                "instruction_stages": (
                    {str(i): s for i, s in sorted(stage.stages.items())}
                    if stage else {}),
                "steps": {str(b): self.steps.get(b) for b in blocks},
                "boundary_in": sorted({v for b in blocks
                                       for v in dag.blocks[b].boundary_in}),
                "boundary_out": sorted({v for b in blocks
                                        for v in dag.blocks[b].boundary_out}),
            }
        return {
            "gain": self.gain,
            "h_t": self.h_t, "h_r": self.h_r, "h_p": self.h_p,
            "served_client_leaves": list(self.served_client_leaves),
            "per_ec": per_ec,
        }


# ---------------------------------------------------------------------------
# Objective evaluation (the single authority both DPs and the oracle use)
# ---------------------------------------------------------------------------

def _position_on_path(ec: int, seq: list, reduced: ReducedTopology) -> Optional[int]:
    """Index of this EC along a path; accelerators take their host's index."""
    if ec in seq:
        return seq.index(ec)
    node = reduced.nodes.get(ec)
    if node is not None and node.is_accelerator:
        for host in reduced.neighbors(ec):
            if host in seq:
                return seq.index(host)
    return None


def path_served(assignment: dict, seq: list, reduced: ReducedTopology,
                n_blocks: int) -> bool:
    for b in range(n_blocks):
        ecs = assignment.get(b, ())
        if not any(_position_on_path(ec, seq, reduced) is not None for ec in ecs):
            return False
    return True


def path_positions(assignment: dict, seq: list, reduced: ReducedTopology,
                   n_blocks: int) -> Optional[dict]:
    """Block -> (position index, ec) along one path; first occurrence wins."""
    out = {}
    for b in range(n_blocks):
        best = None
        for ec in assignment.get(b, ()):
            pos = _position_on_path(ec, seq, reduced)
            if pos is not None and (best is None or pos < best[0]):
                best = (pos, ec)
        if best is None:
            return None
        out[b] = best
    return out


def path_bandwidth_ok(seq: list, reduced: ReducedTopology, registry: dict,
                      required_gbps: float) -> bool:
    if required_gbps <= 0:
        return True
    return all(registry[reduced.nodes[ec].profile].bandwidth_gbps >= required_gbps
               for ec in seq)


def gain(assignment: dict, dag: BlockDAG, reduced: ReducedTopology,
         paths, w: Weights, registry: Optional[dict] = None):
    """Evaluate (G, h_t, h_r, h_p) for a block -> EC-set assignment.

    A path counts as served only when every block sits on it (and, when a
    profile registry is supplied, every device on it meets the bandwidth
    requirement). Crossing bits are charged once per served path for every
    dependency edge whose endpoints occupy different positions on the path.
    """
    n = len(dag.blocks)
    total_vol = sum(p[3] for p in paths.paths)
    served_vol = 0.0
    crossings = 0.0
    for cl, sv, seq, vol, req in paths.paths:
        if registry is not None and not path_bandwidth_ok(seq, reduced, registry, req):
            continue
        pos = path_positions(assignment, seq, reduced, n)
        if pos is None:
            continue
        served_vol += vol
        for (a, b), bits in dag.transfer_bits.items():
            pa, pb = pos[a], pos[b]
            if pa[1] != pb[1]:
                crossings += bits
    h_t = served_vol / total_vol if total_vol > 0 else 0.0
    r_total = sum(b.footprint.total() for b in dag.blocks)
    r_used = sum(len(assignment.get(b.id, ())) * b.footprint.total()
                 for b in dag.blocks)
    h_r = r_used / r_total if r_total > 0 else 0.0
    hp_denom = len(paths.paths) * total_phi(dag)
    h_p = crossings / hp_denom if hp_denom > 0 else 0.0
    if not assignment or all(not v for v in assignment.values()):
        return 0.0, 0.0, 0.0, 0.0
    return w.omega_t * h_t - w.omega_r * h_r - w.omega_p * h_p, h_t, h_r, h_p


# ---------------------------------------------------------------------------
# Intra-device stage assignment (per-device DP)
# ---------------------------------------------------------------------------

def place_intra_device(instrs, prog: IRProgram, profile: DeviceProfile,
                       residual, prune: bool = True) -> Optional[StageAssignment]:
    """Assign instructions to stages; None when infeasible.

    residual: list of per-stage ResourceVectors still available.
    Pipeline: dataflow strictly increases stages, state-mates co-stage.
    Hybrid: dataflow may share a stage (cores run sequentially), footprints
    scale by the stage's parallel factor. RTC: one stage, resource-only.
    Among feasible assignments the lexicographically earliest stage vector
    (instruction-index order) is returned, preferring compact placements.
    """
    instrs = sorted(instrs)
    if not instrs:
        return StageAssignment()
    if profile.architecture == "pipeline" and has_multipass_state_cycle(instrs, prog):
        return None
    groups = state_groups(instrs, prog)
    n_units = len(groups)
    unit_of = {}
    for ui, members in enumerate(groups):
        for m in members:
            unit_of[m] = ui
    unit_cost = [ResourceVector.sum(prog.instructions[i].footprint for i in g)
                 for g in groups]
    unit_preds = [0] * n_units
    for a, b in dataflow_within(instrs, prog):
        ua, ub = unit_of[a], unit_of[b]
        if ua != ub:
            unit_preds[ub] |= 1 << ua

    if profile.architecture == "rtc":
        need = ResourceVector.sum(unit_cost)
        if need.fits_in(residual[0]):
            return StageAssignment(stages={i: 0 for i in instrs})
        return None

    full = (1 << n_units) - 1
    strict = profile.architecture == "pipeline"
    n_stages = len(residual)
    # placed unit mask -> (per-unit stage signature, unit -> stage)
    states = {0: ((), {})}
    for s in range(n_stages):
        nxt = dict(states)
        for mask, (sig, assign) in states.items():
            remaining = [u for u in range(n_units) if not mask & (1 << u)]
            if not remaining:
                continue
            if prune:
                frontier = [u for u in remaining if unit_preds[u] & ~mask == 0]
            else:
                frontier = remaining
            for batch_mask, batch_units in _enumerate_unit_batches(
                    frontier, unit_preds, mask, strict):
                cost = ResourceVector.sum(unit_cost[u] for u in batch_units)
                if not cost.scaled(profile.factor(s)).fits_in(residual[s]):
                    continue
                new_mask = mask | batch_mask
                new_assign = dict(assign)
                for u in batch_units:
                    new_assign[u] = s
                new_sig = tuple(new_assign.get(u, n_stages) for u in range(n_units))
                cur = nxt.get(new_mask)
                if cur is None or new_sig < cur[0]:
                    nxt[new_mask] = (new_sig, new_assign)
        if prune:
            nxt = _dominance_prune(nxt)
            if full in states and full not in nxt:
                nxt[full] = states[full]
        states = nxt
    if full not in states:
        return None
    unit_stage = states[full][1]
    out = {}
    for ui, members in enumerate(groups):
        for m in members:
            out[m] = unit_stage[ui]
    assignment = StageAssignment(stages=out)
    if profile.ingress_stages > 0:
        for i, s in assignment.stages.items():
            if prog.instructions[i].fwd_decision and s >= profile.ingress_stages:
                return None
    return assignment


def _enumerate_unit_batches(frontier, unit_preds, placed_mask, strict):
    """All non-empty unit subsets placeable in one stage. On pipelines a
    batch must have every predecessor already placed (no dataflow within a
    stage); hybrid stages also accept dependency-closed extensions (cores
    execute a stage's instructions sequentially)."""
    out = []
    for r in range(1, len(frontier) + 1):
        for combo in itertools.combinations(frontier, r):
            m = 0
            for u in combo:
                m |= 1 << u
            if strict:
                ok = all(unit_preds[u] & ~placed_mask == 0 for u in combo)
            else:
                ok = all(unit_preds[u] & ~(placed_mask | m) == 0 for u in combo)
            if ok:
                out.append((m, combo))
    return out


def _dominance_prune(merged: dict) -> dict:
    """Drop states whose placed set is a strict subset of another state's."""
    masks = sorted(merged, key=lambda m: bin(m).count("1"), reverse=True)
    kept = {}
    for m in masks:
        if any(m != other and m & other == m for other in kept):
            continue
        kept[m] = merged[m]
    return kept


# ---------------------------------------------------------------------------
# Cross-device multi-path DP
# ---------------------------------------------------------------------------

@dataclass
class _Entry:
    value: float
    n_paths: int          # served paths through this subtree
    n_leaves: int         # served client leaf branches below
    cross_weight: float   # server side: crossing bits, weighted by leaf count
    sig: tuple            # canonical placement signature for tie-breaking
    sig_dict: dict
    back: dict


def _invert(parent: dict) -> dict:
    children: dict = {}
    for node, par in parent.items():
        if par is not None:
            children.setdefault(par, []).append(node)
    return children


def _bits(mask: int):
    b = 0
    while mask:
        if mask & 1:
            yield b
        mask >>= 1
        b += 1


def _merge_sig(a: dict, b: dict) -> dict:
    out = {k: tuple(v) for k, v in a.items()}
    for blk, ords in b.items():
        out[blk] = tuple(sorted(set(out.get(blk, ())) | set(ords)))
    return out


def _canon_sig(sig: dict) -> tuple:
    return tuple((blk, sig[blk]) for blk in sorted(sig))


class _Placer:
    def __init__(self, dag: BlockDAG, prog: IRProgram, reduced: ReducedTopology,
                 split: ClientServerSplit, registry: dict, residuals: dict,
                 w: Weights, prune: bool = True):
        self.dag = dag
        self.prog = prog
        self.reduced = reduced
        self.split = split
        self.registry = registry
        self.residuals = residuals
        self.w = w
        self.prune = prune
        self.n = len(dag.blocks)
        if self.n > DP_WIDTH_LIMIT:
            raise WidthExceeded(
                f"{self.n} blocks exceed the exact-DP width limit {DP_WIDTH_LIMIT}")
        self.full = (1 << self.n) - 1
        self.preds_mask = [0] * self.n
        self.succs_mask = [0] * self.n
        for a, b in dag.edges:
            self.preds_mask[b] |= 1 << a
            self.succs_mask[a] |= 1 << b
        self.phi_total = total_phi(dag)
        self.paths = [p for p in split.paths.paths
                      if path_bandwidth_ok(p[2], reduced, registry, p[4])]
        self.total_vol = split.paths.total_volume()
        self.hp_denom = len(split.paths.paths) * self.phi_total
        self.client_children = _invert(split.client_parent)
        self.server_children = _invert(split.server_parent)
        self.leaf_vol = {}
        self.leaf_npaths = {}
        for cl, sv, seq, vol, req in self.paths:
            self.leaf_vol[cl] = self.leaf_vol.get(cl, 0.0) + vol
            self.leaf_npaths[cl] = self.leaf_npaths.get(cl, 0) + 1
        self.server_leaves_below = self._server_leaf_counts()
        self.accel_of = {}
        for node in split.client_nodes | split.server_nodes:
            self.accel_of[node] = [a for a in reduced.neighbors(node)
                                   if reduced.nodes[a].is_accelerator]
        self.ec_order = self._ec_order()
        self.allowed = self._capability_map()
        self._stage_memo: dict = {}
        self._client_tables: dict = {}
        self._server_tables: dict = {}
        self._r_total = sum(b.footprint.total() for b in dag.blocks)

    # -- precomputation --

    def _server_leaf_counts(self) -> dict:
        counts: dict = {}
        leaves = {sv for _, sv, _, _, _ in self.paths}
        for leaf in leaves:
            node = leaf
            while node is not None and node in self.split.server_parent:
                if node != self.split.root:
                    counts[node] = counts.get(node, 0) + 1
                node = self.split.server_parent[node]
        return counts

    def _ec_order(self) -> dict:
        order = []

        def client_post(node):
            for c in sorted(self.client_children.get(node, ())):
                client_post(c)
            order.append(node)
            order.extend(sorted(self.accel_of.get(node, ())))

        client_post(self.split.root)
        frontier = sorted(self.server_children.get(self.split.root, ()))
        while frontier:
            node = frontier.pop(0)
            order.append(node)
            order.extend(sorted(self.accel_of.get(node, ())))
            frontier = sorted(self.server_children.get(node, ())) + frontier
        return {ec: i for i, ec in enumerate(order)}

    def _capability_map(self) -> dict:
        allowed = {}
        for b in self.dag.blocks:
            ecs = set()
            for ec in self.ec_order:
                profile = self.registry[self.reduced.nodes[ec].profile]
                if check_block_capability(b, profile, self.prog):
                    ecs.add(ec)
            allowed[b.id] = ecs
        return allowed

    def stage_feasible(self, ec: int, block_mask: int) -> Optional[StageAssignment]:
        key = (ec, block_mask)
        if key in self._stage_memo:
            return self._stage_memo[key]
        instrs = []
        for b in _bits(block_mask):
            instrs.extend(self.dag.blocks[b].members)
        profile = self.registry[self.reduced.nodes[ec].profile]
        result = place_intra_device(instrs, self.prog, profile,
                                    self.residuals[ec], prune=self.prune)
        self._stage_memo[key] = result
        return result

    def _phi_between(self, mask_a: int, mask_b: int) -> float:
        bits = 0.0
        for (a, b), width in self.dag.transfer_bits.items():
            if (mask_a >> a) & 1 and (mask_b >> b) & 1:
                bits += width
            elif (mask_a >> b) & 1 and (mask_b >> a) & 1:
                bits += width
        return bits

    def _phi_directed(self, mask_src: int, mask_dst: int) -> float:
        bits = 0.0
        for (a, b), width in self.dag.transfer_bits.items():
            if (mask_src >> a) & 1 and (mask_dst >> b) & 1:
                bits += width
        return bits

    def _r_cost(self, block_mask: int) -> float:
        if self._r_total == 0:
            return 0.0
        used = sum(self.dag.blocks[b].footprint.total() for b in _bits(block_mask))
        return used / self._r_total

    def _closed_batches(self, placed: int, node_ecs: list, reverse: bool) -> list:
        """Batches B (possibly empty) with placed|B dependency-closed and,
        when pruning, every block placeable on one of node_ecs."""
        closure = self.succs_mask if reverse else self.preds_mask
        remaining = self.full & ~placed
        if self.prune:
            cands = [b for b in _bits(remaining)
                     if any(ec in self.allowed[b] for ec in node_ecs)]
        else:
            cands = list(_bits(remaining))
        out = [0]
        for r in range(1, len(cands) + 1):
            for combo in itertools.combinations(cands, r):
                m = 0
                for b in combo:
                    m |= 1 << b
                total = placed | m
                if all(closure[b] & ~total == 0 for b in _bits(m)):
                    out.append(m)
        return sorted(set(out))

    def _batch_splits(self, node: int, batch_mask: int):
        """Distribute a batch between the switch EC and its accelerators.

        Yields (switch_mask, ((accel_ec, mask), ...)). Dependencies between
        the two sides carry no ordering constraint (bypass traffic), but
        every side must pass its own capability and stage checks.
        """
        accels = self.accel_of.get(node, ())
        blocks = list(_bits(batch_mask))
        slots = [node] + list(accels)
        for choice in itertools.product(range(len(slots)), repeat=len(blocks)):
            masks = [0] * len(slots)
            ok = True
            for bi, si in zip(blocks, choice):
                if slots[si] not in self.allowed[bi]:
                    ok = False
                    break
                masks[si] |= 1 << bi
            if not ok:
                continue
            feasible = True
            parts = []
            for si, ec in enumerate(slots):
                if masks[si] == 0:
                    continue
                if self.stage_feasible(ec, masks[si]) is None:
                    feasible = False
                    break
                if si > 0:
                    parts.append((ec, masks[si]))
            if feasible:
                yield masks[0], tuple(parts)

    def _batch_cross_bits(self, below_mask: int, switch_mask: int, parts,
                          reverse: bool) -> float:
        """Per-packet crossing bits introduced by this node's batch layout."""
        if reverse:
            bits = self._phi_directed(switch_mask, below_mask)
            for _, amask in parts:
                bits += self._phi_directed(amask, below_mask)
        else:
            bits = self._phi_directed(below_mask, switch_mask)
            for _, amask in parts:
                bits += self._phi_directed(below_mask, amask)
        for _, amask in parts:
            bits += self._phi_between(switch_mask, amask)
        for i in range(len(parts)):
            for j in range(i + 1, len(parts)):
                bits += self._phi_between(parts[i][1], parts[j][1])
        return bits

    def _sig_of_batch(self, node: int, switch_mask: int, parts) -> dict:
        sig = {}
        for b in _bits(switch_mask):
            sig[b] = (self.ec_order[node],)
        for ec, amask in parts:
            for b in _bits(amask):
                sig[b] = (self.ec_order[ec],)
        return sig

    def _offer(self, table: dict, mask: int, entry: _Entry) -> None:
        cur = table.get(mask)
        if cur is None or entry.value > cur.value + GAIN_EPS or (
                entry.value > cur.value - GAIN_EPS and entry.sig < cur.sig):
            table[mask] = entry

    # -- client-side DP: keys are dependency-prefix block sets --

    def client_dp(self, node: int) -> dict:
        children = sorted(self.client_children.get(node, ()))
        child_tables = [self.client_dp(c) for c in children]
        combined: dict = {}
        masks = {0}
        for tbl in child_tables:
            masks.update(tbl.keys())
        for m in sorted(masks):
            value, n_paths, n_leaves = 0.0, 0, 0
            sig: dict = {}
            picks = []
            opted = []
            for c, tbl in zip(children, child_tables):
                entry = tbl.get(m)
                opt_in = entry is not None and (m == 0 or entry.value > 0.0)
                if opt_in:
                    value += entry.value
                    n_paths += entry.n_paths
                    n_leaves += entry.n_leaves
                    sig = _merge_sig(sig, entry.sig_dict)
                    picks.append((c, m))
                    opted.append(c)
                else:
                    picks.append((c, None))
            if m != 0 and not opted:
                # a non-empty below-set must live on at least one branch
                best_c = None
                for c, tbl in zip(children, child_tables):
                    entry = tbl.get(m)
                    if entry is None:
                        continue
                    if best_c is None or entry.value > tbl_best.value or (
                            entry.value == tbl_best.value and entry.sig < tbl_best.sig):
                        best_c, tbl_best = c, entry
                if best_c is None:
                    continue
                value = tbl_best.value
                n_paths = tbl_best.n_paths
                n_leaves = tbl_best.n_leaves
                sig = dict(tbl_best.sig_dict)
                picks = [(c, m if c == best_c else None) for c in children]
            combined[m] = (value, n_paths, n_leaves, sig, tuple(picks))
        if not children:
            combined = {0: (0.0, 0, 0, {}, ())}

        vol = self.leaf_vol.get(node, 0.0)
        npaths_here = self.leaf_npaths.get(node, 0)
        nleaves_here = 1 if npaths_here else 0
        reward = (self.w.omega_t * vol / self.total_vol) if self.total_vol else 0.0

        node_ecs = [node] + self.accel_of.get(node, [])
        table: dict = {}
        for m, (cvalue, cpaths, cleaves, csig, picks) in sorted(combined.items()):
            n_here = cpaths + npaths_here
            for batch in self._closed_batches(m, node_ecs, reverse=False):
                if batch == 0:
                    self._offer(table, m, _Entry(
                        value=cvalue + reward, n_paths=n_here,
                        n_leaves=cleaves + nleaves_here, cross_weight=0.0,
                        sig=_canon_sig(csig), sig_dict=csig,
                        back={"children": picks, "switch": 0, "parts": (), "sub": m}))
                    continue
                for switch_mask, parts in self._batch_splits(node, batch):
                    cross = self._batch_cross_bits(m, switch_mask, parts, False)
                    hp_term = (self.w.omega_p * cross * n_here / self.hp_denom
                               if self.hp_denom else 0.0)
                    value = (cvalue + reward
                             - self.w.omega_r * self._r_cost(batch) - hp_term)
                    sig = _merge_sig(csig, self._sig_of_batch(node, switch_mask, parts))
                    self._offer(table, m | batch, _Entry(
                        value=value, n_paths=n_here,
                        n_leaves=cleaves + nleaves_here, cross_weight=0.0,
                        sig=_canon_sig(sig), sig_dict=sig,
                        back={"children": picks, "switch": switch_mask,
                              "parts": parts, "sub": m}))
        self._client_tables[node] = table
        return table

    # -- server-side DP: keys are dependency-suffix block sets --

    def server_dp(self, node: int) -> dict:
        children = sorted(self.server_children.get(node, ()))
        child_tables = [self.server_dp(c) for c in children]
        combined: dict = {}
        if children:
            common = set(child_tables[0])
            for tbl in child_tables[1:]:
                common &= set(tbl)
            for m in sorted(common):
                value = sum(tbl[m].value for tbl in child_tables)
                cross = sum(tbl[m].cross_weight for tbl in child_tables)
                sig: dict = {}
                for tbl in child_tables:
                    sig = _merge_sig(sig, tbl[m].sig_dict)
                combined[m] = (value, cross, sig, tuple((c, m) for c in children))
        else:
            combined = {0: (0.0, 0.0, {}, ())}

        nleaves = max(1, self.server_leaves_below.get(node, 0))
        node_ecs = [node] + self.accel_of.get(node, [])
        table: dict = {}
        for m, (cvalue, ccross, csig, picks) in sorted(combined.items()):
            for batch in self._closed_batches(m, node_ecs, reverse=True):
                if batch == 0:
                    self._offer(table, m, _Entry(
                        value=cvalue, n_paths=0, n_leaves=0, cross_weight=ccross,
                        sig=_canon_sig(csig), sig_dict=csig,
                        back={"children": picks, "switch": 0, "parts": (), "sub": m}))
                    continue
                for switch_mask, parts in self._batch_splits(node, batch):
                    bits = self._batch_cross_bits(m, switch_mask, parts, True)
                    value = cvalue - self.w.omega_r * self._r_cost(batch)
                    cross = ccross + bits * nleaves
                    sig = _merge_sig(csig, self._sig_of_batch(node, switch_mask, parts))
                    self._offer(table, m | batch, _Entry(
                        value=value, n_paths=0, n_leaves=0, cross_weight=cross,
                        sig=_canon_sig(sig), sig_dict=sig,
                        back={"children": picks, "switch": switch_mask,
                              "parts": parts, "sub": m}))
        self._server_tables[node] = table
        return table

    # -- join at the root --

    def solve(self) -> PlacementPlan:
        for b in self.dag.blocks:
            if not self.allowed[b.id]:
                raise Infeasible(
                    f"block {b.id} ({b.cap_class}) is not executable on any "
                    f"device class along the traffic paths",
                    binding_constraint=f"capability:{b.cap_class}")
        if not self.paths:
            raise Infeasible("no path satisfies the bandwidth requirement",
                             binding_constraint="bandwidth")
        cdp = self.client_dp(self.split.root)
        server_children = sorted(self.server_children.get(self.split.root, ()))
        stables = [self.server_dp(c) for c in server_children]
        best = None
        for cmask in sorted(cdp):
            centry = cdp[cmask]
            if centry.n_paths == 0:
                continue
            smask = self.full & ~cmask
            if server_children:
                if any(smask not in tbl for tbl in stables):
                    continue
                svalue = sum(tbl[smask].value for tbl in stables)
                scross = sum(tbl[smask].cross_weight for tbl in stables)
                ssig: dict = {}
                for tbl in stables:
                    ssig = _merge_sig(ssig, tbl[smask].sig_dict)
                spicks = tuple((c, smask) for c in server_children)
            else:
                if smask != 0:
                    continue
                svalue, scross, ssig, spicks = 0.0, 0.0, {}, ()
            join_bits = self._phi_directed(cmask, smask)
            hp_term = 0.0
            if self.hp_denom:
                hp_term = self.w.omega_p * (
                    scross * centry.n_leaves + join_bits * centry.n_paths
                ) / self.hp_denom
            total = centry.value + svalue - hp_term
            sig = _canon_sig(_merge_sig(centry.sig_dict, ssig))
            if best is None or total > best[0] + GAIN_EPS or (
                    total > best[0] - GAIN_EPS and sig < best[1]):
                best = (total, sig, cmask, centry, spicks)
        if best is None:
            raise Infeasible("no complete placement covers any traffic path",
                             binding_constraint="coverage")
        return self._extract(best, dict(zip(server_children, stables)))

    def _extract(self, best, server_tables: dict) -> PlacementPlan:
        total, sig, cmask, centry, spicks = best
        assignment = {b: set() for b in range(self.n)}

        def place_batch(node, back):
            for b in _bits(back["switch"]):
                assignment[b].add(node)
            for ec, amask in back["parts"]:
                for b in _bits(amask):
                    assignment[b].add(ec)

        def walk_client(node, mask):
            entry = self._client_tables[node][mask]
            place_batch(node, entry.back)
            for child, child_mask in entry.back["children"]:
                if child_mask is not None:
                    walk_client(child, child_mask)

        def walk_server(node, mask):
            entry = self._server_tables[node][mask]
            place_batch(node, entry.back)
            for child, child_mask in entry.back["children"]:
                walk_server(child, child_mask)

        walk_client(self.split.root, cmask)
        for c, m in spicks:
            walk_server(c, m)

        plan = PlacementPlan(
            assignment={b: tuple(sorted(ecs)) for b, ecs in assignment.items()})
        for ec in plan.ecs_used():
            mask = 0
            for b in plan.blocks_on(ec):
                mask |= 1 << b
            plan.stage_assignments[ec] = self.stage_feasible(ec, mask)
        g, h_t, h_r, h_p = gain(plan.assignment, self.dag, self.reduced,
                                self.split.paths, self.w, self.registry)
        plan.gain, plan.h_t, plan.h_r, plan.h_p = g, h_t, h_r, h_p
        if abs(g - total) > 1e-9:
            raise AssertionError(
                f"DP accumulated gain {total} differs from evaluated gain {g}")
        served = []
        for cl in sorted(self.leaf_vol):
            cl_paths = [p for p in self.paths if p[0] == cl]
            if cl_paths and all(
                    path_served(plan.assignment, p[2], self.reduced, self.n)
                    for p in cl_paths):
                served.append(cl)
        plan.served_client_leaves = tuple(served)
        return plan


def place_multipath(dag: BlockDAG, prog: IRProgram, reduced: ReducedTopology,
                    split: ClientServerSplit, registry: dict, residuals: dict,
                    w: Weights, prune: bool = True) -> PlacementPlan:
    """Optimal cross-device placement over the client/server subtrees."""
    return _Placer(dag, prog, reduced, split, registry, residuals, w,
                   prune=prune).solve()


# ---------------------------------------------------------------------------
# Deployment-constraint verification (post-hoc, never raises)
# ---------------------------------------------------------------------------

def check_deployment_constraints(plan: PlacementPlan, dag: BlockDAG,
                                 prog: IRProgram, reduced: ReducedTopology,
                                 split: ClientServerSplit, registry: dict,
                                 residuals: dict) -> list:
    violations = []
    n = len(dag.blocks)
    for b in range(n):
        if not plan.assignment.get(b):
            violations.append(f"allocation: block {b} is not placed")

    on_path_ecs = set()
    for _, _, seq, _, _ in split.paths.paths:
        on_path_ecs.update(seq)
        for ec in seq:
            for a in reduced.neighbors(ec):
                if reduced.nodes[a].is_accelerator:
                    on_path_ecs.add(a)
    for b, ecs in plan.assignment.items():
        for ec in ecs:
            if ec not in on_path_ecs:
                violations.append(f"scope: block {b} placed on off-path EC {ec}")

    served_any = False
    for cl, sv, seq, vol, req in split.paths.paths:
        pos = path_positions(plan.assignment, seq, reduced, n)
        if pos is None:
            continue
        if not path_bandwidth_ok(seq, reduced, registry, req):
            violations.append(
                f"throughput: served path {cl}->{sv} has a device under "
                f"{req} Gbps")
            continue
        served_any = True
        for (a, b) in dag.edges:
            if pos[a][0] > pos[b][0]:
                violations.append(
                    f"direction: block {b} sits upstream of its dependency "
                    f"{a} on path {cl}->{sv}")
        for blk in dag.blocks:
            if not blk.state_names:
                continue
            hits = sum(1 for ec in plan.assignment.get(blk.id, ())
                       if _position_on_path(ec, seq, reduced) is not None)
            if hits > 1:
                violations.append(
                    f"state: stateful block {blk.id} appears {hits} times on "
                    f"path {cl}->{sv}")
    if not served_any:
        violations.append("coverage: no path is fully served")

    for ec in plan.ecs_used():
        profile = registry[reduced.nodes[ec].profile]
        blocks = plan.blocks_on(ec)
        for b in blocks:
            if not check_block_capability(dag.blocks[b], profile, prog):
                violations.append(
                    f"capability: block {b} ({dag.blocks[b].cap_class}) on "
                    f"EC {ec} ({profile.name})")
        stage = plan.stage_assignments.get(ec)
        instrs = [i for b in blocks for i in dag.blocks[b].members]
        if stage is None:
            violations.append(f"stages: EC {ec} has no stage assignment")
            continue
        violations.extend(_verify_stage_assignment(
            instrs, stage, prog, profile, residuals[ec], ec))
    return violations


def _verify_stage_assignment(instrs, stage: StageAssignment, prog: IRProgram,
                             profile: DeviceProfile, residual, ec: int) -> list:
    violations = []
    missing = [i for i in instrs if i not in stage.stages]
    if missing:
        return [f"stages: EC {ec} misses instructions {missing}"]
    strict = profile.architecture == "pipeline"
    for a, b in dataflow_within(instrs, prog):
        sa, sb = stage.stages[a], stage.stages[b]
        if strict and sa >= sb:
            violations.append(
                f"stages: EC {ec} dependency {a}->{b} not strictly increasing")
        elif not strict and sa > sb:
            violations.append(f"stages: EC {ec} dependency {a}->{b} decreasing")
    for group in state_groups(instrs, prog):
        stages = {stage.stages[i] for i in group}
        if len(stages) > 1:
            violations.append(
                f"stages: EC {ec} state group {group} spans stages {sorted(stages)}")
    for s, used in stage.usage(prog, profile).items():
        if s >= len(residual) or not used.fits_in(residual[s]):
            violations.append(f"resources: EC {ec} stage {s} over budget")
    if profile.ingress_stages > 0:
        for i, s in stage.stages.items():
            if prog.instructions[i].fwd_decision and s >= profile.ingress_stages:
                violations.append(
                    f"ingress: EC {ec} forwarding instruction {i} at egress stage {s}")
    return violations


# ---------------------------------------------------------------------------
# Residual-resource bookkeeping helpers
# ---------------------------------------------------------------------------

def full_residuals(reduced: ReducedTopology, registry: dict) -> dict:
    return {ec: [s.copy() for s in registry[node.profile].stages]
            for ec, node in reduced.nodes.items()}


def apply_plan(residuals: dict, plan: PlacementPlan, prog: IRProgram,
               reduced: ReducedTopology, registry: dict) -> dict:
    """Subtract a committed plan's per-stage usage; returns new residuals."""
    out = {ec: [s.copy() for s in stages] for ec, stages in residuals.items()}
    for ec in plan.ecs_used():
        profile = registry[reduced.nodes[ec].profile]
        usage = plan.stage_assignments[ec].usage(prog, profile)
        for s, used in usage.items():
            out[ec][s] = out[ec][s].minus(used)
    return out


def residual_ratio(residuals: dict, reduced: ReducedTopology,
                   registry: dict) -> float:
    """Free resource units over total capacity across all device classes."""
    free = 0.0
    cap = 0.0
    for ec, node in reduced.nodes.items():
        for s, vec in enumerate(registry[node.profile].stages):
            cap += vec.total()
        for vec in residuals.get(ec, ()):
            free += vec.total()
    return free / cap if cap > 0 else 1.0
