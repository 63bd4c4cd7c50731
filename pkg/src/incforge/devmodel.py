"""Device architecture models: per-stage resources, capability sets, PHV packing.

Three architectures are modeled: pipeline (fixed stage sequence, no cyclic
dependencies), rtc (run-to-completion, one logical stage), and hybrid
(pipeline of core groups; each stage multiplies footprints by its parallel
factor and may execute dependent instructions sequentially).

All shipped capacity numbers are configuration defaults, not vendor data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import PhvOverflow, UnknownProfile
from .ir import CAP_CLASSES, Instruction, IRProgram, ResourceVector

SRAM_BLOCK_BITS = 128 * 1024
TCAM_BLOCK_BITS = 32 * 1024


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    architecture: str                  # pipeline | rtc | hybrid
    stages: tuple                      # per-stage ResourceVector capacities
    capabilities: frozenset
    parallel_factor: tuple = ()        # per-stage f_s (hybrid); empty = all 1
    supports_cycles: bool = False
    phv_containers: tuple = (64, 96, 64)   # (n32, n16, n8)
    bandwidth_gbps: float = 100.0
    ingress_stages: int = 0            # fwd-decision instructions limited to
                                       # this stage prefix; 0 = no restriction
    match_action_fusion: bool = False  # same-stage dependent match+action

    def num_stages(self) -> int:
        return len(self.stages)

    def factor(self, stage: int) -> int:
        if self.parallel_factor:
            return self.parallel_factor[stage]
        return 1

    def total_capacity(self) -> ResourceVector:
        return ResourceVector.sum(self.stages)

    def to_json(self) -> dict:
        return {
            "architecture": self.architecture,
            "stages": [s.to_json() for s in self.stages],
            "capabilities": sorted(self.capabilities),
            "parallel_factor": list(self.parallel_factor),
            "supports_cycles": self.supports_cycles,
            "phv_containers": list(self.phv_containers),
            "bandwidth_gbps": self.bandwidth_gbps,
            "ingress_stages": self.ingress_stages,
            "match_action_fusion": self.match_action_fusion,
        }


def profile_from_json(name: str, data: dict) -> DeviceProfile:
    return DeviceProfile(
        name=name,
        architecture=data["architecture"],
        stages=tuple(ResourceVector(dict(s)) for s in data["stages"]),
        capabilities=frozenset(data["capabilities"]),
        parallel_factor=tuple(data.get("parallel_factor", ())),
        supports_cycles=bool(data.get("supports_cycles",
                                      data["architecture"] != "pipeline")),
        phv_containers=tuple(data.get("phv_containers", (64, 96, 64))),
        bandwidth_gbps=float(data.get("bandwidth_gbps", 100.0)),
        ingress_stages=int(data.get("ingress_stages", 0)),
        match_action_fusion=bool(data.get("match_action_fusion", False)),
    )


# ---------------------------------------------------------------------------
# Footprints (configuration data, per capability class)
# ---------------------------------------------------------------------------

class FootprintModel:
    """Computes per-instruction resource footprints.

    State memory (sram/tcam blocks) is charged on write/rmw instructions;
    reads cost only the access unit. PHV usage is not part of per-stage
    footprints; it is checked separately via pack_phv.
    """

    def __init__(self, sram_block_bits: int = SRAM_BLOCK_BITS,
                 tcam_block_bits: int = TCAM_BLOCK_BITS):
        self.sram_block_bits = sram_block_bits
        self.tcam_block_bits = tcam_block_bits

    def footprint(self, ins: Instruction, prog: IRProgram) -> ResourceVector:
        cls = ins.cap_class
        if cls == "B_IN":
            return ResourceVector({"stateless_alu": 1})
        if cls == "B_IC":
            return ResourceVector({"stateless_alu": 2})
        if cls == "B_CA":
            return ResourceVector({"stateless_alu": 4})
        if cls == "B_AF":
            return ResourceVector({"hash_units": 1})
        if cls == "B_CF":
            return ResourceVector({"crypto_units": 1})
        if cls in ("B_BPF", "B_APF"):
            return ResourceVector({"stateless_alu": 1})
        if cls == "B_SO":
            out = {"stateful_alu": 1}
            out.update(self._memory_cost(ins, prog, "sram_blocks"))
            return ResourceVector(out)
        if cls in ("B_EM", "B_SEM", "B_DM"):
            out = {"table_slots": 1}
            out.update(self._memory_cost(ins, prog, "sram_blocks"))
            return ResourceVector(out)
        if cls in ("B_NEM", "B_SNEM"):
            out = {"table_slots": 1}
            out.update(self._memory_cost(ins, prog, "tcam_blocks"))
            return ResourceVector(out)
        raise UnknownProfile(f"no footprint rule for class {cls!r}")

    def _memory_cost(self, ins: Instruction, prog: IRProgram, dim: str) -> dict:
        if ins.state_ref is None or ins.state_ref[1] not in ("write", "rmw"):
            return {}
        decl = prog.declared_states[ins.state_ref[0]]
        block_bits = self.sram_block_bits if dim == "sram_blocks" else self.tcam_block_bits
        blocks = max(1, -(-decl.depth * decl.width // block_bits))
        return {dim: blocks}


def default_footprint_model() -> FootprintModel:
    return FootprintModel()


# ---------------------------------------------------------------------------
# Capability / resource checks
# ---------------------------------------------------------------------------

def state_groups(instrs, prog: IRProgram) -> list:
    """Partition a set of instructions into co-staged groups: instructions
    touching the same state must live in the same stage."""
    idx = {i: n for n, i in enumerate(instrs)}
    parent = list(range(len(instrs)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    by_state = {}
    for i in instrs:
        ins = prog.instructions[i]
        if ins.state_ref is not None:
            by_state.setdefault(ins.state_ref[0], []).append(i)
    for members in by_state.values():
        for other in members[1:]:
            ra, rb = find(idx[members[0]]), find(idx[other])
            if ra != rb:
                parent[rb] = ra
    groups = {}
    for i in instrs:
        groups.setdefault(find(idx[i]), []).append(i)
    return [sorted(g) for g in groups.values()]


def dataflow_within(instrs, prog: IRProgram) -> set:
    """Dataflow edges (def -> use of temporaries) restricted to the given set."""
    defs = {}
    members = set(instrs)
    for i in sorted(members):
        ins = prog.instructions[i]
        if ins.dst is not None:
            defs.setdefault(ins.dst, []).append(i)
    edges = set()
    for i in sorted(members):
        ins = prog.instructions[i]
        for name in ins.reads() + ins.reads_fields():
            for d in defs.get(name, ()):
                if d != i and d in members:
                    edges.add((d, i))
    return edges


def has_multipass_state_cycle(instrs, prog: IRProgram) -> bool:
    """True when state co-staging plus dataflow ordering is unsatisfiable.

    Quotient the instructions by state group; a dataflow edge inside one
    group, or a cycle among groups, would need recirculation.
    """
    groups = state_groups(instrs, prog)
    group_of = {}
    for gi, members in enumerate(groups):
        for m in members:
            group_of[m] = gi
    edges = set()
    for a, b in dataflow_within(instrs, prog):
        ga, gb = group_of[a], group_of[b]
        if ga == gb:
            if len(groups[ga]) > 1:
                return True
            continue
        edges.add((ga, gb))
    # cycle check over the quotient graph
    indeg = {g: 0 for g in range(len(groups))}
    for a, b in edges:
        indeg[b] += 1
    frontier = [g for g, d in indeg.items() if d == 0]
    seen = 0
    while frontier:
        g = frontier.pop()
        seen += 1
        for a, b in edges:
            if a == g:
                indeg[b] -= 1
                if indeg[b] == 0:
                    frontier.append(b)
    return seen != len(groups)


def check_block_capability(block, d: DeviceProfile, prog: IRProgram) -> bool:
    """Can this device class execute the block at all?"""
    if block.cap_class not in d.capabilities:
        return False
    if d.supports_cycles:
        return True
    return not has_multipass_state_cycle(block.members, prog)


def stage_resource_check(instrs, prog: IRProgram, residual: ResourceVector,
                         factor: int = 1) -> bool:
    """Component-wise footprint fit; hybrid stages scale by the parallel factor."""
    need = ResourceVector.sum(prog.instructions[i].footprint for i in instrs)
    return need.scaled(factor).fits_in(residual)


@dataclass
class StageAssignment:
    """Instruction index -> stage index on one device (rtc: all stage 0)."""

    stages: dict = field(default_factory=dict)

    def max_stage(self) -> int:
        return max(self.stages.values(), default=-1)

    def per_stage(self) -> dict:
        out = {}
        for i, s in self.stages.items():
            out.setdefault(s, []).append(i)
        return {s: sorted(v) for s, v in sorted(out.items())}

    def usage(self, prog: IRProgram, profile: DeviceProfile) -> dict:
        """Per-stage consumed resources (hybrid factors applied)."""
        out = {}
        for s, members in self.per_stage().items():
            need = ResourceVector.sum(prog.instructions[i].footprint for i in members)
            out[s] = need.scaled(profile.factor(s))
        return out


# ---------------------------------------------------------------------------
# PHV container packing (largest container first, fields in decreasing width)
# ---------------------------------------------------------------------------

def pack_phv(fields, containers) -> list:
    """Assign header fields to 32/16/8-bit containers.

    fields: iterable of (name, bit width). containers: (n32, n16, n8).
    Returns [(name, [(container size, bits used), ...]), ...]; raises
    PhvOverflow when the pool runs out. Fields wider than 32 bits consume
    whole 32-bit containers first and re-queue the remainder.
    """
    for name, width in fields:
        if width <= 0:
            raise ValueError(f"field {name!r} has non-positive width {width}")
    avail = {32: containers[0], 16: containers[1], 8: containers[2]}
    assignment = {name: [] for name, _ in fields}
    pool = []
    for name, width in fields:
        while width > 32 and avail[32] > 0:
            avail[32] -= 1
            assignment[name].append((32, 32))
            width -= 32
        if width > 0:
            pool.append((name, width))
    if any(width > 32 for _, width in pool):
        raise PhvOverflow("fields wider than 32 bits exceed the 32-bit container pool")
    pool.sort(key=lambda item: (-item[1], item[0]))
    order = [32, 16, 8]
    for name, width in pool:
        remaining = width
        while remaining > 0:
            size = next((s for s in order if avail[s] > 0), None)
            if size is None:
                raise PhvOverflow(f"no containers left for field {name!r}")
            avail[size] -= 1
            used = min(remaining, size)
            assignment[name].append((size, used))
            remaining -= used
    return [(name, assignment[name]) for name, _ in fields]


# ---------------------------------------------------------------------------
# Shipped profile registry (arbitrary-but-fixed capacity defaults)
# ---------------------------------------------------------------------------

_PIPE_CAPS = frozenset({"B_IN", "B_SO", "B_EM", "B_NEM", "B_BPF", "B_APF", "B_AF"})
_TD4_CAPS = _PIPE_CAPS | {"B_DM"}
_RTC_CAPS = frozenset(CAP_CLASSES) - {"B_CA", "B_APF"}
_ALL_CAPS = frozenset(CAP_CLASSES)


def _stage(sram=80, tcam=24, salu=4, slalu=16, hashes=6, tables=16, crypto=0):
    return ResourceVector({
        "sram_blocks": sram, "tcam_blocks": tcam, "stateful_alu": salu,
        "stateless_alu": slalu, "hash_units": hashes, "table_slots": tables,
        "crypto_units": crypto,
    })


def default_registry() -> dict:
    """The five architecture roles plus the switch variants used in fixtures."""
    return {
        "tofino": DeviceProfile(
            name="tofino", architecture="pipeline",
            stages=tuple(_stage() for _ in range(12)),
            capabilities=_PIPE_CAPS, bandwidth_gbps=3200.0, ingress_stages=6),
        "tofino2": DeviceProfile(
            name="tofino2", architecture="pipeline",
            stages=tuple(_stage(sram=100, tables=20) for _ in range(20)),
            capabilities=_PIPE_CAPS, bandwidth_gbps=6400.0, ingress_stages=10),
        "td4": DeviceProfile(
            name="td4", architecture="pipeline",
            stages=tuple(_stage(sram=64, tcam=16, salu=2) for _ in range(16)),
            capabilities=_TD4_CAPS, bandwidth_gbps=3200.0, ingress_stages=8),
        "nfp_rtc": DeviceProfile(
            name="nfp_rtc", architecture="rtc",
            stages=(_stage(sram=400, tcam=64, salu=64, slalu=256, hashes=16,
                           tables=64, crypto=4),),
            capabilities=_RTC_CAPS, supports_cycles=True, bandwidth_gbps=100.0),
        "fpga_nic": DeviceProfile(
            name="fpga_nic", architecture="hybrid",
            stages=tuple(_stage(sram=120, tcam=32, salu=16, slalu=64, hashes=8,
                                tables=32, crypto=2) for _ in range(8)),
            capabilities=_ALL_CAPS, parallel_factor=tuple(2 for _ in range(8)),
            supports_cycles=True, bandwidth_gbps=100.0),
        "fpga_card": DeviceProfile(
            name="fpga_card", architecture="hybrid",
            stages=tuple(_stage(sram=240, tcam=48, salu=24, slalu=96, hashes=12,
                                tables=48, crypto=4) for _ in range(10)),
            capabilities=_ALL_CAPS, parallel_factor=tuple(2 for _ in range(10)),
            supports_cycles=True, bandwidth_gbps=400.0),
    }


def load_registry(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    out = {}
    for name, body in data.items():
        out[name] = profile_from_json(name, body)
    return out


def save_registry(registry: dict, path) -> None:
    data = {name: prof.to_json() for name, prof in sorted(registry.items())}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
