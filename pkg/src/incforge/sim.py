"""Reference interpreter and distributed-execution simulator.

interpret_single runs an IR program the way one big device would;
execute_distributed walks packets hop by hop over a placement plan,
carrying boundary temporaries in the packet's Param region and using the
step field to pick which replicated block instance executes. Equivalence
between the two is the correctness contract for every placement.

Semantics notes (fixed conventions, not tunable):
  - integer arithmetic is modular in the destination width (strict mode
    raises RuntimeFault on overflow instead);
  - drop()/fwd() set the packet disposition but do not halt execution, so
    single-device and distributed runs see identical state mutations;
  - hash objects use a deterministic mixer seeded by the object name;
  - crypto instructions are opaque capability-classed identities.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .errors import RuntimeFault, StuckPacket
from .ir import IRProgram, Instruction, Operand

PARAM_PID_BITS = 16
PARAM_STEP_BITS = 8


def hash_value(obj_name: str, key: int, depth: int) -> int:
    """Deterministic per-object mixer; stable across platforms and runs."""
    digest = hashlib.blake2b(f"{obj_name}:{key}".encode(), digest_size=8).digest()
    value = int.from_bytes(digest, "big")
    return value % depth if depth > 0 else value


@dataclass
class Packet:
    fields: dict = field(default_factory=dict)
    pid: int = 0
    step: int = 1
    params: dict = field(default_factory=dict)
    path: int = 0      # index into the traffic path set
    disposition: str = "fwd"

    def copy(self) -> "Packet":
        return Packet(fields=dict(self.fields), pid=self.pid, step=self.step,
                      params=dict(self.params), path=self.path,
                      disposition=self.disposition)


@dataclass
class DeviceState:
    """Named state contents: arrays as index->value, tables as key->value."""

    stores: dict = field(default_factory=dict)

    def cell(self, name: str):
        return self.stores.setdefault(name, {})

    def snapshot(self) -> dict:
        return {name: dict(cells) for name, cells in sorted(self.stores.items())
                if cells}


@dataclass
class Trace:
    hops: list = field(default_factory=list)   # (ec, [block ids executed], step)
    disposition: str = "fwd"


def _mask(value: int, width: int, strict: bool) -> int:
    masked = value & ((1 << width) - 1)
    if strict and masked != value:
        raise RuntimeFault(f"value {value} overflows {width} bits")
    return masked


class _Env:
    def __init__(self, prog: IRProgram, packet: Packet, state: DeviceState,
                 strict: bool):
        self.prog = prog
        self.packet = packet
        self.state = state
        self.strict = strict
        self.temps: dict = {}
        self.outputs: list = []
        self.mirrors = 0

    def value(self, op: Operand):
        if op.kind == "const":
            return op.value
        if op.kind == "field":
            return self.packet.fields.get(op.value, 0)
        if op.kind == "obj":
            return op.value
        if op.value in self.temps:
            return self.temps[op.value]
        return self.packet.params.get(op.value, 0)

    def guard_true(self, ins: Instruction) -> bool:
        for atom in ins.guard:
            l, r = self.value(atom.lhs), self.value(atom.rhs)
            ok = {"==": l == r, "!=": l != r, "<": l < r, "<=": l <= r,
                  ">": l > r, ">=": l >= r}[atom.cmp]
            if not ok:
                return False
        return True

    def bind(self, ins: Instruction, value) -> None:
        if ins.dst is None:
            return
        if "." in ins.dst:
            if not ins.is_float and isinstance(value, int):
                value = _mask(value, self.prog.field_width(ins.dst), self.strict)
            self.packet.fields[ins.dst] = value
        else:
            if not ins.is_float and isinstance(value, int):
                value = _mask(value, self.prog.var_width.get(ins.dst, 32), self.strict)
            self.temps[ins.dst] = value


def _execute(ins: Instruction, env: _Env) -> None:
    if not env.guard_true(ins):
        return
    op = ins.opcode
    prog, packet, state = env.prog, env.packet, env.state
    if op == "assign":
        env.bind(ins, env.value(ins.srcs[0]))
        return
    if op.startswith("calc."):
        env.bind(ins, _calc(op[5:], ins, env))
        return
    if op == "hash":
        obj = ins.srcs[0].value
        key = env.value(ins.srcs[1])
        env.bind(ins, hash_value(obj, key, prog.declared_states[obj].depth))
        return
    if op == "crypto":
        env.bind(ins, env.value(ins.srcs[1]))
        return
    name, _role = ins.state_ref if ins.state_ref else (None, None)
    if op == "get" or op == "match":
        cells = state.cell(name)
        env.bind(ins, cells.get(env.value(ins.srcs[0]), 0))
        return
    if op == "count":
        cells = state.cell(name)
        idx = env.value(ins.srcs[0])
        amount = env.value(ins.srcs[1]) if len(ins.srcs) > 1 else 1
        width = prog.declared_states[name].width
        cells[idx] = _mask(cells.get(idx, 0) + amount, width, False)
        env.bind(ins, cells[idx])
        return
    if op == "write":
        cells = state.cell(name)
        width = prog.declared_states[name].width
        value = env.value(ins.srcs[1])
        if isinstance(value, int):
            value = _mask(value, width, env.strict)
        cells[env.value(ins.srcs[0])] = value
        return
    if op in ("clear", "del"):
        cells = state.cell(name)
        idx = env.value(ins.srcs[0])
        if op == "del":
            cells.pop(idx, None)
        else:
            cells[idx] = 0
        return
    if op == "drop":
        packet.disposition = "drop"
        return
    if op == "fwd":
        packet.disposition = "fwd"
        return
    if op == "copy":
        env.outputs.append((f"copy:{ins.srcs[0].value}", env.value(ins.srcs[1])))
        return
    if op == "mirror":
        env.mirrors += 1
        return
    if op == "multicast":
        env.mirrors += env.value(ins.srcs[0])
        return
    raise RuntimeFault(f"cannot interpret opcode {op!r}")


def _calc(sub: str, ins: Instruction, env: _Env):
    a = env.value(ins.srcs[0])
    b = env.value(ins.srcs[1]) if len(ins.srcs) > 1 else 0
    if sub == "add":
        return a + b
    if sub == "sub":
        return a - b
    if sub == "mul":
        return a * b
    if sub == "div":
        if b == 0:
            return 0
        return a / b if ins.is_float else a // b
    if sub == "mod":
        return a % b if b else 0
    if sub == "and":
        return a & b
    if sub == "or":
        return a | b
    if sub == "xor":
        return a ^ b
    if sub == "not":
        return ~a
    if sub == "shl":
        return a << b
    if sub == "shr":
        return a >> b
    if sub == "min":
        return min(a, b)
    if sub == "max":
        return max(a, b)
    if sub == "abs":
        return abs(a)
    if sub == "eq":
        return int(a == b)
    if sub == "ne":
        return int(a != b)
    if sub == "lt":
        return int(a < b)
    if sub == "le":
        return int(a <= b)
    if sub == "gt":
        return int(a > b)
    if sub == "ge":
        return int(a >= b)
    if sub == "land":
        return int(bool(a) and bool(b))
    if sub == "lor":
        return int(bool(a) or bool(b))
    if sub == "slice":
        packed = ins.srcs[1].value
        hi, lo = packed >> 16, packed & 0xFFFF
        return (a >> lo) & ((1 << (hi - lo + 1)) - 1)
    if sub == "f2i":
        return int(a * b)
    if sub == "i2f":
        return a / b if b else float(a)
    raise RuntimeFault(f"unknown calc sub-op {sub!r}")


def _packet_outputs(packet: Packet, env_outputs: list, mirrors: int) -> list:
    out = list(env_outputs)
    if packet.disposition != "drop":
        out.append(("out", dict(sorted(packet.fields.items()))))
        for _ in range(mirrors):
            out.append(("mirror", dict(sorted(packet.fields.items()))))
    return out


def interpret_single(prog: IRProgram, packets, init: Optional[DeviceState] = None,
                     strict: bool = False):
    """Run every packet through the full program on one logical device."""
    state = init if init is not None else DeviceState()
    outputs = []
    for pkt_in in packets:
        packet = pkt_in.copy()
        for fname, width in prog.header_fields:
            if fname in packet.fields and isinstance(packet.fields[fname], int):
                packet.fields[fname] = _mask(packet.fields[fname], width, strict)
        env = _Env(prog, packet, state, strict)
        for ins in prog.instructions:
            _execute(ins, env)
        outputs.append(_packet_outputs(packet, env.outputs, env.mirrors))
    return outputs, state


def execute_distributed(plan, dag, prog: IRProgram, reduced, split, packets,
                        init: Optional[dict] = None, fault_ecs=frozenset(),
                        strict: bool = False, on_missing_step: str = "drop"):
    """Hop-by-hop execution of a placed program.

    Every packet follows its path (packet.path indexes the traffic paths);
    the first device inserts the INC header (step=1, empty Param region) and
    the last removes it. Boundary temporaries produced at a hop are written
    into Param on egress. Returns (outputs, traces, per-EC device states).
    """
    from .synth import assign_steps
    steps = plan.steps if plan.steps else assign_steps(plan, dag)
    states = init if init is not None else {}
    max_step = max(steps.values(), default=0)
    outputs = []
    traces = []
    boundary_out = {b.id: set(b.boundary_out) for b in dag.blocks}

    for pkt_in in packets:
        packet = pkt_in.copy()
        packet.step = 1
        packet.params = {}
        trace = Trace()
        seq = split.paths.paths[packet.path][2]
        side_outputs = []
        mirrors = 0
        for hop, ec in enumerate(seq):
            hop_ecs = [ec] + [a for a in reduced.neighbors(ec)
                              if reduced.nodes[a].is_accelerator]
            hop_blocks = []
            for hec in hop_ecs:
                if hec in fault_ecs:
                    continue
                hop_blocks.extend((steps[b], b, hec) for b in plan.blocks_on(hec))
            hop_blocks.sort()
            executed = []
            for step_no, b, hec in hop_blocks:
                if step_no > packet.step:
                    if on_missing_step == "drop":
                        packet.disposition = "drop"
                        break
                    continue
                if step_no < packet.step:
                    continue
                state = states.setdefault(hec, DeviceState())
                env = _Env(prog, packet, state, strict)
                for i in dag.blocks[b].members:
                    _execute(prog.instructions[i], env)
                side_outputs.extend(env.outputs)
                mirrors += env.mirrors
                for name, value in env.temps.items():
                    if name in boundary_out[b]:
                        packet.params[name] = value
                executed.append(b)
                packet.step = step_no + 1
            trace.hops.append((ec, executed, packet.step))
            if packet.disposition == "drop" and on_missing_step == "drop" and \
                    any(s > packet.step for s, _, _ in hop_blocks):
                break
        if packet.step != max_step + 1 and packet.disposition != "drop":
            raise StuckPacket(
                f"packet exited at step {packet.step}, expected {max_step + 1}")
        trace.disposition = packet.disposition
        traces.append(trace)
        outputs.append(_packet_outputs(packet, side_outputs, mirrors))
    return outputs, traces, states


def merge_states(states: dict) -> DeviceState:
    merged = DeviceState()
    for ec in sorted(states):
        for name, cells in states[ec].stores.items():
            if cells:
                merged.stores.setdefault(name, {}).update(cells)
    return merged


def check_equivalence(prog: IRProgram, plan, dag, reduced, split, packets,
                      fault_ecs=frozenset()) -> Optional[dict]:
    """Compare single-device and distributed execution; None when identical,
    otherwise a report locating the first divergence."""
    single_out, single_state = interpret_single(prog, [p.copy() for p in packets])
    dist_out, traces, dist_states = execute_distributed(
        plan, dag, prog, reduced, split, [p.copy() for p in packets],
        fault_ecs=fault_ecs)
    for i, (a, b) in enumerate(zip(single_out, dist_out)):
        if a != b:
            return {"packet": i, "single": a, "distributed": b,
                    "trace": traces[i].hops}
    merged = merge_states(dist_states)
    if single_state.snapshot() != merged.snapshot():
        return {"packet": None, "single_state": single_state.snapshot(),
                "distributed_state": merged.snapshot()}
    return None
