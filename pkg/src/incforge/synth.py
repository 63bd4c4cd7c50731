"""Per-device program synthesis and incremental multi-user compilation.

Every instruction in a synthesized device program carries an owner set.
Adding a user program inserts its (isolated) instructions between the base
program's head and tail and annotates shared instructions; removing a user
strips its annotation and deletes ownerless instructions, either immediately
or lazily (deferred to the next add).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Optional

from .blockdag import BlockDAG
from .devmodel import DeviceProfile
from .errors import (ConflictingExtraction, DuplicateProgram, StageOverflow,
                     UnknownProgram)
from .ir import (GuardAtom, Instruction, IRProgram, Operand, const, fieldref,
                 serialize_instruction, parse_instruction)
from .placer import PlacementPlan, place_intra_device

INC_PID_FIELD = "inc.pid"
INC_STEP_FIELD = "inc.step"
INC_VALID_FIELD = "inc.valid"
INC_HEADER_FIELDS = ((INC_PID_FIELD, 16), (INC_STEP_FIELD, 8), (INC_VALID_FIELD, 1))


# ---------------------------------------------------------------------------
# User program isolation
# ---------------------------------------------------------------------------

def isolate_user_program(prog: IRProgram, program_id: str,
                         pid_number: int) -> IRProgram:
    """Prefix every state and temporary with the program id and conjoin the
    user-traffic match (inc.valid and inc.pid) to every instruction."""
    prefix = f"{program_id}_"

    def rn_var(name: str) -> str:
        return name if "." in name else prefix + name

    def rn_op(op: Operand) -> Operand:
        if op.kind == "var":
            return Operand("var", rn_var(op.value))
        if op.kind == "obj" and op.value in prog.declared_states:
            decl = prog.declared_states[op.value]
            if decl.kind != "port":
                return Operand("obj", prefix + op.value)
        return op

    match_atoms = (GuardAtom(fieldref(INC_VALID_FIELD), "==", const(1)),
                   GuardAtom(fieldref(INC_PID_FIELD), "==", const(pid_number)))
    out = IRProgram(header_fields=list(prog.header_fields),
                    head_end=prog.head_end, tail_start=prog.tail_start)
    for fname, width in INC_HEADER_FIELDS:
        if all(f != fname for f, _ in out.header_fields):
            out.header_fields.append((fname, width))
    for name, decl in prog.declared_states.items():
        if decl.kind == "port":
            out.declared_states[name] = decl
        else:
            out.declared_states[prefix + name] = replace(decl, name=prefix + name)
    for name, width in prog.var_width.items():
        out.var_width[prefix + name] = width
    for ins in prog.instructions:
        guard = match_atoms + tuple(
            GuardAtom(rn_op(a.lhs), a.cmp, rn_op(a.rhs)) for a in ins.guard)
        out.instructions.append(Instruction(
            index=ins.index, opcode=ins.opcode,
            dst=rn_var(ins.dst) if ins.dst else None,
            srcs=tuple(rn_op(s) for s in ins.srcs),
            guard=guard,
            state_ref=((prefix + ins.state_ref[0], ins.state_ref[1])
                       if ins.state_ref else None),
            cap_class=ins.cap_class, footprint=ins.footprint,
            is_float=ins.is_float, fwd_decision=ins.fwd_decision))
    return out


# ---------------------------------------------------------------------------
# Parser trees
# ---------------------------------------------------------------------------

@dataclass
class ParserNode:
    name: str
    fields: tuple = ()
    owners: set = field(default_factory=set)
    children: list = field(default_factory=list)

    def find(self, name: str) -> Optional["ParserNode"]:
        for c in self.children:
            if c.name == name:
                return c
        return None

    def deep_copy(self) -> "ParserNode":
        return ParserNode(name=self.name, fields=tuple(self.fields),
                          owners=set(self.owners),
                          children=[c.deep_copy() for c in self.children])


def parser_tree_from_profile(profile, owner: str) -> ParserNode:
    """Chain the standard network stack, then the custom headers in
    declaration order."""
    protos = (profile.network or "ethernet").split("/")
    root = ParserNode(name=protos[0], owners={owner})
    node = root
    for proto in protos[1:]:
        child = ParserNode(name=proto, owners={owner})
        node.children.append(child)
        node = child
    by_header: dict = {}
    for fname, width in profile.packet_format:
        header = fname.split(".")[1].split("_")[0] if "." in fname else "app"
        by_header.setdefault("app", []).append((fname, width))
    if by_header:
        for header, fields_ in sorted(by_header.items()):
            child = ParserNode(name=header, fields=tuple(fields_), owners={owner})
            node.children.append(child)
            node = child
    return root


def merge_parser_trees(base: ParserNode, user: ParserNode) -> ParserNode:
    """Unify shared prefixes (union the owners), graft novel branches."""
    if base.name != user.name:
        raise ConflictingExtraction(
            f"parser roots differ: {base.name!r} vs {user.name!r}")
    out = base.deep_copy()
    _merge_into(out, user)
    return out


def _merge_into(dst: ParserNode, src: ParserNode) -> None:
    if dst.fields and src.fields and tuple(dst.fields) != tuple(src.fields):
        raise ConflictingExtraction(
            f"header {dst.name!r} extracted with different layouts")
    if src.fields and not dst.fields:
        dst.fields = tuple(src.fields)
    dst.owners |= src.owners
    for child in src.children:
        mine = dst.find(child.name)
        if mine is None:
            dst.children.append(child.deep_copy())
        else:
            _merge_into(mine, child)


# ---------------------------------------------------------------------------
# Step numbers
# ---------------------------------------------------------------------------

def assign_steps(plan: PlacementPlan, dag: BlockDAG) -> dict:
    """Topological step number per block (Kahn level, then block id), 1-based.
    Replicated instances of a block share its step number."""
    order = sorted(dag.blocks, key=lambda b: (b.kahn_level, b.id))
    return {b.id: i + 1 for i, b in enumerate(order)}


# ---------------------------------------------------------------------------
# Annotated device programs
# ---------------------------------------------------------------------------

@dataclass
class AnnotatedInstruction:
    instruction: Instruction
    owners: set

    def effective(self, pending: set) -> set:
        return self.owners - pending


@dataclass
class AnnotatedDeviceProgram:
    device_ec: int
    base_id: str
    parser: ParserNode
    entries: list = field(default_factory=list)      # AnnotatedInstruction
    head_len: int = 0
    tail_len: int = 0
    declared_states: dict = field(default_factory=dict)
    var_width: dict = field(default_factory=dict)
    header_fields: list = field(default_factory=list)
    step_table: dict = field(default_factory=dict)   # pid -> {block id: step}
    pending_removals: set = field(default_factory=set)
    program_order: list = field(default_factory=list)

    def programs(self) -> list:
        return list(self.program_order)

    def instructions_owned_by(self, pid: str) -> list:
        return [e.instruction for e in self.entries if pid in e.owners]

    def merged_ir(self) -> IRProgram:
        prog = IRProgram(declared_states=dict(self.declared_states),
                         header_fields=list(self.header_fields),
                         var_width=dict(self.var_width))
        for i, e in enumerate(self.entries):
            ins = copy.deepcopy(e.instruction)
            ins.index = i
            prog.instructions.append(ins)
        return prog


def synthesize_device_program(base: IRProgram, base_id: str, parser: ParserNode,
                              snippets: list, profile: DeviceProfile,
                              device_ec: int,
                              stage_budget=None) -> AnnotatedDeviceProgram:
    """Merge the base program with placed user snippets for one device.

    snippets: [(program_id, instruction list, states, var_width, step_table)].
    Pipeline devices place user instructions strictly between the base head
    and tail; rtc/hybrid devices emit the merged dependency order (here:
    concatenation in program-id order, which is a valid topological order
    since snippets are mutually independent).
    """
    head_end = base.head_end if base.head_end is not None else len(base.instructions)
    tail_start = base.tail_start if base.tail_start is not None else len(base.instructions)
    dev = AnnotatedDeviceProgram(
        device_ec=device_ec, base_id=base_id, parser=parser.deep_copy(),
        head_len=head_end, tail_len=len(base.instructions) - tail_start,
        declared_states=dict(base.declared_states),
        var_width=dict(base.var_width),
        header_fields=list(base.header_fields))
    for fname, width in INC_HEADER_FIELDS:
        if all(f != fname for f, _ in dev.header_fields):
            dev.header_fields.append((fname, width))
    for ins in base.instructions[:head_end]:
        dev.entries.append(AnnotatedInstruction(copy.deepcopy(ins), {base_id}))
    tail_entries = [AnnotatedInstruction(copy.deepcopy(ins), {base_id})
                    for ins in base.instructions[tail_start:]]
    for snippet in sorted(snippets, key=lambda s: s[0]):
        dev = add_user_program(dev, snippet, snippet[0])
    dev.entries.extend(tail_entries)
    _check_stages(dev, profile, stage_budget)
    return dev


def _check_stages(dev: AnnotatedDeviceProgram, profile: DeviceProfile,
                  stage_budget=None) -> None:
    budget = stage_budget if stage_budget is not None else list(profile.stages)
    prog = dev.merged_ir()
    if place_intra_device(range(len(prog.instructions)), prog, profile,
                          budget) is None:
        raise StageOverflow(
            f"device {dev.device_ec}: merged program exceeds the stage budget")


def add_user_program(dev: AnnotatedDeviceProgram, snippet,
                     program_id: str) -> AnnotatedDeviceProgram:
    """Insert one user's snippet; shared instructions gain the new owner.

    Pending lazy removals are enforced first (the deferred graph update).
    """
    pid, instrs, states, var_width, step_table = snippet
    if pid != program_id:
        raise ValueError("snippet id does not match program id")
    out = _copy_program(dev)
    if out.pending_removals:
        for gone in sorted(out.pending_removals):
            out = _strip_program(out, gone)
        out.pending_removals = set()
    if program_id in out.program_order or program_id == out.base_id:
        raise DuplicateProgram(f"program {program_id!r} already deployed")

    out.declared_states.update(states)
    out.var_width.update(var_width)
    out.step_table[program_id] = dict(step_table)
    out.program_order.append(program_id)

    insert_at = len(out.entries) - out.tail_len
    new_entries = []
    for ins in instrs:
        shared = None
        for e in out.entries:
            if e.instruction.writes_field() is None and _same_shape(e.instruction, ins):
                shared = e
                break
        if shared is not None:
            shared.owners.add(program_id)
        else:
            new_entries.append(AnnotatedInstruction(copy.deepcopy(ins), {program_id}))
    out.entries[insert_at:insert_at] = new_entries
    return out


def remove_user_program(dev: AnnotatedDeviceProgram, program_id: str,
                        mode: str = "immediate") -> AnnotatedDeviceProgram:
    if program_id not in dev.program_order:
        raise UnknownProgram(f"program {program_id!r} is not deployed here")
    out = _copy_program(dev)
    if mode == "lazy":
        out.pending_removals.add(program_id)
        return out
    return _strip_program(out, program_id)


def _strip_program(dev: AnnotatedDeviceProgram, program_id: str) -> AnnotatedDeviceProgram:
    dev.entries = [e for e in dev.entries
                   if not (e.owners == {program_id})]
    for e in dev.entries:
        e.owners.discard(program_id)
    prefix = f"{program_id}_"
    dev.declared_states = {n: d for n, d in dev.declared_states.items()
                           if not n.startswith(prefix)}
    dev.var_width = {n: w for n, w in dev.var_width.items()
                     if not n.startswith(prefix)}
    dev.step_table.pop(program_id, None)
    dev.program_order = [p for p in dev.program_order if p != program_id]
    dev.pending_removals.discard(program_id)
    _strip_parser_owner(dev.parser, program_id)
    return dev


def _strip_parser_owner(node: ParserNode, program_id: str) -> None:
    node.owners.discard(program_id)
    node.children = [c for c in node.children if c.owners != {program_id}]
    for c in node.children:
        _strip_parser_owner(c, program_id)


def _copy_program(dev: AnnotatedDeviceProgram) -> AnnotatedDeviceProgram:
    return AnnotatedDeviceProgram(
        device_ec=dev.device_ec, base_id=dev.base_id,
        parser=dev.parser.deep_copy(),
        entries=[AnnotatedInstruction(copy.deepcopy(e.instruction), set(e.owners))
                 for e in dev.entries],
        head_len=dev.head_len, tail_len=dev.tail_len,
        declared_states=dict(dev.declared_states),
        var_width=dict(dev.var_width),
        header_fields=list(dev.header_fields),
        step_table={p: dict(t) for p, t in dev.step_table.items()},
        pending_removals=set(dev.pending_removals),
        program_order=list(dev.program_order))


def _same_shape(a: Instruction, b: Instruction) -> bool:
    """Structural equality after dropping the pid-match guard atoms."""
    return (a.opcode == b.opcode and a.dst == b.dst and a.srcs == b.srcs
            and a.state_ref == b.state_ref
            and _without_pid_guard(a.guard) == _without_pid_guard(b.guard))


def _without_pid_guard(guard) -> tuple:
    return tuple(atom for atom in guard
                 if not (atom.lhs.kind == "field"
                         and atom.lhs.value in (INC_PID_FIELD, INC_VALID_FIELD)))


# ---------------------------------------------------------------------------
# Serialization (golden-file format)
# ---------------------------------------------------------------------------

def serialize_device_program(dev: AnnotatedDeviceProgram) -> str:
    lines = [f".device {dev.device_ec}",
             f".base {dev.base_id}",
             f".head_len {dev.head_len}",
             f".tail_len {dev.tail_len}"]
    if dev.pending_removals:
        lines.append(".pending " + ",".join(sorted(dev.pending_removals)))
    if dev.program_order:
        lines.append(".programs " + ",".join(dev.program_order))
    for name, width in dev.header_fields:
        lines.append(f".header {name} {width}")
    for name in sorted(dev.declared_states):
        d = dev.declared_states[name]
        lines.append(f".state {d.name} {d.kind} depth={d.depth} width={d.width} "
                     f"match={d.match_kind} stateful={int(d.stateful)}")
    for name in sorted(dev.var_width):
        lines.append(f".var {name} {dev.var_width[name]}")
    for pid in sorted(dev.step_table):
        for block, step in sorted(dev.step_table[pid].items()):
            lines.append(f".step {pid} {block} {step}")
    _serialize_parser(dev.parser, "", lines)
    for i, e in enumerate(dev.entries):
        ins = copy.deepcopy(e.instruction)
        ins.index = i
        owners = ",".join(sorted(e.owners))
        lines.append(serialize_instruction(ins) + f" | owners={{{owners}}}")
    return "\n".join(lines) + "\n"


def _serialize_parser(node: ParserNode, path: str, lines: list) -> None:
    here = f"{path}/{node.name}"
    fields = ";".join(f"{n}:{w}" for n, w in node.fields)
    owners = ",".join(sorted(node.owners))
    lines.append(f".parser {here} fields=[{fields}] owners={{{owners}}}")
    for c in node.children:
        _serialize_parser(c, here, lines)


def parse_device_program(text: str) -> AnnotatedDeviceProgram:
    from .ir import StateDecl
    dev = AnnotatedDeviceProgram(device_ec=0, base_id="",
                                 parser=ParserNode(name="ethernet"))
    nodes_by_path: dict = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith(".device "):
            dev.device_ec = int(line.split()[1])
        elif line.startswith(".base "):
            dev.base_id = line.split()[1]
        elif line.startswith(".head_len "):
            dev.head_len = int(line.split()[1])
        elif line.startswith(".tail_len "):
            dev.tail_len = int(line.split()[1])
        elif line.startswith(".pending "):
            dev.pending_removals = set(line.split()[1].split(","))
        elif line.startswith(".programs "):
            dev.program_order = line.split()[1].split(",")
        elif line.startswith(".header "):
            _, name, bits = line.split()
            dev.header_fields.append((name, int(bits)))
        elif line.startswith(".state "):
            parts = line.split()
            kw = dict(p.split("=", 1) for p in parts[3:])
            dev.declared_states[parts[1]] = StateDecl(
                name=parts[1], kind=parts[2], depth=int(kw["depth"]),
                width=int(kw["width"]), match_kind=kw["match"],
                stateful=bool(int(kw["stateful"])))
        elif line.startswith(".var "):
            _, name, bits = line.split()
            dev.var_width[name] = int(bits)
        elif line.startswith(".step "):
            _, pid, block, step = line.split()
            dev.step_table.setdefault(pid, {})[int(block)] = int(step)
        elif line.startswith(".parser "):
            body = line[len(".parser "):]
            path, rest = body.split(" fields=[", 1)
            fields_text, owners_text = rest.split("] owners={", 1)
            owners = set(owners_text.rstrip("}").split(",")) - {""}
            fields = tuple((f.split(":")[0], int(f.split(":")[1]))
                           for f in fields_text.split(";") if f)
            node = ParserNode(name=path.rsplit("/", 1)[1], fields=fields,
                              owners=owners)
            nodes_by_path[path] = node
            parent = path.rsplit("/", 1)[0]
            if parent in nodes_by_path:
                nodes_by_path[parent].children.append(node)
            else:
                dev.parser = node
        else:
            body, owners_text = line.rsplit(" | owners={", 1)
            owners = set(owners_text.rstrip("}").split(",")) - {""}
            ins = parse_instruction(body)
            dev.entries.append(AnnotatedInstruction(ins, owners))
    object_names = {n for n, d in dev.declared_states.items()
                    if d.kind in ("hash", "crypto", "port")}
    for e in dev.entries:
        e.instruction.srcs = tuple(
            Operand("obj", s.value) if s.kind == "var" and s.value in object_names
            else s for s in e.instruction.srcs)
    return dev
