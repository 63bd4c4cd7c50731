"""Platform-independent IR: instructions, capability classes, dependency graph.

The IR is straight-line (no jumps): each instruction has at most one
destination and at most two source operands, may carry a guard (conjunction
of comparison atoms), and may reference one named stateful object. Every
instruction is classified into one of 13 device-capability classes that
decide which device architectures can execute it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .errors import UnknownOpcode

# Capability classes, in the order they are documented everywhere.
CAP_CLASSES = (
    "B_IN", "B_IC", "B_CA", "B_SO", "B_EM", "B_SEM", "B_NEM",
    "B_SNEM", "B_DM", "B_BPF", "B_APF", "B_AF", "B_CF",
)

# calc sub-operations grouped by class (integer operands).
CALC_SIMPLE = {
    "add", "sub", "and", "or", "xor", "not", "shl", "shr", "slice",
    "min", "max", "abs", "eq", "ne", "lt", "le", "gt", "ge", "land", "lor",
}
CALC_COMPLEX = {"mul", "div", "mod"}

CMP_OPS = ("==", "!=", "<=", ">=", "<", ">")
CMP_NEGATE = {"==": "!=", "!=": "==", "<": ">=", ">=": "<", ">": "<=", "<=": ">"}


@dataclass(frozen=True)
class Operand:
    """A source operand: a temporary, a header field, a constant, or a named
    pure object (hash function, crypto unit, port selector)."""

    kind: str  # var | field | const | obj
    value: object

    def __str__(self) -> str:
        if self.kind == "const":
            return repr(self.value) if isinstance(self.value, float) else str(self.value)
        return str(self.value)

    @staticmethod
    def parse(text: str) -> "Operand":
        t = text.strip()
        try:
            return Operand("const", int(t, 0))
        except ValueError:
            pass
        try:
            return Operand("const", float(t))
        except ValueError:
            pass
        if "." in t:
            return Operand("field", t)
        return Operand("var", t)


def var(name: str) -> Operand:
    return Operand("var", name)


def const(value) -> Operand:
    return Operand("const", value)


def fieldref(name: str) -> Operand:
    return Operand("field", name)


@dataclass(frozen=True)
class GuardAtom:
    """One comparison in a guard conjunction; negation is folded into cmp."""

    lhs: Operand
    cmp: str
    rhs: Operand

    def negated(self) -> "GuardAtom":
        return GuardAtom(self.lhs, CMP_NEGATE[self.cmp], self.rhs)

    def __str__(self) -> str:
        return f"{self.lhs}{self.cmp}{self.rhs}"

    @staticmethod
    def parse(text: str) -> "GuardAtom":
        for op in CMP_OPS:
            if op in text:
                l, r = text.split(op, 1)
                return GuardAtom(Operand.parse(l), op, Operand.parse(r))
        raise ValueError(f"malformed guard atom: {text!r}")


@dataclass
class ResourceVector:
    """Named non-negative resource quantities; addition is component-wise."""

    amounts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.amounts = {k: v for k, v in self.amounts.items() if v}
        for k, v in self.amounts.items():
            if v < 0:
                raise ValueError(f"negative resource amount {k}={v}")

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        out = dict(self.amounts)
        for k, v in other.amounts.items():
            out[k] = out.get(k, 0) + v
        return ResourceVector(out)

    def scaled(self, factor) -> "ResourceVector":
        return ResourceVector({k: v * factor for k, v in self.amounts.items()})

    def fits_in(self, other: "ResourceVector") -> bool:
        return all(v <= other.amounts.get(k, 0) for k, v in self.amounts.items())

    def minus(self, other: "ResourceVector") -> "ResourceVector":
        out = dict(self.amounts)
        for k, v in other.amounts.items():
            out[k] = out.get(k, 0) - v
        return ResourceVector(out)

    def total(self) -> float:
        return sum(self.amounts.values())

    def get(self, key: str):
        return self.amounts.get(key, 0)

    def copy(self) -> "ResourceVector":
        return ResourceVector(dict(self.amounts))

    def to_json(self) -> dict:
        return dict(sorted(self.amounts.items()))

    @staticmethod
    def sum(vectors: Iterable["ResourceVector"]) -> "ResourceVector":
        out = ResourceVector()
        for v in vectors:
            out = out + v
        return out


@dataclass(frozen=True)
class StateDecl:
    """A declared stateful object (or stateless match table)."""

    name: str
    kind: str            # array | seq | table | hash | crypto
    depth: int = 1
    width: int = 32
    match_kind: str = "index"   # exact | ternary | lpm | index (tables)
    stateful: bool = True       # tables written from the data plane are stateful


@dataclass
class Instruction:
    index: int
    opcode: str                       # e.g. calc.add, hash, match, count, drop
    dst: Optional[str] = None
    srcs: tuple = ()
    guard: tuple = ()                 # tuple of GuardAtom, conjunction
    state_ref: Optional[tuple] = None  # (state name, role: read|write|rmw)
    cap_class: str = ""
    footprint: ResourceVector = field(default_factory=ResourceVector)
    is_float: bool = False
    fwd_decision: bool = False

    def reads(self) -> list:
        """Names of temporaries read, including guard operands."""
        names = [s.value for s in self.srcs if s.kind == "var"]
        for atom in self.guard:
            for op in (atom.lhs, atom.rhs):
                if op.kind == "var":
                    names.append(op.value)
        return names

    def reads_fields(self) -> list:
        """Names of packet header fields read, including guard operands."""
        names = [s.value for s in self.srcs if s.kind == "field"]
        for atom in self.guard:
            for op in (atom.lhs, atom.rhs):
                if op.kind == "field":
                    names.append(op.value)
        return names

    def writes_field(self) -> Optional[str]:
        return self.dst if self.dst is not None and "." in self.dst else None

    def with_guard(self, atoms) -> "Instruction":
        return replace(self, guard=tuple(atoms) + self.guard)


def classify_instruction(instr: Instruction, states: dict) -> str:
    """Map an instruction to its capability class.

    Classification depends only on the opcode and the kinds of its operands
    (including the declared kind of the referenced state object).
    """
    op = instr.opcode
    if op.startswith("calc."):
        sub = op[5:]
        if instr.is_float:
            return "B_CA"
        if sub in CALC_COMPLEX:
            return "B_IC"
        if sub in CALC_SIMPLE:
            return "B_IN"
        raise UnknownOpcode(f"unknown calc sub-op {sub!r}")
    if op == "assign":
        return "B_CA" if instr.is_float else "B_IN"
    if op in ("hash", "checksum"):
        return "B_AF"
    if op == "crypto":
        return "B_CF"
    if op in ("drop", "fwd", "copy"):
        return "B_BPF"
    if op in ("mirror", "multicast"):
        return "B_APF"
    if op in ("get", "write", "count", "clear", "del", "match"):
        if instr.state_ref is None:
            raise UnknownOpcode(f"{op} requires a state reference")
        decl = states[instr.state_ref[0]]
        if decl.kind in ("array", "seq"):
            return "B_SO"
        if decl.kind == "table":
            if decl.match_kind == "exact":
                return "B_SEM" if decl.stateful else "B_EM"
            if decl.match_kind in ("ternary", "lpm"):
                return "B_SNEM" if decl.stateful else "B_NEM"
            if decl.match_kind == "index":
                return "B_SO" if decl.stateful else "B_DM"
        raise UnknownOpcode(f"cannot classify {op} on state kind {decl.kind!r}")
    raise UnknownOpcode(f"unknown opcode {op!r}")


@dataclass
class IRProgram:
    """Straight-line instruction list plus declared states and packet layout."""

    instructions: list = field(default_factory=list)
    declared_states: dict = field(default_factory=dict)   # name -> StateDecl
    header_fields: list = field(default_factory=list)     # [(name, bits)]
    var_width: dict = field(default_factory=dict)         # temp name -> bits
    head_end: Optional[int] = None    # base-program marker: head = [0, head_end)
    tail_start: Optional[int] = None  # base-program marker: tail = [tail_start, n)

    def field_width(self, name: str) -> int:
        for fname, bits in self.header_fields:
            if fname == name:
                return bits
        return 32

    def operand_width(self, op: Operand) -> int:
        if op.kind == "var":
            return self.var_width.get(op.value, 32)
        if op.kind == "field":
            return self.field_width(op.value)
        return 32

    def classify_all(self, footprint_model=None) -> None:
        for ins in self.instructions:
            ins.cap_class = classify_instruction(ins, self.declared_states)
            if footprint_model is not None:
                ins.footprint = footprint_model.footprint(ins, self)


@dataclass
class DepGraph:
    """Instruction dependency graph.

    Dataflow edges follow temporary def -> use; state edges connect, in both
    directions, every pair of instructions touching the same state object.
    """

    n: int
    dataflow: set = field(default_factory=set)   # (i, j): j depends on i
    state_pairs: set = field(default_factory=set)  # frozenset({i, j})

    def all_edges(self) -> set:
        edges = set(self.dataflow)
        for pair in self.state_pairs:
            i, j = tuple(pair)
            edges.add((i, j))
            edges.add((j, i))
        return edges

    def successors(self, i: int) -> set:
        return {b for a, b in self.all_edges() if a == i}


def build_dependency_graph(prog: IRProgram) -> DepGraph:
    """Dataflow edges from SSA def/use; mutual state edges from shared names.

    Packet header fields are not SSA-renamed, so field writes additionally
    order against earlier readers/writers of the same field (anti/output
    edges) to preserve program order.
    """
    g = DepGraph(n=len(prog.instructions))
    defs = {}  # var -> list of defining indices (guarded merges may share)
    field_writers = {}
    field_readers = {}
    for ins in prog.instructions:
        for name in ins.reads():
            for d in defs.get(name, ()):
                g.dataflow.add((d, ins.index))
        for fname in ins.reads_fields():
            if fname in field_writers:
                g.dataflow.add((field_writers[fname], ins.index))
            field_readers.setdefault(fname, []).append(ins.index)
        written = ins.writes_field()
        if written is not None:
            for r in field_readers.get(written, ()):
                if r != ins.index:
                    g.dataflow.add((r, ins.index))
            if written in field_writers:
                g.dataflow.add((field_writers[written], ins.index))
            field_writers[written] = ins.index
        elif ins.dst is not None:
            defs.setdefault(ins.dst, []).append(ins.index)
    by_state = {}
    for ins in prog.instructions:
        if ins.state_ref is not None:
            by_state.setdefault(ins.state_ref[0], []).append(ins.index)
    for indices in by_state.values():
        for a in range(len(indices)):
            for b in range(a + 1, len(indices)):
                g.state_pairs.add(frozenset((indices[a], indices[b])))
    return g


def validate_linear(prog: IRProgram) -> list:
    """Check the straight-line contract; returns a list of violations."""
    violations = []
    seen_defs = {}
    for ins in prog.instructions:
        if ins.opcode in ("goto", "jump", "br"):
            violations.append(f"ControlFlow: instruction {ins.index} is {ins.opcode}")
        if len(ins.srcs) > 2:
            violations.append(f"OperandCount: instruction {ins.index} has {len(ins.srcs)} sources")
        if ins.state_ref is not None and ins.state_ref[0] not in prog.declared_states:
            violations.append(f"UnresolvedState: instruction {ins.index} uses {ins.state_ref[0]!r}")
        if ins.dst is not None and ins.writes_field() is None:
            seen_defs.setdefault(ins.dst, []).append(ins)
    for name, instrs in seen_defs.items():
        if len(instrs) == 1:
            continue
        # Multiple defs are legal only as a predicated merge: every def
        # guarded, pairwise disjoint on at least one complementary atom.
        if any(not i.guard for i in instrs):
            violations.append(f"SSA: temporary {name!r} defined {len(instrs)} times")
            continue
        for a in range(len(instrs)):
            for b in range(a + 1, len(instrs)):
                if not _guards_disjoint(instrs[a].guard, instrs[b].guard):
                    violations.append(
                        f"SSA: temporary {name!r} has overlapping guarded definitions"
                    )
    return violations


def _guards_disjoint(g1, g2) -> bool:
    atoms1 = {(a.lhs, a.rhs): a.cmp for a in g1}
    for a in g2:
        other = atoms1.get((a.lhs, a.rhs))
        if other is not None and other == CMP_NEGATE[a.cmp]:
            return True
    return False


# ---------------------------------------------------------------------------
# Textual serialization. One instruction per line:
#   idx | guard | dst = opcode(srcs) | state=<name>:<role> | class=<B_*>
# preceded by .header/.state/.var preamble lines. Round-trips bit-exactly.
# ---------------------------------------------------------------------------

def serialize_program(prog: IRProgram) -> str:
    lines = []
    for name, bits in prog.header_fields:
        lines.append(f".header {name} {bits}")
    for name in sorted(prog.declared_states):
        d = prog.declared_states[name]
        lines.append(
            f".state {d.name} {d.kind} depth={d.depth} width={d.width} "
            f"match={d.match_kind} stateful={int(d.stateful)}"
        )
    for name in sorted(prog.var_width):
        lines.append(f".var {name} {prog.var_width[name]}")
    if prog.head_end is not None:
        lines.append(f".head_end {prog.head_end}")
    if prog.tail_start is not None:
        lines.append(f".tail_start {prog.tail_start}")
    for ins in prog.instructions:
        lines.append(serialize_instruction(ins))
    return "\n".join(lines) + "\n"


def serialize_instruction(ins: Instruction, suffix: str = "") -> str:
    guard = " & ".join(str(a) for a in ins.guard) if ins.guard else "-"
    args = ", ".join(str(s) for s in ins.srcs)
    body = f"{ins.dst} = {ins.opcode}({args})" if ins.dst else f"{ins.opcode}({args})"
    state = f"{ins.state_ref[0]}:{ins.state_ref[1]}" if ins.state_ref else "-"
    line = f"{ins.index} | {guard} | {body} | state={state} | class={ins.cap_class}"
    flags = []
    if ins.is_float:
        flags.append("float")
    if ins.fwd_decision:
        flags.append("fwdd")
    if flags:
        line += " | " + ",".join(flags)
    return line + suffix


def parse_program(text: str) -> IRProgram:
    prog = IRProgram()
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith(".header "):
            _, name, bits = line.split()
            prog.header_fields.append((name, int(bits)))
        elif line.startswith(".state "):
            parts = line.split()
            kw = dict(p.split("=", 1) for p in parts[3:])
            prog.declared_states[parts[1]] = StateDecl(
                name=parts[1], kind=parts[2], depth=int(kw["depth"]),
                width=int(kw["width"]), match_kind=kw["match"],
                stateful=bool(int(kw["stateful"])),
            )
        elif line.startswith(".var "):
            _, name, bits = line.split()
            prog.var_width[name] = int(bits)
        elif line.startswith(".head_end "):
            prog.head_end = int(line.split()[1])
        elif line.startswith(".tail_start "):
            prog.tail_start = int(line.split()[1])
        else:
            prog.instructions.append(parse_instruction(line))
    # Names of declared pure objects parse as plain vars; re-tag them.
    object_names = {n for n, d in prog.declared_states.items()
                    if d.kind in ("hash", "crypto", "port")}
    if object_names:
        for ins in prog.instructions:
            ins.srcs = tuple(
                Operand("obj", s.value) if s.kind == "var" and s.value in object_names else s
                for s in ins.srcs)
    return prog


def parse_instruction(line: str) -> Instruction:
    parts = [p.strip() for p in line.split(" | ")]
    if len(parts) < 5:
        raise ValueError(f"malformed IR line: {line!r}")
    idx = int(parts[0])
    guard = ()
    if parts[1] != "-":
        guard = tuple(GuardAtom.parse(a) for a in parts[1].split(" & "))
    body = parts[2]
    dst = None
    if " = " in body:
        dst, body = body.split(" = ", 1)
        dst = dst.strip()
    opcode, argtext = body.split("(", 1)
    argtext = argtext.rstrip(")")
    srcs = tuple(Operand.parse(a) for a in argtext.split(",")) if argtext.strip() else ()
    state_ref = None
    sfield = parts[3][len("state="):]
    if sfield != "-":
        name, role = sfield.rsplit(":", 1)
        state_ref = (name, role)
    cap = parts[4][len("class="):]
    ins = Instruction(index=idx, opcode=opcode.strip(), dst=dst, srcs=srcs,
                      guard=guard, state_ref=state_ref, cap_class=cap)
    if len(parts) > 5:
        flags = parts[5].split(",")
        ins.is_float = "float" in flags
        ins.fwd_decision = "fwdd" in flags
    return ins
