"""Frontend lowering passes: inline, unroll, predicate, SSA.

The pipeline is parse_and_inline -> unroll_loops -> predicate_branches ->
to_ssa. Each pass is a pure function over immutable inputs.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Optional

from .. import ir
from ..errors import (ArityMismatch, IncSyntaxError, NonConstantBound,
                      UnresolvedImport, UnrollLimitExceeded, UseBeforeDef)
from . import astnodes as A
from .library import Library, shipped_library
from .parser import parse_source
from .profile import Profile

MAX_UNROLL = 1024

OBJECT_CTORS = ("Array", "Table", "Hash", "Seq", "Sketch", "Crypto")
PRIMITIVES = ("get", "write", "clear", "count", "del", "drop", "fwd", "copy",
              "mirror", "multicast", "hash", "crypto", "match")
INTRINSICS = ("min", "max", "abs", "slice", "range", "hash", "crypto", "get",
              "count", "match")
PORTS = ("cpu",)


@dataclass
class SourceProgram:
    text: str
    profile: Optional[Profile] = None


# ---------------------------------------------------------------------------
# Pass 1: parse and inline template instances
# ---------------------------------------------------------------------------

def parse_and_inline(src, library: Optional[Library] = None) -> A.Program:
    """Parse the source and splice template bodies into the call sites.

    After this pass the AST has no calls on library templates left; built-in
    functions and primitives remain as intrinsic call nodes. Template-local
    names are mangled with the instance name (``inst__local``) so separate
    instances never collide.
    """
    text = src.text if isinstance(src, SourceProgram) else src
    library = library or shipped_library()
    prog = parse_source(text)

    imported = {}
    for stmt in prog.body:
        if isinstance(stmt, A.Import):
            if not library.has_module(stmt.module):
                raise UnresolvedImport(f"unknown module {stmt.module!r}")
            for name in stmt.names:
                if name == "*":
                    imported.update(library.modules[stmt.module])
                else:
                    imported[name] = library.resolve(stmt.module, name)

    instances = {}
    body = []
    for stmt in prog.body:
        if isinstance(stmt, A.Import):
            continue
        if (isinstance(stmt, A.Assign) and isinstance(stmt.target, A.Name)
                and isinstance(stmt.value, A.Call) and stmt.value.func in imported):
            tdef = imported[stmt.value.func]
            call = stmt.value
            if call.kwargs or len(call.args) != len(tdef.params):
                raise ArityMismatch(
                    f"{tdef.name} expects {len(tdef.params)} positional arguments, "
                    f"got {len(call.args)}", call.line, call.col)
            instances[stmt.target.id] = (tdef, list(call.args))
            continue
        if (isinstance(stmt, A.ExprStmt) and stmt.value.func in instances):
            call = stmt.value
            ok_args = (not call.args or
                       (len(call.args) == 1 and isinstance(call.args[0], A.Name)
                        and call.args[0].id == "hdr"))
            if not ok_args or call.kwargs:
                raise ArityMismatch(
                    f"instance call {call.func}(...) takes no arguments except hdr",
                    call.line, call.col)
            tdef, args = instances[call.func]
            body.extend(_instantiate(tdef, args, call.func))
            continue
        if isinstance(stmt, A.ExprStmt) and stmt.value.func in imported:
            raise IncSyntaxError(
                f"template {stmt.value.func!r} must be bound to an instance before use",
                stmt.line, 0)
        body.append(stmt)
    return A.Program(body=body)


def _instantiate(tdef: A.TemplateDef, args, instance: str) -> list:
    subst = dict(zip(tdef.params, args))
    locals_ = set(tdef.params)
    _collect_locals(tdef.body, locals_)
    renames = {n: f"{instance}__{n}" for n in locals_ if n not in subst}
    return [_rewrite(copy.deepcopy(s), subst, renames) for s in tdef.body]


def _collect_locals(stmts, out: set) -> None:
    for s in stmts:
        if isinstance(s, A.Assign) and isinstance(s.target, A.Name):
            out.add(s.target.id)
        elif isinstance(s, A.If):
            _collect_locals(s.body, out)
            _collect_locals(s.orelse, out)
        elif isinstance(s, A.For):
            out.add(s.var)
            _collect_locals(s.body, out)


def _rewrite(node, subst: dict, renames: dict):
    """Substitute template parameters and apply local-name mangling in place."""
    if isinstance(node, list):
        return [_rewrite(n, subst, renames) for n in node]
    if isinstance(node, A.Name):
        if node.id in subst:
            return copy.deepcopy(subst[node.id])
        if node.id in renames:
            return A.Name(id=renames[node.id], line=node.line, col=node.col)
        return node
    if isinstance(node, A.Num) or isinstance(node, A.Str) or isinstance(node, A.FieldRef):
        return node
    if isinstance(node, A.BinOp):
        node.left = _rewrite(node.left, subst, renames)
        node.right = _rewrite(node.right, subst, renames)
        return node
    if isinstance(node, A.UnaryOp):
        node.operand = _rewrite(node.operand, subst, renames)
        return node
    if isinstance(node, A.Call):
        node.args = [_rewrite(a, subst, renames) for a in node.args]
        node.kwargs = {k: _rewrite(v, subst, renames) for k, v in node.kwargs.items()}
        if node.func in renames:
            node.func = renames[node.func]
        return node
    if isinstance(node, A.Index):
        if node.base in subst:
            raise IncSyntaxError(f"cannot index template parameter {node.base!r}")
        if node.base in renames:
            node.base = renames[node.base]
        node.index = _rewrite(node.index, subst, renames)
        return node
    if isinstance(node, A.Assign):
        node.target = _rewrite(node.target, subst, renames)
        node.value = _rewrite(node.value, subst, renames)
        return node
    if isinstance(node, A.ExprStmt):
        node.value = _rewrite(node.value, subst, renames)
        return node
    if isinstance(node, A.If):
        node.cond = _rewrite(node.cond, subst, renames)
        node.body = _rewrite(node.body, subst, renames)
        node.orelse = _rewrite(node.orelse, subst, renames)
        return node
    if isinstance(node, A.For):
        if node.var in renames:
            node.var = renames[node.var]
        node.bounds = _rewrite(node.bounds, subst, renames)
        node.body = _rewrite(node.body, subst, renames)
        return node
    if isinstance(node, A.Pragma):
        return node
    raise TypeError(f"cannot rewrite {node!r}")


# ---------------------------------------------------------------------------
# Pass 2: loop unrolling with constant folding
# ---------------------------------------------------------------------------

_FOLD_OPS = {
    "+": lambda a, b: a + b, "-": lambda a, b: a - b,
    "*": lambda a, b: a * b, "//": lambda a, b: a // b,
    "/": lambda a, b: a / b, "%": lambda a, b: a % b,
    "&": lambda a, b: a & b, "|": lambda a, b: a | b,
    "^": lambda a, b: a ^ b, "<<": lambda a, b: a << b,
    ">>": lambda a, b: a >> b,
    "==": lambda a, b: int(a == b), "!=": lambda a, b: int(a != b),
    "<": lambda a, b: int(a < b), "<=": lambda a, b: int(a <= b),
    ">": lambda a, b: int(a > b), ">=": lambda a, b: int(a >= b),
    "and": lambda a, b: int(bool(a) and bool(b)),
    "or": lambda a, b: int(bool(a) or bool(b)),
}


def fold_expr(node, env: dict):
    """Fold constant subexpressions; returns a (possibly new) node."""
    if isinstance(node, A.Name) and node.id in env:
        return A.Num(env[node.id])
    if isinstance(node, A.BinOp):
        left = fold_expr(node.left, env)
        right = fold_expr(node.right, env)
        if isinstance(left, A.Num) and isinstance(right, A.Num) and node.op in _FOLD_OPS:
            return A.Num(_FOLD_OPS[node.op](left.value, right.value))
        return A.BinOp(node.op, left, right)
    if isinstance(node, A.UnaryOp):
        inner = fold_expr(node.operand, env)
        if isinstance(inner, A.Num):
            if node.op == "-":
                return A.Num(-inner.value)
            if node.op == "~":
                return A.Num(~inner.value)
            if node.op == "not":
                return A.Num(int(not inner.value))
        return A.UnaryOp(node.op, inner)
    if isinstance(node, A.Call):
        return A.Call(node.func, [fold_expr(a, env) for a in node.args],
                      {k: fold_expr(v, env) for k, v in node.kwargs.items()},
                      node.line, node.col)
    if isinstance(node, A.Index):
        return A.Index(node.base, fold_expr(node.index, env))
    return node


def _const_of(node) -> Optional[int]:
    return node.value if isinstance(node, A.Num) else None


def unroll_loops(ast: A.Program) -> A.Program:
    """Clone loop bodies per iteration; every trip count must be constant."""
    env: dict = {}
    body = _unroll_block(ast.body, env, set())
    return A.Program(body=body)


def _unroll_block(stmts, env: dict, active_vars: set) -> list:
    out = []
    for stmt in stmts:
        if isinstance(stmt, A.Assign):
            value = fold_expr(stmt.value, env)
            if isinstance(stmt.target, A.Name):
                c = _const_of(value)
                if c is not None and not isinstance(stmt.value, A.Call):
                    env[stmt.target.id] = c
                else:
                    env.pop(stmt.target.id, None)
            out.append(A.Assign(target=stmt.target, value=value, line=stmt.line))
        elif isinstance(stmt, A.ExprStmt):
            out.append(A.ExprStmt(value=fold_expr(stmt.value, env), line=stmt.line))
        elif isinstance(stmt, A.If):
            cond = fold_expr(stmt.cond, env)
            c = _const_of(cond)
            if c is not None:
                taken = stmt.body if c else stmt.orelse
                out.extend(_unroll_block(taken, dict(env), active_vars))
                continue
            # Branch bodies cannot update the constant environment seen by
            # later statements: a conditional write makes the value unknown.
            body = _unroll_block(stmt.body, dict(env), active_vars)
            orelse = _unroll_block(stmt.orelse, dict(env), active_vars)
            for name in _assigned_names(stmt.body) | _assigned_names(stmt.orelse):
                env.pop(name, None)
            out.append(A.If(cond=cond, body=body, orelse=orelse, line=stmt.line))
        elif isinstance(stmt, A.For):
            out.extend(_unroll_for(stmt, env, active_vars))
        elif isinstance(stmt, (A.Pragma,)):
            out.append(stmt)
        else:
            raise TypeError(f"unexpected statement {stmt!r}")
    return out


def _assigned_names(stmts) -> set:
    names = set()
    _collect_locals(stmts, names)
    return names


def _unroll_for(stmt: A.For, env: dict, active_vars: set) -> list:
    if stmt.var in active_vars:
        raise IncSyntaxError(f"loop variable {stmt.var!r} shadows an enclosing loop",
                             stmt.line, 0)
    bounds = [fold_expr(a, env) for a in stmt.bounds.args]
    values = [_const_of(b) for b in bounds]
    if any(v is None for v in values) or not 1 <= len(values) <= 3:
        raise NonConstantBound(
            f"loop bound for {stmt.var!r} is not a compile-time constant", stmt.line, 0)
    if len(values) == 1:
        start, stop, step = 0, values[0], 1
    elif len(values) == 2:
        start, stop, step = values[0], values[1], 1
    else:
        start, stop, step = values
    trips = list(range(start, stop, step))
    if len(trips) > MAX_UNROLL:
        raise UnrollLimitExceeded(
            f"loop over {stmt.var!r} unrolls to {len(trips)} > {MAX_UNROLL} iterations",
            stmt.line, 0)
    out = []
    iter_env = dict(env)  # shared across iterations: constants flow forward
    for value in trips:
        iter_env[stmt.var] = value
        cloned = copy.deepcopy(stmt.body)
        out.extend(_unroll_block(cloned, iter_env, active_vars | {stmt.var}))
    # Iteration-local constants must not leak; the loop variable is dead.
    for name in _assigned_names(stmt.body) | {stmt.var}:
        env.pop(name, None)
    return out


# ---------------------------------------------------------------------------
# Pass 3: branch predication
# ---------------------------------------------------------------------------

@dataclass
class PredicatedStmt:
    """A simple statement plus its path condition (conjunction of (expr, polarity))."""

    stmt: A.Node
    path: tuple = ()


def predicate_branches(ast: A.Program) -> list:
    """Flatten a loop-free AST into guarded simple statements."""
    out: list = []
    _predicate_block(ast.body, (), out)
    return out


def _predicate_block(stmts, path, out) -> None:
    for stmt in stmts:
        if isinstance(stmt, A.If):
            _predicate_block(stmt.body, path + ((stmt.cond, True),), out)
            if stmt.orelse:
                _predicate_block(stmt.orelse, path + ((stmt.cond, False),), out)
        elif isinstance(stmt, A.For):
            raise IncSyntaxError("loops must be unrolled before predication", stmt.line, 0)
        else:
            out.append(PredicatedStmt(stmt=stmt, path=tuple(path)))


# ---------------------------------------------------------------------------
# Pass 4: SSA construction and IR emission
# ---------------------------------------------------------------------------

_CALC_OP = {"+": "add", "-": "sub", "&": "and", "|": "or", "^": "xor",
            "<<": "shl", ">>": "shr", "*": "mul", "//": "div", "/": "div",
            "%": "mod", "==": "eq", "!=": "ne", "<": "lt", "<=": "le",
            ">": "gt", ">=": "ge", "and": "land", "or": "lor"}
_CMP_TOKEN = {"eq": "==", "ne": "!=", "lt": "<", "le": "<=", "gt": ">", "ge": ">="}


@dataclass
class _Def:
    """One definition event of a user variable."""

    id: int
    varname: str
    guard: tuple
    parent: int = -1          # union-find link
    const_value: object = None


class _SsaBuilder:
    def __init__(self, profile: Optional[Profile]):
        self.profile = profile
        self.instructions: list = []
        self.states: dict = {}
        self.objects: dict = {}   # surface name -> ("array"|"hash"|..., row count)
        self.defs: list = []      # all _Def records
        self.live: dict = {}      # varname -> list of live def ids
        self.temp_count = 0
        self.var_width: dict = {}
        self.def_width: dict = {}
        self.fields_seen: list = []
        self.guard_memo: dict = {}
        self.head_end = None
        self.tail_start = None

    # -- union-find over definitions --

    def _root(self, did: int) -> int:
        while self.defs[did].parent >= 0:
            did = self.defs[did].parent
        return did

    def _union(self, a: int, b: int) -> int:
        ra, rb = self._root(a), self._root(b)
        if ra == rb:
            return ra
        lo, hi = min(ra, rb), max(ra, rb)
        self.defs[hi].parent = lo
        return lo

    # -- emission helpers --

    def emit(self, **kw) -> ir.Instruction:
        ins = ir.Instruction(index=len(self.instructions), **kw)
        self.instructions.append(ins)
        return ins

    def new_temp(self, width: int) -> str:
        self.temp_count += 1
        name = f"_t{self.temp_count}"
        self.var_width[name] = width
        return name

    def _dst(self, dst_hint, width: int) -> str:
        # dst_hint may be a ready name or a factory deferred until the
        # operands are lowered (so self-references read the prior version)
        name = dst_hint() if callable(dst_hint) else dst_hint
        if name is None:
            name = self.new_temp(width)
        self.def_width[name] = width
        return name

    def width_of(self, op: ir.Operand) -> int:
        if op.kind == "var":
            return self.var_width.get(op.value, 32)
        if op.kind == "field":
            return self._field_width(op.value)
        return 32

    def _field_width(self, name: str) -> int:
        for fname, bits in self.fields_seen:
            if fname == name:
                return bits
        return 32

    def note_field(self, name: str) -> None:
        if all(f != name for f, _ in self.fields_seen):
            self.fields_seen.append((name, 32))

    # -- declarations --

    def declare(self, name: str, call: A.Call) -> None:
        kw = {k: _require_const(v, k) for k, v in call.kwargs.items()
              if not isinstance(v, A.Str)}
        strkw = {k: v.value for k, v in call.kwargs.items() if isinstance(v, A.Str)}
        ctor = call.func
        if ctor in ("Array", "Seq"):
            kind = "array" if ctor == "Array" else "seq"
            self._declare_rows(name, kw.get("row", 1), kind,
                               depth=kw.get("size", 1), width=kw.get("w", 32))
        elif ctor == "Hash":
            size = kw.get("size", kw.get("ceil", 1 << 16))
            width = max(1, (size - 1).bit_length()) if size > 1 else 1
            self._declare_rows(name, kw.get("row", 1), "hash", depth=size, width=width)
        elif ctor == "Table":
            match_kind = strkw.get("type", "exact")
            if match_kind not in ("exact", "ternary", "lpm", "index"):
                raise IncSyntaxError(f"unknown table type {match_kind!r}", call.line, call.col)
            self.states[name] = ir.StateDecl(
                name=name, kind="table", depth=kw.get("size", 1024),
                width=kw.get("w", 32), match_kind=match_kind, stateful=False)
            self.objects[name] = ("table", 1)
        elif ctor == "Sketch":
            stype = strkw.get("type", "count-min")
            rows = kw.get("rows", kw.get("row", 3))
            depth = kw.get("size", 1024)
            width = 1 if stype == "bloom-filter" else kw.get("w", 32)
            hwidth = max(1, (depth - 1).bit_length())
            for r in range(rows):
                aname, hname = f"{name}__a{r}", f"{name}__h{r}"
                self.states[aname] = ir.StateDecl(aname, "array", depth, width)
                self.states[hname] = ir.StateDecl(hname, "hash", depth, hwidth,
                                                  stateful=False)
            self.objects[name] = ("sketch:" + stype, rows)
        elif ctor == "Crypto":
            self.states[name] = ir.StateDecl(name, "crypto", 1, 32, stateful=False)
            self.objects[name] = ("crypto", 1)
        else:
            raise IncSyntaxError(f"unknown object constructor {ctor!r}", call.line, call.col)

    def _declare_rows(self, name: str, rows: int, kind: str, depth: int, width: int) -> None:
        stateful = kind != "hash"
        names = [name] if rows <= 1 else [f"{name}_{r}" for r in range(rows)]
        for rname in names:
            self.states[rname] = ir.StateDecl(name=rname, kind=kind, depth=depth,
                                              width=width, stateful=stateful)
        self.objects[name] = (kind, rows)

    def state_for(self, node, line=0) -> str:
        """Resolve an object reference (Name or Index with constant) to a state name."""
        if isinstance(node, A.Name):
            base, idx = node.id, None
        elif isinstance(node, A.Index):
            if not isinstance(node.index, A.Num):
                raise NonConstantBound(
                    f"object index on {node.base!r} is not a compile-time constant", line, 0)
            base, idx = node.base, node.index.value
        else:
            raise IncSyntaxError("expected an object reference", line, 0)
        if base not in self.objects:
            raise UseBeforeDef(f"undeclared object {base!r}", line, 0)
        kind, rows = self.objects[base]
        if rows <= 1:
            if idx not in (None, 0):
                raise IncSyntaxError(f"object {base!r} has a single row", line, 0)
            return base
        if idx is None:
            raise IncSyntaxError(f"object {base!r} needs a row index", line, 0)
        if not 0 <= idx < rows:
            raise IncSyntaxError(f"row {idx} out of range for {base!r}", line, 0)
        return f"{base}_{idx}"

    # -- SSA variable bookkeeping --

    def write_var(self, varname: str, guard: tuple, const_value=None) -> str:
        """Record a definition event; returns the placeholder destination name."""
        gset = frozenset(guard)
        live = self.live.setdefault(varname, [])
        live[:] = [d for d in live
                   if not gset.issubset(frozenset(self.defs[d].guard))]
        did = len(self.defs)
        self.defs.append(_Def(id=did, varname=varname, guard=tuple(guard),
                              const_value=const_value))
        live.append(did)
        return f"%{did}"

    def read_var(self, varname: str, guard: tuple, line=0) -> ir.Operand:
        if varname in self.objects:
            raise IncSyntaxError(f"object {varname!r} used as a value", line, 0)
        cands = [d for d in self.live.get(varname, ())
                 if not _guards_conflict(guard, self.defs[d].guard)]
        if not cands:
            raise UseBeforeDef(f"variable {varname!r} read before assignment", line, 0)
        for other in cands[1:]:
            self._union(cands[0], other)
        return ir.Operand("var", f"%{cands[0]}")

    # -- guard lowering --

    def lower_guard(self, path: tuple) -> tuple:
        atoms: tuple = ()
        for cond, pol in path:
            key = (id(cond), pol)
            if key not in self.guard_memo:
                self.guard_memo[key] = self._cond_atoms(cond, pol, atoms)
            atoms = atoms + self.guard_memo[key]
        return atoms

    def _cond_atoms(self, cond, pol: bool, prefix: tuple) -> tuple:
        conj = _flatten_conjunction(cond)
        if conj is not None and all(_is_comparison(c) for c in conj):
            if pol:
                return tuple(self._comparison_atom(c, prefix) for c in conj)
            if len(conj) == 1:
                return (self._comparison_atom(conj[0], prefix).negated(),)
        op = self.lower_expr(cond, prefix)
        cmp = "!=" if pol else "=="
        return (ir.GuardAtom(op, cmp, ir.const(0)),)

    def _comparison_atom(self, cond: A.BinOp, prefix: tuple) -> ir.GuardAtom:
        lhs = self.lower_expr(cond.left, prefix)
        rhs = self.lower_expr(cond.right, prefix)
        return ir.GuardAtom(lhs, cond.op, rhs)

    # -- expression lowering --

    def lower_expr(self, node, guard: tuple) -> ir.Operand:
        if isinstance(node, A.Num):
            return ir.const(node.value)
        if isinstance(node, A.Name):
            return self.read_var(node.id, guard, node.line)
        if isinstance(node, A.FieldRef):
            self.note_field(node.full)
            return ir.fieldref(node.full)
        if isinstance(node, A.BinOp):
            lhs = self.lower_expr(node.left, guard)
            rhs = self.lower_expr(node.right, guard)
            return self._emit_calc(node.op, lhs, rhs, guard)
        if isinstance(node, A.UnaryOp):
            inner = self.lower_expr(node.operand, guard)
            if node.op == "-":
                return self._emit_calc("-", ir.const(0), inner, guard)
            if node.op == "~":
                dst = self.new_temp(self.width_of(inner))
                self.emit(opcode="calc.not", dst=dst, srcs=(inner,), guard=guard)
                return ir.var(dst)
            dst = self.new_temp(1)
            self.emit(opcode="calc.eq", dst=dst, srcs=(inner, ir.const(0)), guard=guard)
            return ir.var(dst)
        if isinstance(node, A.Call):
            return self.lower_call(node, guard, dst_hint=None)
        if isinstance(node, A.Index):
            raise IncSyntaxError(
                f"{node.base!r}[...] cannot be read directly; use get()", 0, 0)
        raise IncSyntaxError(f"cannot lower expression {node!r}")

    def _emit_calc(self, op: str, lhs, rhs, guard, dst_hint=None,
                   is_float=False) -> ir.Operand:
        sub = _CALC_OP[op]
        if sub in ("eq", "ne", "lt", "le", "gt", "ge", "land", "lor"):
            width = 1
        else:
            width = max(self.width_of(lhs), self.width_of(rhs))
        dst = self._dst(dst_hint, width)
        self.emit(opcode=f"calc.{sub}", dst=dst, srcs=(lhs, rhs), guard=guard,
                  is_float=is_float)
        return ir.var(dst)

    def lower_call(self, call: A.Call, guard: tuple, dst_hint) -> Optional[ir.Operand]:
        """Lower an intrinsic or primitive call; returns the result operand (if any)."""
        fn = call.func
        args = call.args

        def operand(i):
            return self.lower_expr(args[i], guard)

        def need(n):
            if len(args) != n or call.kwargs:
                raise ArityMismatch(f"{fn}() expects {n} arguments", call.line, call.col)

        if fn in ("min", "max"):
            need(2)
            lhs, rhs = operand(0), operand(1)
            folded = self._fold_minmax_identity(fn, lhs, rhs)
            if folded is not None:
                return self._bind_or_assign(folded, dst_hint, guard)
            return self._emit_calc_named(fn, (lhs, rhs), guard, dst_hint)
        if fn == "abs":
            need(1)
            return self._emit_calc_named("abs", (operand(0),), guard, dst_hint)
        if fn in ("f2i", "i2f"):
            src = operand(0)
            scale = operand(1) if len(args) > 1 else ir.const(1)
            width = self.width_of(src)
            dst = self._dst(dst_hint, width)
            self.emit(opcode=f"calc.{fn}", dst=dst, srcs=(src, scale), guard=guard,
                      is_float=True)
            return ir.var(dst)
        if fn == "slice":
            need(3)
            if not isinstance(args[1], A.Num) or not isinstance(args[2], A.Num):
                raise NonConstantBound("slice bounds must be constants",
                                       call.line, call.col)
            hi, lo = args[1].value, args[2].value
            if hi < lo or lo < 0:
                raise IncSyntaxError(f"bad slice bounds [{hi}:{lo}]", call.line, call.col)
            src = operand(0)
            width = hi - lo + 1
            dst = self._dst(dst_hint, width)
            # bounds are packed into one constant operand: (hi << 16) | lo
            self.emit(opcode="calc.slice", dst=dst,
                      srcs=(src, ir.const((hi << 16) | lo)), guard=guard)
            return ir.var(dst)
        if fn == "hash":
            if len(args) != 2:
                raise ArityMismatch("hash() expects (object, key)", call.line, call.col)
            sname = self.state_for(args[0], call.line)
            if self.states[sname].kind != "hash":
                raise IncSyntaxError(f"{sname!r} is not a hash object", call.line, call.col)
            key = self.lower_expr(args[1], guard)
            width = self.states[sname].width
            dst = self._dst(dst_hint, width)
            self.emit(opcode="hash", dst=dst, srcs=(ir.Operand("obj", sname), key),
                      guard=guard)
            return ir.var(dst)
        if fn == "crypto":
            need(2)
            sname = self.state_for(args[0], call.line)
            src = self.lower_expr(args[1], guard)
            width = self.width_of(src)
            dst = self._dst(dst_hint, width)
            self.emit(opcode="crypto", dst=dst, srcs=(ir.Operand("obj", sname), src),
                      guard=guard)
            return ir.var(dst)
        if fn in ("get", "match"):
            return self._lower_get(call, guard, dst_hint)
        if fn == "count":
            return self._lower_count(call, guard, dst_hint)
        if fn in ("write", "clear", "del"):
            return self._lower_state_write(call, guard)
        if fn == "drop":
            need(0)
            self.emit(opcode="drop", guard=guard, fwd_decision=True)
            return None
        if fn == "fwd":
            need(0)
            self.emit(opcode="fwd", guard=guard, fwd_decision=True)
            return None
        if fn == "copy":
            need(2)
            if not isinstance(args[0], A.Name) or args[0].id not in PORTS:
                raise IncSyntaxError(f"copy() target must be one of {PORTS}",
                                     call.line, call.col)
            port = args[0].id
            if port not in self.states:
                self.states[port] = ir.StateDecl(port, "port", stateful=False)
                self.objects[port] = ("port", 1)
            val = self.lower_expr(args[1], guard)
            self.emit(opcode="copy", srcs=(ir.Operand("obj", port), val), guard=guard,
                      fwd_decision=True)
            return None
        if fn == "mirror":
            need(0)
            self.emit(opcode="mirror", guard=guard)
            return None
        if fn == "multicast":
            need(1)
            self.emit(opcode="multicast", srcs=(operand(0),), guard=guard)
            return None
        raise IncSyntaxError(f"unknown function {fn!r}", call.line, call.col)

    def _emit_calc_named(self, sub: str, srcs, guard, dst_hint) -> ir.Operand:
        width = max(self.width_of(s) for s in srcs)
        dst = self._dst(dst_hint, width)
        self.emit(opcode=f"calc.{sub}", dst=dst, srcs=tuple(srcs), guard=guard)
        return ir.var(dst)

    def _fold_minmax_identity(self, fn, lhs, rhs) -> Optional[ir.Operand]:
        """min(all-ones, x) -> x and max(0, x) -> x, looking through def consts."""
        for a, b in ((lhs, rhs), (rhs, lhs)):
            cv = self._const_behind(a)
            if cv is None:
                continue
            if fn == "min" and cv >= (1 << self.width_of(b)) - 1:
                return b
            if fn == "max" and cv == 0:
                return b
        return None

    def _const_behind(self, op: ir.Operand):
        if op.kind == "const" and isinstance(op.value, int):
            return op.value
        if op.kind == "var" and op.value.startswith("%"):
            root = self._root(int(op.value[1:]))
            group = [d for d in self.defs if self._root(d.id) == root]
            if len(group) == 1 and not group[0].guard:
                return group[0].const_value
        return None

    def _bind_or_assign(self, op: ir.Operand, dst_hint, guard) -> ir.Operand:
        if dst_hint is None:
            return op
        dst = self._dst(dst_hint, self.width_of(op))
        self.emit(opcode="assign", dst=dst, srcs=(op,), guard=guard)
        return ir.var(dst)

    def _lower_get(self, call: A.Call, guard, dst_hint) -> ir.Operand:
        if len(call.args) != 2:
            raise ArityMismatch("get() expects (object, index)", call.line, call.col)
        objnode = call.args[0]
        base = objnode.id if isinstance(objnode, A.Name) else objnode.base
        kind, rows = self._object_kind(base, call.line)
        key = self.lower_expr(call.args[1], guard)
        if kind.startswith("sketch:"):
            return self._sketch_get(base, kind, rows, call.args[1], guard, dst_hint)
        sname = self.state_for(objnode, call.line)
        decl = self.states[sname]
        if decl.kind == "table":
            opcode, role = "match", "read"
        elif decl.kind in ("array", "seq"):
            opcode, role = "get", "read"
        else:
            raise IncSyntaxError(f"cannot get() from {decl.kind} object", call.line, call.col)
        dst = self._dst(dst_hint, decl.width)
        self.emit(opcode=opcode, dst=dst, srcs=(key,), guard=guard,
                  state_ref=(sname, role))
        return ir.var(dst)

    def _lower_count(self, call: A.Call, guard, dst_hint) -> Optional[ir.Operand]:
        if len(call.args) not in (2, 3):
            raise ArityMismatch("count() expects (object, index[, amount])",
                                call.line, call.col)
        objnode = call.args[0]
        base = objnode.id if isinstance(objnode, A.Name) else objnode.base
        kind, rows = self._object_kind(base, call.line)
        amount = (self.lower_expr(call.args[2], guard) if len(call.args) == 3
                  else ir.const(1))
        if kind.startswith("sketch:"):
            key = call.args[1]
            for r in range(rows):
                idx = self._sketch_index(base, r, key, guard)
                self.emit(opcode="count", srcs=(idx, amount), guard=guard,
                          state_ref=(f"{base}__a{r}", "rmw"))
            if dst_hint is not None:
                raise IncSyntaxError("count() on a sketch returns no value",
                                     call.line, call.col)
            return None
        sname = self.state_for(objnode, call.line)
        decl = self.states[sname]
        if decl.kind not in ("array", "seq"):
            raise IncSyntaxError(f"cannot count() on {decl.kind} object",
                                 call.line, call.col)
        idx = self.lower_expr(call.args[1], guard)
        dst = self._dst(dst_hint, decl.width) if dst_hint is not None else None
        self.emit(opcode="count", dst=dst, srcs=(idx, amount), guard=guard,
                  state_ref=(sname, "rmw"))
        return ir.var(dst) if dst is not None else None

    def _lower_state_write(self, call: A.Call, guard) -> None:
        fn = call.func
        want = 3 if fn == "write" else 2
        if len(call.args) != want:
            raise ArityMismatch(f"{fn}() expects {want} arguments", call.line, call.col)
        objnode = call.args[0]
        base = objnode.id if isinstance(objnode, A.Name) else objnode.base
        kind, rows = self._object_kind(base, call.line)
        if kind.startswith("sketch:"):
            amount = (self.lower_expr(call.args[2], guard) if fn == "write"
                      else ir.const(0))
            for r in range(rows):
                idx = self._sketch_index(base, r, call.args[1], guard)
                self.emit(opcode="write" if fn == "write" else "clear",
                          srcs=(idx, amount) if fn == "write" else (idx,),
                          guard=guard, state_ref=(f"{base}__a{r}", "write"))
            return None
        sname = self.state_for(objnode, call.line)
        key = self.lower_expr(call.args[1], guard)
        if fn == "write":
            val = self.lower_expr(call.args[2], guard)
            self.emit(opcode="write", srcs=(key, val), guard=guard,
                      state_ref=(sname, "write"))
        else:
            self.emit(opcode=fn, srcs=(key,), guard=guard, state_ref=(sname, "write"))
        return None

    def _object_kind(self, base: str, line: int):
        if base not in self.objects:
            raise UseBeforeDef(f"undeclared object {base!r}", line, 0)
        return self.objects[base]

    def _sketch_index(self, base: str, row: int, key_node, guard) -> ir.Operand:
        key = self.lower_expr(key_node, guard)
        hname = f"{base}__h{row}"
        dst = self.new_temp(self.states[hname].width)
        self.emit(opcode="hash", dst=dst, srcs=(ir.Operand("obj", hname), key),
                  guard=guard)
        self.def_width[dst] = self.states[hname].width
        return ir.var(dst)

    def _sketch_get(self, base: str, kind: str, rows: int, key_node, guard,
                    dst_hint) -> ir.Operand:
        reads = []
        for r in range(rows):
            idx = self._sketch_index(base, r, key_node, guard)
            aname = f"{base}__a{r}"
            dst = self.new_temp(self.states[aname].width)
            self.emit(opcode="get", dst=dst, srcs=(idx,), guard=guard,
                      state_ref=(aname, "read"))
            self.def_width[dst] = self.states[aname].width
            reads.append(ir.var(dst))
        combine = "min" if kind == "sketch:count-min" else "and"
        acc = reads[0]
        for r in reads[1:-1] if dst_hint is not None else reads[1:]:
            acc = self._emit_calc_named(combine, (acc, r), guard, None)
        if dst_hint is not None and len(reads) > 1:
            acc = self._emit_calc_named(combine, (acc, reads[-1]), guard, dst_hint)
        elif dst_hint is not None:
            acc = self._bind_or_assign(acc, dst_hint, guard)
        return acc

    # -- statements --

    def lower_stmt(self, pstmt: PredicatedStmt) -> None:
        stmt = pstmt.stmt
        if isinstance(stmt, A.Pragma):
            if pstmt.path:
                raise IncSyntaxError(f"pragma {stmt.name} must be unconditional",
                                     stmt.line, 0)
            if stmt.name == "head_end":
                self.head_end = len(self.instructions)
            elif stmt.name == "tail_start":
                self.tail_start = len(self.instructions)
            else:
                raise IncSyntaxError(f"unknown pragma {stmt.name!r}", stmt.line, 0)
            return
        if isinstance(stmt, A.Assign):
            self._lower_assign(stmt, pstmt.path)
            return
        if isinstance(stmt, A.ExprStmt):
            guard = self.lower_guard(pstmt.path)
            result = self.lower_call(stmt.value, guard, dst_hint=None)
            if result is not None and stmt.value.func in ("get", "match", "hash", "crypto"):
                raise IncSyntaxError(
                    f"result of {stmt.value.func}() is discarded", stmt.line, 0)
            return
        raise IncSyntaxError(f"unsupported statement {type(stmt).__name__}",
                             getattr(stmt, "line", 0), 0)

    def _lower_assign(self, stmt: A.Assign, path: tuple) -> None:
        value = stmt.value
        if (isinstance(stmt.target, A.Name) and isinstance(value, A.Call)
                and value.func in OBJECT_CTORS):
            if path:
                raise IncSyntaxError("object declarations must be unconditional",
                                     stmt.line, 0)
            self.declare(stmt.target.id, value)
            return
        guard = self.lower_guard(path)
        if isinstance(stmt.target, A.FieldRef):
            self.note_field(stmt.target.full)
            op = self.lower_expr(value, guard)
            self.emit(opcode="assign", dst=stmt.target.full, srcs=(op,), guard=guard)
            return
        varname = stmt.target.id
        if varname.startswith("_t"):
            raise IncSyntaxError(f"identifier {varname!r} uses the reserved _t prefix",
                                 stmt.line, 0)
        const_value = value.value if isinstance(value, A.Num) else None
        if isinstance(value, A.Call) and value.func not in OBJECT_CTORS:
            out = self.lower_call(value, guard,
                                  dst_hint=lambda: self.write_var(varname, guard))
            if out is None:
                raise IncSyntaxError(f"{value.func}() returns no value", stmt.line, 0)
            return
        if isinstance(value, A.BinOp):
            lhs = self.lower_expr(value.left, guard)
            rhs = self.lower_expr(value.right, guard)
            dst = self.write_var(varname, guard)
            self._emit_calc(value.op, lhs, rhs, guard, dst_hint=dst)
            return
        if isinstance(value, A.UnaryOp):
            op = self.lower_expr(value, guard)
            dst = self.write_var(varname, guard)
            self.emit(opcode="assign", dst=dst, srcs=(op,), guard=guard)
            self.def_width[dst] = self.width_of(op)
            return
        op = self.lower_expr(value, guard)
        dst = self.write_var(varname, guard, const_value)
        self.emit(opcode="assign", dst=dst, srcs=(op,), guard=guard)
        self.def_width[dst] = self.width_of(op)

    # -- finalization --

    def finalize(self, footprint_model=None) -> ir.IRProgram:
        self._stamp_stateful_tables()
        self._cleanup()
        self._resolve_names()
        prog = ir.IRProgram(
            instructions=self.instructions,
            declared_states=dict(sorted(self.states.items())),
            header_fields=list(self.fields_seen),
            var_width=self.var_width,
            head_end=self.head_end,
            tail_start=self.tail_start,
        )
        for i, ins in enumerate(prog.instructions):
            ins.index = i
        prog.classify_all(footprint_model)
        return prog

    def _stamp_stateful_tables(self) -> None:
        written = {ins.state_ref[0] for ins in self.instructions
                   if ins.state_ref and ins.state_ref[1] in ("write", "rmw")}
        for name in written:
            decl = self.states[name]
            if decl.kind == "table" and not decl.stateful:
                self.states[name] = replace(decl, stateful=True)

    def _cleanup(self) -> None:
        """Copy-propagate pure moves and drop dead pure instructions."""
        changed = True
        while changed:
            changed = False
            alias: dict = {}
            for ins in self.instructions:
                if (ins.opcode == "assign" and not ins.guard and ins.dst
                        and ins.dst.startswith("%") and ins.srcs[0].kind == "var"
                        and self._group_size(ins.dst) == 1):
                    alias[ins.dst] = ins.srcs[0]
            if alias:
                def resolve(op):
                    seen = set()
                    while (op.kind == "var" and op.value in alias
                           and op.value not in seen):
                        seen.add(op.value)
                        op = alias[op.value]
                    return op

                for ins in self.instructions:
                    new_srcs = tuple(resolve(s) if s.kind == "var" else s
                                     for s in ins.srcs)
                    new_guard = tuple(
                        ir.GuardAtom(resolve(a.lhs), a.cmp, resolve(a.rhs))
                        for a in ins.guard)
                    if new_srcs != ins.srcs or new_guard != ins.guard:
                        ins.srcs, ins.guard = new_srcs, new_guard
                        changed = True
            read_counts: dict = {}
            for ins in self.instructions:
                for name in ins.reads():
                    read_counts[name] = read_counts.get(name, 0) + 1
            kept = []
            for ins in self.instructions:
                dead = (ins.dst is not None and "." not in ins.dst
                        and read_counts.get(ins.dst, 0) == 0
                        and (ins.opcode == "assign" or ins.opcode.startswith("calc.")))
                if dead:
                    changed = True
                    if self.head_end is not None and ins.index < self.head_end:
                        self.head_end -= 1
                    if self.tail_start is not None and ins.index < self.tail_start:
                        self.tail_start -= 1
                else:
                    kept.append(ins)
            self.instructions = kept
            for i, ins in enumerate(self.instructions):
                ins.index = i

    def _group_size(self, placeholder: str) -> int:
        root = self._root(int(placeholder[1:]))
        return sum(1 for d in self.defs if self._root(d.id) == root)

    def _resolve_names(self) -> None:
        # Group surviving definitions by union-find root, then name groups:
        # a single group keeps the bare variable name, multiple groups get
        # version suffixes in first-definition order.
        live_placeholders = set()
        for ins in self.instructions:
            if ins.dst and ins.dst.startswith("%"):
                live_placeholders.add(int(ins.dst[1:]))
            for name in ins.reads():
                if name.startswith("%"):
                    live_placeholders.add(int(name[1:]))
        groups: dict = {}
        for did in sorted(live_placeholders):
            root = self._root(did)
            groups.setdefault(root, []).append(did)
        by_var: dict = {}
        for root in sorted(groups):
            by_var.setdefault(self.defs[root].varname, []).append(root)
        names: dict = {}
        for varname, roots in by_var.items():
            if len(roots) == 1:
                names[roots[0]] = varname
            else:
                for k, root in enumerate(roots):
                    names[root] = f"{varname}_{k}"

        def final(name: str) -> str:
            if name.startswith("%"):
                return names[self._root(int(name[1:]))]
            return name

        for ins in self.instructions:
            if ins.dst and ins.dst.startswith("%"):
                width = self.def_width.get(ins.dst, 32)
                ins.dst = final(ins.dst)
                prev = self.var_width.get(ins.dst)
                self.var_width[ins.dst] = max(prev, width) if prev else width
            ins.srcs = tuple(
                ir.Operand("var", final(s.value)) if s.kind == "var" else s
                for s in ins.srcs)
            ins.guard = tuple(
                ir.GuardAtom(
                    ir.Operand("var", final(a.lhs.value)) if a.lhs.kind == "var" else a.lhs,
                    a.cmp,
                    ir.Operand("var", final(a.rhs.value)) if a.rhs.kind == "var" else a.rhs)
                for a in ins.guard)
        self.var_width = {k: v for k, v in self.var_width.items()
                          if not k.startswith("%")}
        used = set()
        for ins in self.instructions:
            if ins.dst and "." not in ins.dst:
                used.add(ins.dst)
        self.var_width = {k: v for k, v in sorted(self.var_width.items()) if k in used}


def _flatten_conjunction(node) -> Optional[list]:
    if isinstance(node, A.BinOp) and node.op == "and":
        left = _flatten_conjunction(node.left)
        right = _flatten_conjunction(node.right)
        if left is None or right is None:
            return None
        return left + right
    return [node]


def _is_comparison(node) -> bool:
    return isinstance(node, A.BinOp) and node.op in ("==", "!=", "<", "<=", ">", ">=")


def _guards_conflict(h, g) -> bool:
    """True when guard sets h and g contain complementary atoms."""
    hmap = {(a.lhs, a.rhs): a.cmp for a in h}
    for a in g:
        other = hmap.get((a.lhs, a.rhs))
        if other is not None and other == ir.CMP_NEGATE[a.cmp]:
            return True
    return False


def _require_const(node, what: str) -> int:
    if not isinstance(node, A.Num):
        raise NonConstantBound(f"declaration parameter {what!r} must be constant")
    return node.value


def to_ssa(pred_stmts: list, profile: Optional[Profile] = None,
           footprint_model=None) -> ir.IRProgram:
    """Emit the IR from predicated statements: SSA temporaries, split operands."""
    builder = _SsaBuilder(profile)
    if profile is not None:
        builder.fields_seen = list(profile.packet_format)
    for pstmt in pred_stmts:
        builder.lower_stmt(pstmt)
    return builder.finalize(footprint_model)


def compile_source(src, library: Optional[Library] = None,
                   profile: Optional[Profile] = None,
                   footprint_model=None) -> ir.IRProgram:
    """Run the full frontend pipeline on one source program."""
    if isinstance(src, SourceProgram) and src.profile is not None:
        profile = src.profile
    ast = parse_and_inline(src, library)
    ast = unroll_loops(ast)
    stmts = predicate_branches(ast)
    return to_ssa(stmts, profile, footprint_model)

