"""AST node types for the surface language, with a source re-serializer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


@dataclass
class Node:
    pass


# -- expressions -------------------------------------------------------------

@dataclass
class Num(Node):
    value: object  # int or float


@dataclass
class Str(Node):
    value: str


@dataclass
class Name(Node):
    id: str
    line: int = 0
    col: int = 0


@dataclass
class FieldRef(Node):
    base: str
    attr: str

    @property
    def full(self) -> str:
        return f"{self.base}.{self.attr}"


@dataclass
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass
class UnaryOp(Node):
    op: str
    operand: Node


@dataclass
class Call(Node):
    func: str
    args: list = field(default_factory=list)
    kwargs: dict = field(default_factory=dict)
    line: int = 0
    col: int = 0


@dataclass
class Index(Node):
    base: str
    index: Node


# -- statements --------------------------------------------------------------

@dataclass
class Assign(Node):
    target: Node  # Name or FieldRef
    value: Node
    line: int = 0


@dataclass
class ExprStmt(Node):
    value: Call
    line: int = 0


@dataclass
class If(Node):
    cond: Node
    body: list
    orelse: list = field(default_factory=list)
    line: int = 0


@dataclass
class For(Node):
    var: str
    bounds: Call  # range(...)
    body: list = field(default_factory=list)
    line: int = 0


@dataclass
class Import(Node):
    module: str
    names: list = field(default_factory=list)  # ["*"] for star imports
    line: int = 0


@dataclass
class Pragma(Node):
    name: str
    line: int = 0


@dataclass
class TemplateDef(Node):
    name: str
    params: list = field(default_factory=list)
    body: list = field(default_factory=list)
    line: int = 0


@dataclass
class Program(Node):
    body: list = field(default_factory=list)


# -- re-serialization --------------------------------------------------------

_PRECEDENCE = {
    "or": 1, "and": 2,
    "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "|": 4, "^": 5, "&": 6, "<<": 7, ">>": 7,
    "+": 8, "-": 8, "*": 9, "/": 9, "//": 9, "%": 9,
}


def unparse_expr(node: Node, parent_prec: int = 0) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Str):
        return repr(node.value)
    if isinstance(node, Name):
        return node.id
    if isinstance(node, FieldRef):
        return node.full
    if isinstance(node, Index):
        return f"{node.base}[{unparse_expr(node.index)}]"
    if isinstance(node, UnaryOp):
        inner = unparse_expr(node.operand, 10)
        return f"not {inner}" if node.op == "not" else f"{node.op}{inner}"
    if isinstance(node, BinOp):
        prec = _PRECEDENCE[node.op]
        text = f"{unparse_expr(node.left, prec)} {node.op} {unparse_expr(node.right, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(node, Call):
        parts = [unparse_expr(a) for a in node.args]
        parts += [f"{k}={unparse_expr(v)}" for k, v in node.kwargs.items()]
        return f"{node.func}({', '.join(parts)})"
    raise TypeError(f"cannot unparse {node!r}")


def unparse(stmts, indent: int = 0) -> str:
    pad = "    " * indent
    out = []
    for s in stmts:
        if isinstance(s, Assign):
            out.append(f"{pad}{unparse_expr(s.target)} = {unparse_expr(s.value)}")
        elif isinstance(s, ExprStmt):
            out.append(f"{pad}{unparse_expr(s.value)}")
        elif isinstance(s, If):
            out.append(f"{pad}if {unparse_expr(s.cond)}:")
            out.append(unparse(s.body, indent + 1))
            if s.orelse:
                out.append(f"{pad}else:")
                out.append(unparse(s.orelse, indent + 1))
        elif isinstance(s, For):
            out.append(f"{pad}for {s.var} in {unparse_expr(s.bounds)}:")
            out.append(unparse(s.body, indent + 1))
        elif isinstance(s, Import):
            out.append(f"{pad}from {s.module} import {', '.join(s.names)}")
        elif isinstance(s, Pragma):
            out.append(f"{pad}pragma {s.name}")
        elif isinstance(s, TemplateDef):
            out.append(f"{pad}template {s.name}({', '.join(s.params)}):")
            out.append(unparse(s.body, indent + 1))
        else:
            raise TypeError(f"cannot unparse {s!r}")
    return "\n".join(out)
