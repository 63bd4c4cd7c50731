"""Tokenizer and recursive-descent parser for the surface language.

The language is Python-flavored: indentation-delimited blocks, if/elif/else,
range-bounded for loops, assignments, and calls on INC objects/primitives.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import IncSyntaxError
from . import astnodes as A

KEYWORDS = {"if", "elif", "else", "for", "in", "from", "import", "and", "or",
            "not", "template", "pragma"}

_TOKEN_RE = re.compile(r"""
    (?P<number>0[xX][0-9a-fA-F]+|\d+\.\d+|\d+)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<string>"[^"]*"|'[^']*')
  | (?P<op><<|>>|//|==|!=|<=|>=|[-+*/%&|^~<>=(),:.\[\]])
  | (?P<ws>[ \t]+)
  | (?P<comment>\#.*)
""", re.VERBOSE)


@dataclass
class Token:
    kind: str
    value: str
    line: int
    col: int


def tokenize(text: str):
    tokens = []
    indents = [0]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        indent = len(stripped) - len(stripped.lstrip(" "))
        if "\t" in raw[:indent + 1]:
            raise IncSyntaxError("tabs are not allowed in indentation", lineno, 0)
        if indent > indents[-1]:
            indents.append(indent)
            tokens.append(Token("INDENT", "", lineno, 0))
        while indent < indents[-1]:
            indents.pop()
            tokens.append(Token("DEDENT", "", lineno, 0))
        if indent != indents[-1]:
            raise IncSyntaxError("inconsistent indentation", lineno, indent)
        pos = indent
        while pos < len(stripped):
            m = _TOKEN_RE.match(stripped, pos)
            if m is None:
                raise IncSyntaxError(f"unexpected character {stripped[pos]!r}", lineno, pos)
            kind = m.lastgroup
            if kind not in ("ws", "comment"):
                tokens.append(Token(kind, m.group(), lineno, pos))
            pos = m.end()
        tokens.append(Token("NEWLINE", "", lineno, pos))
    while len(indents) > 1:
        indents.pop()
        tokens.append(Token("DEDENT", "", 0, 0))
    tokens.append(Token("EOF", "", 0, 0))
    return tokens


class Parser:
    def __init__(self, text: str):
        if not text.strip():
            raise IncSyntaxError("empty program")
        self.tokens = tokenize(text)
        self.pos = 0

    # -- token helpers -------------------------------------------------------

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind, value=None) -> Token:
        tok = self.next()
        if tok.kind != kind or (value is not None and tok.value != value):
            want = value or kind
            raise IncSyntaxError(f"expected {want!r}, found {tok.value or tok.kind!r}",
                                 tok.line, tok.col)
        return tok

    def at_op(self, value: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.value == value

    def at_name(self, value: str) -> bool:
        tok = self.peek()
        return tok.kind == "name" and tok.value == value

    # -- grammar -------------------------------------------------------------

    def parse_program(self) -> A.Program:
        body = self.parse_statements(top=True)
        self.expect("EOF")
        return A.Program(body=body)

    def parse_statements(self, top=False) -> list:
        stmts = []
        while True:
            tok = self.peek()
            if tok.kind in ("EOF", "DEDENT"):
                if not top:
                    break
                if tok.kind == "EOF":
                    break
                self.next()
                continue
            stmts.append(self.parse_statement())
        return stmts

    def parse_block(self) -> list:
        self.expect("op", ":")
        self.expect("NEWLINE")
        self.expect("INDENT")
        stmts = self.parse_statements()
        self.expect("DEDENT")
        if not stmts:
            tok = self.peek()
            raise IncSyntaxError("empty block", tok.line, tok.col)
        return stmts

    def parse_statement(self) -> A.Node:
        tok = self.peek()
        if tok.kind != "name":
            raise IncSyntaxError(f"unexpected token {tok.value!r}", tok.line, tok.col)
        if tok.value == "from":
            return self.parse_import()
        if tok.value == "if":
            return self.parse_if()
        if tok.value == "for":
            return self.parse_for()
        if tok.value == "template":
            return self.parse_template()
        if tok.value == "pragma":
            self.next()
            name = self.expect("name")
            self.expect("NEWLINE")
            return A.Pragma(name=name.value, line=tok.line)
        return self.parse_simple()

    def parse_import(self) -> A.Import:
        start = self.expect("name", "from")
        module = self.expect("name").value
        self.expect("name", "import")
        names = []
        if self.at_op("*"):
            self.next()
            names.append("*")
        else:
            names.append(self.expect("name").value)
            while self.at_op(","):
                self.next()
                names.append(self.expect("name").value)
        self.expect("NEWLINE")
        return A.Import(module=module, names=names, line=start.line)

    def parse_if(self) -> A.If:
        start = self.expect("name", "if")
        cond = self.parse_expr()
        body = self.parse_block()
        orelse = []
        if self.at_name("elif"):
            tok = self.peek()
            self.tokens[self.pos] = Token("name", "if", tok.line, tok.col)
            orelse = [self.parse_if()]
        elif self.at_name("else"):
            self.next()
            orelse = self.parse_block()
        return A.If(cond=cond, body=body, orelse=orelse, line=start.line)

    def parse_for(self) -> A.For:
        start = self.expect("name", "for")
        varname = self.expect("name").value
        self.expect("name", "in")
        bounds = self.parse_expr()
        if not isinstance(bounds, A.Call) or bounds.func != "range":
            raise IncSyntaxError("for loops must iterate over range(...)",
                                 start.line, start.col)
        body = self.parse_block()
        return A.For(var=varname, bounds=bounds, body=body, line=start.line)

    def parse_template(self) -> A.TemplateDef:
        start = self.expect("name", "template")
        name = self.expect("name").value
        self.expect("op", "(")
        params = []
        if not self.at_op(")"):
            params.append(self.expect("name").value)
            while self.at_op(","):
                self.next()
                params.append(self.expect("name").value)
        self.expect("op", ")")
        body = self.parse_block()
        return A.TemplateDef(name=name, params=params, body=body, line=start.line)

    def parse_simple(self) -> A.Node:
        start = self.peek()
        expr = self.parse_expr()
        if self.at_op("="):
            self.next()
            value = self.parse_expr()
            self.expect("NEWLINE")
            if not isinstance(expr, (A.Name, A.FieldRef)):
                raise IncSyntaxError("invalid assignment target", start.line, start.col)
            return A.Assign(target=expr, value=value, line=start.line)
        self.expect("NEWLINE")
        if not isinstance(expr, A.Call):
            raise IncSyntaxError("expression statement must be a call",
                                 start.line, start.col)
        return A.ExprStmt(value=expr, line=start.line)

    # -- expressions, precedence-climbing ------------------------------------

    def parse_expr(self) -> A.Node:
        return self.parse_or()

    def parse_or(self) -> A.Node:
        node = self.parse_and()
        while self.at_name("or"):
            self.next()
            node = A.BinOp("or", node, self.parse_and())
        return node

    def parse_and(self) -> A.Node:
        node = self.parse_not()
        while self.at_name("and"):
            self.next()
            node = A.BinOp("and", node, self.parse_not())
        return node

    def parse_not(self) -> A.Node:
        if self.at_name("not"):
            self.next()
            return A.UnaryOp("not", self.parse_not())
        return self.parse_comparison()

    def parse_comparison(self) -> A.Node:
        node = self.parse_bitor()
        while self.peek().kind == "op" and self.peek().value in ("==", "!=", "<", "<=", ">", ">="):
            op = self.next().value
            node = A.BinOp(op, node, self.parse_bitor())
        return node

    def _binop_level(self, ops, sub):
        node = sub()
        while self.peek().kind == "op" and self.peek().value in ops:
            op = self.next().value
            node = A.BinOp(op, node, sub())
        return node

    def parse_bitor(self):
        return self._binop_level(("|",), self.parse_bitxor)

    def parse_bitxor(self):
        return self._binop_level(("^",), self.parse_bitand)

    def parse_bitand(self):
        return self._binop_level(("&",), self.parse_shift)

    def parse_shift(self):
        return self._binop_level(("<<", ">>"), self.parse_add)

    def parse_add(self):
        return self._binop_level(("+", "-"), self.parse_mul)

    def parse_mul(self):
        return self._binop_level(("*", "/", "//", "%"), self.parse_unary)

    def parse_unary(self) -> A.Node:
        tok = self.peek()
        if tok.kind == "op" and tok.value in ("-", "~"):
            self.next()
            return A.UnaryOp(tok.value, self.parse_unary())
        return self.parse_atom()

    def parse_atom(self) -> A.Node:
        tok = self.next()
        if tok.kind == "number":
            text = tok.value
            if text.lower().startswith("0x"):
                return A.Num(int(text, 16))
            return A.Num(float(text) if "." in text else int(text))
        if tok.kind == "string":
            return A.Str(tok.value[1:-1])
        if tok.kind == "op" and tok.value == "(":
            node = self.parse_expr()
            self.expect("op", ")")
            return node
        if tok.kind == "name":
            if tok.value in KEYWORDS:
                raise IncSyntaxError(f"unexpected keyword {tok.value!r}", tok.line, tok.col)
            if self.at_op("."):
                self.next()
                attr = self.expect("name").value
                return A.FieldRef(base=tok.value, attr=attr)
            if self.at_op("("):
                return self.parse_call(tok)
            if self.at_op("["):
                self.next()
                index = self.parse_expr()
                self.expect("op", "]")
                return A.Index(base=tok.value, index=index)
            return A.Name(id=tok.value, line=tok.line, col=tok.col)
        raise IncSyntaxError(f"unexpected token {tok.value or tok.kind!r}", tok.line, tok.col)

    def parse_call(self, name_tok: Token) -> A.Call:
        self.expect("op", "(")
        args, kwargs = [], {}
        if not self.at_op(")"):
            while True:
                if (self.peek().kind == "name"
                        and self.tokens[self.pos + 1].kind == "op"
                        and self.tokens[self.pos + 1].value == "="
                        and self.peek().value not in KEYWORDS):
                    key = self.next().value
                    self.next()
                    kwargs[key] = self.parse_expr()
                else:
                    args.append(self.parse_expr())
                if self.at_op(","):
                    self.next()
                    continue
                break
        self.expect("op", ")")
        return A.Call(func=name_tok.value, args=args, kwargs=kwargs,
                      line=name_tok.line, col=name_tok.col)


def parse_source(text: str) -> A.Program:
    return Parser(text).parse_program()
