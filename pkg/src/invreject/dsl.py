"""Tokenizer and expression parser for the model and invariant file formats.

Expressions are parsed into a small AST that carries source positions, then
converted to sympy against a declared symbol table so undeclared names are
reported with line/column.
"""

from __future__ import annotations

import re

import sympy


class ParseError(Exception):
    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        loc = f" at line {line}, column {col}" if line is not None else ""
        super().__init__(f"{message}{loc}")


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),=]))"
)


def tokenize(text, line_no=1, col_offset=0):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            col = col_offset + pos + (len(text[pos:]) - len(stripped)) + 1
            raise ParseError(f"unexpected character {stripped[0]!r}", line_no, col)
        col = col_offset + m.start(m.lastgroup) + 1
        kind = m.lastgroup
        val = m.group(kind)
        tokens.append((kind, val, line_no, col))
        pos = m.end()
    tokens.append(("end", "", line_no, col_offset + len(text) + 1))
    return tokens


class _ExprParser:
    """Pratt parser: + - * / unary-minus, ^ and ** for powers, calls."""

    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_end(self):
        kind, val, line, col = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", line, col)

    def parse(self):
        node = self.expr()
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, line, col = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.term()
                node = (val, node, rhs, line, col)
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, val, line, col = self.peek()
            if kind == "op" and val in ("*", "/"):
                self.next()
                rhs = self.unary()
                node = (val, node, rhs, line, col)
            else:
                return node

    def unary(self):
        kind, val, line, col = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return ("neg", self.unary(), line, col)
        if kind == "op" and val == "+":
            self.next()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, line, col = self.peek()
        if kind == "op" and val in ("^", "**"):
            self.next()
            exp = self.unary()  # right-associative
            return ("pow", base, exp, line, col)
        return base

    def atom(self):
        kind, val, line, col = self.next()
        if kind == "num":
            return ("num", val, line, col)
        if kind == "ident":
            k2, v2, _, _ = self.peek()
            if k2 == "op" and v2 == "(":
                self.next()
                args = []
                if not (self.peek()[0] == "op" and self.peek()[1] == ")"):
                    args.append(self.expr())
                    while self.peek()[0] == "op" and self.peek()[1] == ",":
                        self.next()
                        args.append(self.expr())
                k3, v3, l3, c3 = self.next()
                if not (k3 == "op" and v3 == ")"):
                    raise ParseError("expected ')'", l3, c3)
                return ("call", val, args, line, col)
            return ("var", val, line, col)
        if kind == "op" and val == "(":
            node = self.expr()
            k2, v2, l2, c2 = self.next()
            if not (k2 == "op" and v2 == ")"):
                raise ParseError("expected ')'", l2, c2)
            return node
        raise ParseError(f"unexpected token {val!r}" if val else "unexpected end of expression", line, col)


def parse_expression(text, line_no=1):
    p = _ExprParser(tokenize(text, line_no))
    node = p.parse()
    p.expect_end()
    return node


_FUNCTIONS = {
    "exp": sympy.exp,
    "sin": sympy.sin,
    "cos": sympy.cos,
    "tan": sympy.tan,
    "log": sympy.log,
    "sqrt": sympy.sqrt,
}


def ast_to_sympy(node, symbols, allow_functions=False):
    """Convert an AST to sympy; `symbols` maps allowed names to sympy objects."""
    op = node[0]
    if op == "num":
        return sympy.Rational(node[1]) if _is_exact(node[1]) else sympy.Float(node[1])
    if op == "var":
        name = node[1]
        if name not in symbols:
            raise ParseError(f"undeclared symbol {name!r}", node[2], node[3])
        return symbols[name]
    if op == "call":
        fname = node[1]
        if not allow_functions:
            raise ParseError(
                f"function {fname!r} not allowed here (right-hand sides must be rational)",
                node[3], node[4],
            )
        if fname not in _FUNCTIONS:
            raise ParseError(f"unknown function {fname!r}", node[3], node[4])
        args = [ast_to_sympy(a, symbols, allow_functions) for a in node[2]]
        return _FUNCTIONS[fname](*args)
    if op == "neg":
        return -ast_to_sympy(node[1], symbols, allow_functions)
    a = ast_to_sympy(node[1], symbols, allow_functions)
    b = ast_to_sympy(node[2], symbols, allow_functions)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    if op == "pow":
        return a ** b
    raise AssertionError(f"unknown AST node {op!r}")


def _is_exact(text):
    return re.fullmatch(r"\d+", text) is not None


def split_sections(text):
    """Break a sectioned file into (section, line_no, payload) entries.

    A line `name: payload` opens a section; following indented/plain lines
    belong to it. '#' starts a comment. Returns list of (section, line_no, line).
    """
    out = []
    current = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        m = re.match(r"\s*([A-Za-z_][A-Za-z_0-9]*)\s*:\s*(.*)$", line)
        # a ':' introducing a section, not part of an expression
        if m and "=" not in m.group(1):
            current = m.group(1)
            payload = m.group(2).strip()
            if payload:
                out.append((current, ln, payload))
            else:
                out.append((current, ln, None))
            continue
        if current is None:
            raise ParseError("content before any section header", ln, 1)
        out.append((current, ln, line.strip()))
    return out
