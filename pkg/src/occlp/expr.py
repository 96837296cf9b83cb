"""Small arithmetic expression language for model coefficients.

Grammar: numbers, state variables ``x1..xd``, mean-field moments ``m1..md``,
binary ``+ - * / ^``, unary minus and the functions ``exp log sqrt abs min max``.
Precedence from tight to loose: ``^`` (right associative), unary minus,
``* /``, ``+ -``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np


class ExpressionSyntaxError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownIdentifier(ValueError):
    def __init__(self, name, offset):
        super().__init__(f"unknown identifier {name!r} at byte offset {offset}")
        self.name = name
        self.offset = offset


class ExpressionDomainError(ArithmeticError):
    pass


class MomentsRequired(ValueError):
    pass


FUNCTIONS = {"exp": 1, "log": 1, "sqrt": 1, "abs": 1, "min": -2, "max": -2}


class Node:
    """Base class of expression trees."""

    def evaluate(self, x, m=None):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            return _eval(self, x, None if m is None else np.asarray(m, dtype=float))

    def to_source(self):
        return _print(self)

    def __str__(self):
        return _print(self)

    def variables(self):
        out = set()
        _collect(self, out)
        return out

    def uses_moments(self):
        return any(kind == "m" for kind, _ in self.variables())

    def is_constant(self):
        return not self.variables()


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    kind: str
    index: int  # 1-based


@dataclass(frozen=True)
class Neg(Node):
    operand: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    func: str
    args: tuple


def const(value):
    return Num(float(value))


# ---------------------------------------------------------------- tokenizer

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(src):
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos].isspace():
            pos += 1
            continue
        mt = _TOKEN.match(src, pos)
        if mt is None or mt.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {src[pos]!r}", _byte(src, pos))
        start = mt.start(mt.lastgroup)
        kind = mt.lastgroup
        text = mt.group(kind)
        if kind == "op" and text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = mt.end()
    tokens.append(("end", "", n))
    return tokens


def _byte(src, pos):
    return len(src[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, src, dim):
        self.src = src
        self.dim = dim
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExpressionSyntaxError(msg, _byte(self.src, tok[2]))

    def expect(self, text):
        tok = self.peek()
        if tok[1] != text or tok[0] != "op":
            self.fail(f"expected {text!r}")
        return self.take()

    def parse(self):
        if self.peek()[0] == "end":
            self.fail("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if text not in FUNCTIONS:
                    raise UnknownIdentifier(text, _byte(self.src, tok[2]))
                self.take()
                args = [self.expr()]
                while self.peek()[1] == "," and self.peek()[0] == "op":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[text]
                if (arity > 0 and len(args) != arity) or (arity < 0 and len(args) < -arity):
                    self.fail(f"wrong number of arguments to {text}", tok)
                return Call(text, tuple(args))
            return self.variable(text, tok)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            self.i -= 1
            self.fail("unexpected end of expression")
        self.fail(f"unexpected token {text!r}", tok)

    def variable(self, text, tok):
        mt = re.fullmatch(r"([xm])([1-9]\d*)", text)
        if mt is None:
            raise UnknownIdentifier(text, _byte(self.src, tok[2]))
        idx = int(mt.group(2))
        if self.dim is not None and idx > self.dim:
            raise UnknownIdentifier(text, _byte(self.src, tok[2]))
        return Var(mt.group(1), idx)


def parse_expression(source, dim=None):
    """Parse ``source``; ``dim`` limits the admissible variable indices."""
    if isinstance(source, Node):
        return source
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        return const(source)
    return _Parser(str(source), dim).parse()


# ------------------------------------------------------------------ printer

def _fmt_num(v):
    if v < 0 or (v == 0 and math.copysign(1.0, v) < 0):
        return f"(-{repr(-v)})"
    if math.isinf(v) or math.isnan(v):
        raise ValueError("non-finite constant cannot be printed")
    return repr(float(v))


def _print(node):
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return f"{node.kind}{node.index}"
    if isinstance(node, Neg):
        return f"(-{_print(node.operand)})"
    if isinstance(node, BinOp):
        return f"({_print(node.left)} {node.op} {_print(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_print(a) for a in node.args)})"
    raise TypeError(node)


def _collect(node, out):
    if isinstance(node, Var):
        out.add((node.kind, node.index))
    elif isinstance(node, Neg):
        _collect(node.operand, out)
    elif isinstance(node, BinOp):
        _collect(node.left, out)
        _collect(node.right, out)
    elif isinstance(node, Call):
        for a in node.args:
            _collect(a, out)


# --------------------------------------------------------------- evaluation

def _int_exponent(node):
    if isinstance(node, Num) and float(node.value).is_integer() and abs(node.value) <= 64:
        return int(node.value)
    return None


def _ipow(base, e):
    # repeated multiplication, shared with the compiled kernel for bitwise agreement
    if e == 0:
        return np.ones_like(base) if isinstance(base, np.ndarray) else 1.0
    k = abs(e)
    acc = base
    for _ in range(k - 1):
        acc = acc * base
    return 1.0 / acc if e < 0 else acc


def _check(val, what):
    if not np.all(np.isfinite(val)):
        raise ExpressionDomainError(f"{what} is undefined or overflows at some evaluation point")
    return val


def _eval(node, x, m):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.kind == "x":
            if node.index > x.shape[-1]:
                raise ExpressionDomainError(f"x{node.index} exceeds state dimension")
            return x[..., node.index - 1]
        if m is None:
            raise MomentsRequired(f"m{node.index} needs mean-field moments")
        return m[node.index - 1]
    if isinstance(node, Neg):
        return -_eval(node.operand, x, m)
    if isinstance(node, BinOp):
        a = _eval(node.left, x, m)
        if node.op == "^":
            e = _int_exponent(node.right)
            if e is not None:
                out = _ipow(a, e)
                return _check(out, "power") if e < 0 else out
            b = _eval(node.right, x, m)
            return _check(np.power(a, b), "power")
        b = _eval(node.right, x, m)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0):
            raise ExpressionDomainError("division by zero")
        return a / b
    if isinstance(node, Call):
        vals = [_eval(a, x, m) for a in node.args]
        f = node.func
        if f == "exp":
            return _check(np.exp(vals[0]), "exp")
        if f == "log":
            if np.any(np.asarray(vals[0]) <= 0):
                raise ExpressionDomainError("log of a non-positive value")
            return np.log(vals[0])
        if f == "sqrt":
            if np.any(np.asarray(vals[0]) < 0):
                raise ExpressionDomainError("sqrt of a negative value")
            return np.sqrt(vals[0])
        if f == "abs":
            return np.abs(vals[0])
        red = np.minimum if f == "min" else np.maximum
        out = vals[0]
        for v in vals[1:]:
            out = red(out, v)
        return out
    raise TypeError(node)


def evaluate_on(node, x, m=None):
    """Evaluate and broadcast to the leading shape of ``x``."""
    x = np.asarray(x, dtype=float)
    val = node.evaluate(x, m)
    return np.broadcast_to(np.asarray(val, dtype=float), x.shape[:-1]).copy()


# -------------------------------------------------------------- RPN programs

OP_CONST, OP_X, OP_NEG, OP_ADD, OP_SUB, OP_MUL, OP_DIV = 0, 1, 2, 3, 4, 5, 6
OP_POW, OP_IPOW, OP_EXP, OP_LOG, OP_SQRT, OP_ABS, OP_MIN, OP_MAX = 7, 8, 9, 10, 11, 12, 13, 14

_BIN = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}
_UN = {"exp": OP_EXP, "log": OP_LOG, "sqrt": OP_SQRT, "abs": OP_ABS}

MAX_STACK = 64


def compile_rpn(node, m=None):
    """Compile to a stack program of (opcode, argument) pairs.

    Moment variables are folded to constants from ``m``.
    """
    ops, args = [], []

    def emit(op, arg=0.0):
        ops.append(op)
        args.append(float(arg))

    def walk(n):
        if isinstance(n, Num):
            emit(OP_CONST, n.value)
        elif isinstance(n, Var):
            if n.kind == "x":
                emit(OP_X, n.index - 1)
            else:
                if m is None:
                    raise MomentsRequired(f"m{n.index} needs mean-field moments")
                emit(OP_CONST, m[n.index - 1])
        elif isinstance(n, Neg):
            walk(n.operand)
            emit(OP_NEG)
        elif isinstance(n, BinOp):
            walk(n.left)
            if n.op == "^":
                e = _int_exponent(n.right)
                if e is not None:
                    emit(OP_IPOW, e)
                    return
                walk(n.right)
                emit(OP_POW)
                return
            walk(n.right)
            emit(_BIN[n.op])
        elif isinstance(n, Call):
            if n.func in _UN:
                walk(n.args[0])
                emit(_UN[n.func])
            else:
                walk(n.args[0])
                for a in n.args[1:]:
                    walk(a)
                    emit(OP_MIN if n.func == "min" else OP_MAX)
        else:
            raise TypeError(n)

    walk(node)
    depth = peak = 0
    for op in ops:
        if op in (OP_CONST, OP_X):
            depth += 1
        elif op in (OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_MIN, OP_MAX):
            depth -= 1
        peak = max(peak, depth)
    if peak > MAX_STACK:
        raise ValueError("expression too deeply nested for the simulation kernel")
    return np.array(ops, dtype=np.int32), np.array(args, dtype=np.float64)


def pack_programs(nodes, m=None):
    """Concatenate several programs; returns (ops, args, starts)."""
    ops, args, starts = [], [], [0]
    for n in nodes:
        o, a = compile_rpn(n, m)
        ops.append(o)
        args.append(a)
        starts.append(starts[-1] + len(o))
    return (np.concatenate(ops).astype(np.int32), np.concatenate(args),
            np.array(starts, dtype=np.int64))
