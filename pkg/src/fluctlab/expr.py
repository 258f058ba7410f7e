"""A small arithmetic-expression language for coefficient functions.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := number | ident | ident '(' expr (',' expr)* ')'
            | '(' expr ')' | '-' factor

Expressions compile to pure numpy functions of the declared variables.
"""
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "ExpressionError",
    "Expression",
    "parse_coefficient_expr",
    "parse",
    "FUNCTIONS",
]


class ExpressionError(ValueError):
    """Raised for syntax errors, unknown identifiers and arity mismatches."""

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} at offset {position}"
        super().__init__(message)


def _min(*args):
    out = args[0]
    for a in args[1:]:
        out = np.minimum(out, a)
    return out


def _max(*args):
    out = args[0]
    for a in args[1:]:
        out = np.maximum(out, a)
    return out


# name -> (callable, min arity, max arity)
FUNCTIONS = {
    "sin": (np.sin, 1, 1),
    "cos": (np.cos, 1, 1),
    "tanh": (np.tanh, 1, 1),
    "exp": (np.exp, 1, 1),
    "abs": (np.abs, 1, 1),
    "min": (_min, 2, None),
    "max": (_max, 2, None),
}

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/(),])"
    r")"
)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, functions):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.functions = functions

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ExpressionError(f"expected {value!r}, found {found}", pos)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "op" and val == "-":
            return Neg(self.factor())
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in self.functions:
                    raise ExpressionError(f"unknown function {val!r}", pos)
                self.take()
                args = [self.expr()]
                while self.peek()[1] == "," and self.peek()[0] == "op":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                _, lo, hi = self.functions[val]
                if len(args) < lo or (hi is not None and len(args) > hi):
                    raise ExpressionError(
                        f"function {val!r} takes {lo if hi == lo else f'at least {lo}'}"
                        f" argument(s), got {len(args)}",
                        pos,
                    )
                return Call(val, tuple(args))
            return Var(val)
        if kind == "end":
            raise ExpressionError("unexpected end of input", pos)
        raise ExpressionError(f"unexpected {val!r}", pos)


def parse(text, functions=None):
    """Parse ``text`` into an expression tree."""
    if not isinstance(text, str):
        raise ExpressionError("expression must be a string")
    return _Parser(text, FUNCTIONS if functions is None else functions).parse()


def variables_of(node):
    """Set of variable names referenced by a tree."""
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return variables_of(node.arg)
    if isinstance(node, BinOp):
        return variables_of(node.left) | variables_of(node.right)
    if isinstance(node, Call):
        out = set()
        for a in node.args:
            out |= variables_of(a)
        return out
    return set()


def to_text(node):
    """Fully parenthesized text that reparses to the same tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(node)


def evaluate(node, env: Mapping[str, object], functions=None, special=None):
    """Evaluate a tree with numpy semantics.

    ``special`` maps function names to callables receiving the raw argument
    trees and the environment; it is used for path-level forms such as
    time integrals.
    """
    functions = FUNCTIONS if functions is None else functions
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -evaluate(node.arg, env, functions, special)
    if isinstance(node, BinOp):
        a = evaluate(node.left, env, functions, special)
        b = evaluate(node.right, env, functions, special)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    if isinstance(node, Call):
        if special and node.name in special:
            return special[node.name](node.args, env)
        fn = functions[node.name][0]
        return fn(*(evaluate(a, env, functions, special) for a in node.args))
    raise TypeError(node)


class Expression:
    """Compiled expression over a fixed, ordered list of variables.

    Call positionally in declaration order or by keyword.  Arguments are
    broadcast with numpy rules; the result always has the broadcast shape.
    """

    def __init__(self, text: str, variables: Sequence[str]):
        self.variables = tuple(variables)
        if len(set(self.variables)) != len(self.variables):
            raise ExpressionError("duplicate variable names")
        for name in self.variables:
            if name in FUNCTIONS:
                raise ExpressionError(f"variable name {name!r} shadows a function")
        self.text = text
        self.tree = parse(text)
        unknown = variables_of(self.tree) - set(self.variables)
        if unknown:
            name = sorted(unknown)[0]
            pos = _find_identifier(text, name)
            raise ExpressionError(f"unknown identifier {name!r}", pos)

    @property
    def used(self):
        return variables_of(self.tree)

    def __call__(self, *args, **kwargs):
        if args and kwargs:
            raise ExpressionError("pass arguments either positionally or by name")
        if args:
            if len(args) != len(self.variables):
                raise ExpressionError(
                    f"expected {len(self.variables)} argument(s) {self.variables}, got {len(args)}"
                )
            env = dict(zip(self.variables, args))
        else:
            if set(kwargs) != set(self.variables):
                raise ExpressionError(
                    f"expected arguments {self.variables}, got {tuple(sorted(kwargs))}"
                )
            env = kwargs
        arrays = [np.asarray(v, dtype=float) for v in env.values()]
        shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
        out = np.asarray(evaluate(self.tree, env), dtype=float)
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out

    def pretty(self) -> str:
        return to_text(self.tree)

    def __repr__(self):
        return f"Expression({self.text!r}, {self.variables})"

    def __eq__(self, other):
        return (
            isinstance(other, Expression)
            and self.tree == other.tree
            and self.variables == other.variables
        )

    def __hash__(self):
        return hash((self.tree, self.variables))


def _find_identifier(text, name):
    m = re.search(rf"(?<![A-Za-z_0-9]){re.escape(name)}(?![A-Za-z_0-9])", text)
    return m.start() if m else None


def parse_coefficient_expr(text: str, variables: Sequence[str]) -> Callable:
    """Compile ``text`` into a function of ``variables``.

    >>> f = parse_coefficient_expr("x + y", ["x", "y"])
    >>> float(f(1, 2))
    3.0
    """
    return Expression(text, variables)
