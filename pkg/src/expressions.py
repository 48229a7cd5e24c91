"""Recursive-descent parser for coefficient and source expressions.

Grammar (whitespace insignificant)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := NUMBER | 'pi' | VAR | FUNC '(' expr ')' | '(' expr ')' | '-' factor

with FUNC in {sin, cos, exp} and VAR in {x1, x2, y1, y2}.  Parsed
expressions evaluate vectorised over numpy arrays.
"""

import logging
import re
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, List

import numpy as np

logger = logging.getLogger(__name__)

FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    'sin': np.sin,
    'cos': np.cos,
    'exp': np.exp,
}
VARIABLES = ('x1', 'x2', 'y1', 'y2')

_TOKEN_RE = re.compile(r"""
    (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/()])
  | (?P<space>\s+)
  | (?P<bad>.)
""", re.VERBOSE)


class ExpressionSyntaxError(ValueError):
    """Syntax error with the 1-based line and column of the offending token."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> List[Token]:
    tokens = []
    line, line_start = 1, 0
    for match in _TOKEN_RE.finditer(text):
        kind = match.lastgroup
        column = match.start() - line_start + 1
        if kind == 'space':
            newlines = match.group().count('\n')
            if newlines:
                line += newlines
                line_start = match.start() + match.group().rfind('\n') + 1
            continue
        if kind == 'bad':
            raise ExpressionSyntaxError(f"Unexpected character {match.group()!r}", line, column)
        tokens.append(Token(kind, match.group(), line, column))
    tokens.append(Token('end', '', line, len(text) - line_start + 1))
    return tokens


# AST nodes; each evaluates against a mapping of variable name -> array.

@dataclass(frozen=True)
class Number:
    value: float

    def evaluate(self, env):
        return self.value


@dataclass(frozen=True)
class Variable:
    name: str

    def evaluate(self, env):
        return env[self.name]


@dataclass(frozen=True)
class Call:
    func: str
    arg: object

    def evaluate(self, env):
        return FUNCTIONS[self.func](self.arg.evaluate(env))


@dataclass(frozen=True)
class Negate:
    operand: object

    def evaluate(self, env):
        return -self.operand.evaluate(env)


@dataclass(frozen=True)
class BinaryOp:
    op: str
    left: object
    right: object

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == '+':
            return a + b
        if self.op == '-':
            return a - b
        if self.op == '*':
            return a * b
        return a / b


class Parser:
    """One-token-lookahead parser over the token stream."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.pos = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def _advance(self) -> Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def _error(self, message: str):
        token = self.current
        raise ExpressionSyntaxError(message, token.line, token.column)

    def _expect(self, text: str):
        if self.current.text != text:
            found = self.current.text or 'end of input'
            self._error(f"Expected {text!r} but found {found!r}")
        self._advance()

    def parse(self):
        if self.current.kind == 'end':
            self._error("Empty expression")
        node = self.expr()
        if self.current.kind != 'end':
            self._error(f"Unexpected token {self.current.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.current.text in ('+', '-'):
            op = self._advance().text
            node = BinaryOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.current.text in ('*', '/'):
            op = self._advance().text
            node = BinaryOp(op, node, self.factor())
        return node

    def factor(self):
        token = self.current
        if token.kind == 'number':
            self._advance()
            return Number(float(token.text))
        if token.text == '-':
            self._advance()
            return Negate(self.factor())
        if token.text == '(':
            self._advance()
            node = self.expr()
            self._expect(')')
            return node
        if token.kind == 'name':
            self._advance()
            if token.text == 'pi':
                return Number(np.pi)
            if token.text in VARIABLES:
                return Variable(token.text)
            if token.text in FUNCTIONS:
                self._expect('(')
                arg = self.expr()
                self._expect(')')
                return Call(token.text, arg)
            raise ExpressionSyntaxError(f"Unknown identifier {token.text!r}", token.line, token.column)
        found = token.text or 'end of input'
        self._error(f"Unexpected {found!r}")


def _variables(node) -> FrozenSet[str]:
    if isinstance(node, Variable):
        return frozenset([node.name])
    if isinstance(node, Call):
        return _variables(node.arg)
    if isinstance(node, Negate):
        return _variables(node.operand)
    if isinstance(node, BinaryOp):
        return _variables(node.left) | _variables(node.right)
    return frozenset()


class Expression:
    """A parsed expression callable on (x, y) point arrays."""

    def __init__(self, text: str):
        self.text = text
        self.tree = Parser(text).parse()
        self.variables = _variables(self.tree)
        logger.debug(f"Parsed expression {text!r} with variables {sorted(self.variables)}")

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Evaluate with x, y of shape (..., dim); missing components read as 0."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        env = {}
        for prefix, points in (('x', x), ('y', y)):
            for d in (1, 2):
                name = f"{prefix}{d}"
                if d <= points.shape[-1]:
                    env[name] = np.broadcast_to(points[..., d - 1], shape)
                else:
                    env[name] = np.zeros(shape)
        return np.broadcast_to(np.asarray(self.tree.evaluate(env), dtype=float), shape)

    def uses(self, prefix: str) -> bool:
        return any(v.startswith(prefix) for v in self.variables)

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"


def parse_expression(text: str) -> Expression:
    """Parse ``text``; raises ExpressionSyntaxError with line/column on failure."""
    return Expression(text)
