"""
Expression language shared by guards, update actions and safety properties.

Values are 64-bit signed integers (two's-complement wraparound) or booleans.
Expressions are immutable trees; `compile_expression` turns a tree into a
Python closure over an environment mapping, which is what the engine runs on
every step. `eval_expression` is the reference entry point.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Mapping, MutableMapping, Optional, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

Value = Union[int, bool]

INT_MIN = int(np.iinfo(np.int64).min)
INT_MAX = int(np.iinfo(np.int64).max)
_MODULUS = 1 << 64

INT = "int"
BOOL = "bool"

# Environment key prefix used to expose the control state of an atom instance
# to state tests (`task1@work` reads env["@task1"]).
STATE_PREFIX = "@"


# -------------------------------------------------------------------
# ERRORS
# -------------------------------------------------------------------
class BipError(Exception):
    """Base class for every error raised by the toolkit."""


class EvaluationError(BipError):
    """Runtime failure while evaluating an expression or executing an action."""


class DivisionByZero(EvaluationError):
    pass


class UnboundVariable(EvaluationError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable '{name}'")
        self.name = name


class TypeMismatch(EvaluationError):
    pass


# -------------------------------------------------------------------
# SOURCE SPANS
# -------------------------------------------------------------------
@dataclass(frozen=True)
class SourceSpan:
    file: str
    start: int
    end: int
    line: int
    column: int

    def __str__(self):
        return f"{self.file}:{self.line}:{self.column}"


def _span():
    return field(default=None, compare=False, repr=False)


# -------------------------------------------------------------------
# EXPRESSION TREE
# -------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Const:
    value: Value
    span: Optional[SourceSpan] = _span()

    # true == 1 in Python; literals of different types must stay distinct
    def __eq__(self, other):
        if not isinstance(other, Const):
            return NotImplemented
        return type(self.value) is type(other.value) and self.value == other.value

    def __hash__(self):
        return hash((type(self.value), self.value))


@dataclass(frozen=True)
class Var:
    path: Tuple[str, ...]
    span: Optional[SourceSpan] = _span()

    @property
    def name(self) -> str:
        return ".".join(self.path)


@dataclass(frozen=True)
class StateTest:
    """`path@state`: true when the atom instance at `path` is in `state`."""
    path: Tuple[str, ...]
    state: str
    span: Optional[SourceSpan] = _span()

    @property
    def name(self) -> str:
        return ".".join(self.path)


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expression"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expression"
    right: "Expression"
    span: Optional[SourceSpan] = _span()


Expression = Union[Const, Var, StateTest, Unary, Binary]

TRUE = Const(True)

UNARY_OPS = ("-", "!")
ARITHMETIC_OPS = ("+", "-", "*", "/", "%")
ORDER_OPS = ("<", "<=", ">", ">=")
EQUALITY_OPS = ("==", "!=")
LOGIC_OPS = ("&&", "||")
BINARY_OPS = ARITHMETIC_OPS + ORDER_OPS + EQUALITY_OPS + LOGIC_OPS

# Binding strength, loosest first. Used by the parser and the printer.
PRECEDENCE = {
    "||": 1,
    "&&": 2,
    "==": 3, "!=": 3,
    "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6, "%": 6,
}
UNARY_PRECEDENCE = 7


@dataclass(frozen=True)
class Assignment:
    target: Tuple[str, ...]
    expr: Expression
    span: Optional[SourceSpan] = _span()

    @property
    def name(self) -> str:
        return ".".join(self.target)


Action = Tuple[Assignment, ...]


# -------------------------------------------------------------------
# VALUE HELPERS
# -------------------------------------------------------------------
def wrap(value: int) -> int:
    """Reduce an integer to the signed 64-bit range with wraparound."""
    return ((value - INT_MIN) % _MODULUS) + INT_MIN


def default_value(type_name: str) -> Value:
    return False if type_name == BOOL else 0


def type_of(value: Value) -> str:
    return BOOL if type(value) is bool else INT


def _int(value, op):
    if type(value) is not int:
        raise TypeMismatch(f"operator '{op}' expects int, got {type_of(value)}")
    return value


def _bool(value, op):
    if type(value) is not bool:
        raise TypeMismatch(f"operator '{op}' expects bool, got {type_of(value)}")
    return value


def _trunc_div(a: int, b: int) -> int:
    if b == 0:
        raise DivisionByZero(f"division by zero: {a} / 0")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _apply_binary(op: str, a: Value, b: Value) -> Value:
    if op == "+":
        return wrap(_int(a, op) + _int(b, op))
    if op == "-":
        return wrap(_int(a, op) - _int(b, op))
    if op == "*":
        return wrap(_int(a, op) * _int(b, op))
    if op == "/":
        return wrap(_trunc_div(_int(a, op), _int(b, op)))
    if op == "%":
        a, b = _int(a, op), _int(b, op)
        if b == 0:
            raise DivisionByZero(f"modulo by zero: {a} % 0")
        return wrap(a - b * _trunc_div(a, b))
    if op == "<":
        return _int(a, op) < _int(b, op)
    if op == "<=":
        return _int(a, op) <= _int(b, op)
    if op == ">":
        return _int(a, op) > _int(b, op)
    if op == ">=":
        return _int(a, op) >= _int(b, op)
    if op in EQUALITY_OPS:
        if type(a) is not type(b):
            raise TypeMismatch(f"operator '{op}' compares {type_of(a)} with {type_of(b)}")
        return (a == b) if op == "==" else (a != b)
    if op == "&&":
        return _bool(a, op) and _bool(b, op)
    if op == "||":
        return _bool(a, op) or _bool(b, op)
    raise TypeMismatch(f"unknown operator '{op}'")


def _apply_unary(op: str, a: Value) -> Value:
    if op == "-":
        return wrap(-_int(a, op))
    if op == "!":
        return not _bool(a, op)
    raise TypeMismatch(f"unknown operator '{op}'")


# -------------------------------------------------------------------
# EVALUATION
# -------------------------------------------------------------------
Compiled = Callable[[Mapping[str, Value]], Value]


@functools.lru_cache(maxsize=8192)
def compile_expression(e: Expression) -> Compiled:
    """Compile an expression tree into a closure `env -> Value`."""
    if isinstance(e, Const):
        value = e.value
        return lambda env: value
    if isinstance(e, Var):
        name = e.name

        def read(env):
            try:
                return env[name]
            except KeyError:
                raise UnboundVariable(name) from None
        return read
    if isinstance(e, StateTest):
        key = STATE_PREFIX + e.name
        state = e.state

        def test(env):
            try:
                return env[key] == state
            except KeyError:
                raise UnboundVariable(e.name + "@") from None
        return test
    if isinstance(e, Unary):
        op = e.op
        operand = compile_expression(e.operand)
        return lambda env: _apply_unary(op, operand(env))
    if isinstance(e, Binary):
        op = e.op
        left = compile_expression(e.left)
        right = compile_expression(e.right)
        return lambda env: _apply_binary(op, left(env), right(env))
    raise TypeError(f"not an expression: {e!r}")


def eval_expression(e: Expression, env: Mapping[str, Value]) -> Value:
    """
    Evaluate `e` strictly over `env`.

    Raises:
        DivisionByZero, UnboundVariable, TypeMismatch
    """
    return compile_expression(e)(env)


CompiledAction = List[Tuple[str, Compiled]]


def compile_action(action: Action) -> CompiledAction:
    return [(a.name, compile_expression(a.expr)) for a in action]


def execute_action(action: CompiledAction, env: MutableMapping[str, Value]) -> None:
    """Run assignments in order; each target keeps its declared type."""
    for name, fn in action:
        value = fn(env)
        if name not in env:
            raise UnboundVariable(name)
        if type(env[name]) is not type(value):
            raise TypeMismatch(f"cannot assign {type_of(value)} to {type_of(env[name])} variable '{name}'")
        env[name] = value


# -------------------------------------------------------------------
# STATIC ANALYSIS
# -------------------------------------------------------------------
def walk(e: Expression) -> Iterator[Expression]:
    yield e
    if isinstance(e, Unary):
        yield from walk(e.operand)
    elif isinstance(e, Binary):
        yield from walk(e.left)
        yield from walk(e.right)


def variables(e: Expression) -> List[Var]:
    return [n for n in walk(e) if isinstance(n, Var)]


def state_tests(e: Expression) -> List[StateTest]:
    return [n for n in walk(e) if isinstance(n, StateTest)]


def constant_value(e: Expression) -> Optional[Value]:
    """Value of a variable-free expression, or None when it reads state or fails."""
    if any(isinstance(n, (Var, StateTest)) for n in walk(e)):
        return None
    try:
        return eval_expression(e, {})
    except EvaluationError:
        return None


def is_true(e: Optional[Expression]) -> bool:
    return e is None or constant_value(e) is True


def type_errors(e: Expression, scope: Mapping[str, str],
                states: Optional[Mapping[str, Tuple[str, ...]]] = None) -> Tuple[Optional[str], List[Tuple[str, Optional[SourceSpan]]]]:
    """
    Infer the type of `e` and collect typing problems.

    Args:
        scope: variable name -> declared type
        states: instance path -> declared control states; None forbids state tests

    Returns:
        (type or None when unknown, list of (message, span))
    """
    errors: List[Tuple[str, Optional[SourceSpan]]] = []

    def infer(n: Expression) -> Optional[str]:
        if isinstance(n, Const):
            return type_of(n.value)
        if isinstance(n, Var):
            if n.name not in scope:
                errors.append((f"unknown variable '{n.name}'", n.span))
                return None
            return scope[n.name]
        if isinstance(n, StateTest):
            if states is None:
                errors.append((f"state test '{n.name}@{n.state}' is only allowed in properties", n.span))
            elif n.name not in states:
                errors.append((f"unknown component '{n.name}' in state test", n.span))
            elif states[n.name] and n.state not in states[n.name]:
                errors.append((f"component '{n.name}' has no state '{n.state}'", n.span))
            return BOOL
        if isinstance(n, Unary):
            t = infer(n.operand)
            want = INT if n.op == "-" else BOOL
            if t is not None and t != want:
                errors.append((f"operator '{n.op}' expects {want}, got {t}", n.span))
            return want
        if isinstance(n, Binary):
            lt, rt = infer(n.left), infer(n.right)
            if n.op in ARITHMETIC_OPS or n.op in ORDER_OPS:
                for t in (lt, rt):
                    if t is not None and t != INT:
                        errors.append((f"operator '{n.op}' expects int, got {t}", n.span))
                return INT if n.op in ARITHMETIC_OPS else BOOL
            if n.op in LOGIC_OPS:
                for t in (lt, rt):
                    if t is not None and t != BOOL:
                        errors.append((f"operator '{n.op}' expects bool, got {t}", n.span))
                return BOOL
            if lt is not None and rt is not None and lt != rt:
                errors.append((f"operator '{n.op}' compares {lt} with {rt}", n.span))
            return BOOL
        errors.append((f"not an expression: {n!r}", None))
        return None

    return infer(e), errors


def conjunction(parts: List[Expression]) -> Expression:
    if not parts:
        return TRUE
    result = parts[0]
    for p in parts[1:]:
        result = Binary("&&", result, p)
    return result


def rename_paths(e: Expression, mapping: Dict[str, str]) -> Expression:
    """Rewrite the first path segment of variable reads and state tests."""
    def head(path):
        return (mapping.get(path[0], path[0]),) + tuple(path[1:])

    if isinstance(e, Var):
        return Var(head(e.path), span=e.span)
    if isinstance(e, StateTest):
        return StateTest(head(e.path), e.state, span=e.span)
    if isinstance(e, Unary):
        return Unary(e.op, rename_paths(e.operand, mapping), span=e.span)
    if isinstance(e, Binary):
        return Binary(e.op, rename_paths(e.left, mapping), rename_paths(e.right, mapping), span=e.span)
    return e
