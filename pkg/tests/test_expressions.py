import pytest

from expressions import (
    INT_MAX, INT_MIN, Assignment, Binary, Const, DivisionByZero, StateTest, TypeMismatch,
    UnboundVariable, Unary, Var, compile_action, constant_value, eval_expression, execute_action,
    rename_paths, type_errors, wrap,
)


def x():
    return Var(("x",))


@pytest.mark.parametrize("op, a, b, expected", [
    ("+", 2, 3, 5),
    ("-", 2, 3, -1),
    ("*", -4, 3, -12),
    ("/", 7, 2, 3),
    ("/", -7, 2, -3),
    ("/", 7, -2, -3),
    ("%", 7, 2, 1),
    ("%", -7, 2, -1),
    ("%", 7, -2, 1),
    ("<", 1, 2, True),
    (">=", 1, 2, False),
    ("==", 3, 3, True),
    ("!=", 3, 3, False),
])
def test_integer_operators(op, a, b, expected):
    assert eval_expression(Binary(op, Const(a), Const(b)), {}) == expected


def test_arithmetic_wraps_around_64_bits():
    assert eval_expression(Binary("+", Const(INT_MAX), Const(1)), {}) == INT_MIN
    assert eval_expression(Binary("-", Const(INT_MIN), Const(1)), {}) == INT_MAX
    assert eval_expression(Unary("-", Const(INT_MIN)), {}) == INT_MIN
    assert eval_expression(Binary("/", Const(INT_MIN), Const(-1)), {}) == INT_MIN
    assert wrap(1 << 64) == 0


@pytest.mark.parametrize("op", ["/", "%"])
def test_division_by_zero(op):
    with pytest.raises(DivisionByZero):
        eval_expression(Binary(op, Const(1), Const(0)), {})


def test_unbound_variable_names_the_variable():
    with pytest.raises(UnboundVariable) as err:
        eval_expression(Binary("+", x(), Const(1)), {})
    assert err.value.name == "x"


def test_type_mismatch():
    with pytest.raises(TypeMismatch):
        eval_expression(Binary("+", Const(True), Const(1)), {})
    with pytest.raises(TypeMismatch):
        eval_expression(Binary("==", Const(True), Const(1)), {})
    with pytest.raises(TypeMismatch):
        eval_expression(Unary("!", Const(0)), {})


def test_logic_is_strict():
    failing = Binary("==", Binary("/", Const(1), Const(0)), Const(0))
    with pytest.raises(DivisionByZero):
        eval_expression(Binary("&&", Const(False), failing), {})
    with pytest.raises(DivisionByZero):
        eval_expression(Binary("||", Const(True), failing), {})


def test_state_test_reads_control_state():
    test = StateTest(("task1",), "work")
    assert eval_expression(test, {"@task1": "work"}) is True
    assert eval_expression(test, {"@task1": "sleep"}) is False
    with pytest.raises(UnboundVariable):
        eval_expression(test, {})


def test_action_runs_sequentially():
    env = {"x": 1, "y": 0}
    action = (
        Assignment(("x",), Binary("+", x(), Const(1))),
        Assignment(("y",), Binary("*", x(), Const(10))),
    )
    execute_action(compile_action(action), env)
    assert env == {"x": 2, "y": 20}


def test_action_keeps_declared_types():
    env = {"x": 1}
    with pytest.raises(TypeMismatch):
        execute_action(compile_action((Assignment(("x",), Const(True)),)), env)
    with pytest.raises(UnboundVariable):
        execute_action(compile_action((Assignment(("z",), Const(1)),)), env)


def test_type_errors():
    kind, errors = type_errors(Binary("&&", x(), Const(True)), {"x": "int"})
    assert kind == "bool"
    assert errors
    kind, errors = type_errors(Binary("<", x(), Const(3)), {"x": "int"})
    assert (kind, errors) == ("bool", [])
    _, errors = type_errors(Var(("y",)), {})
    assert "unknown variable 'y'" in errors[0][0]
    _, errors = type_errors(StateTest(("a",), "s"), {})
    assert "only allowed in properties" in errors[0][0]
    _, errors = type_errors(StateTest(("a",), "t"), {}, states={"a": ("s",)})
    assert "has no state 't'" in errors[0][0]


def test_constant_value():
    assert constant_value(Binary("+", Const(2), Const(3))) == 5
    assert constant_value(Binary("/", Const(1), Const(0))) is None
    assert constant_value(Binary("<", x(), Const(3))) is None


def test_rename_paths_rewrites_first_segment():
    e = Binary("&&", StateTest(("C",), "free"), Binary("<", Var(("C", "n")), Var(("n",))))
    renamed = rename_paths(e, {"C": "C_Arch"})
    assert renamed == Binary("&&", StateTest(("C_Arch",), "free"), Binary("<", Var(("C_Arch", "n")), Var(("n",))))


def test_boolean_and_integer_literals_compile_apart():
    assert eval_expression(Const(True), {}) is True
    assert type(eval_expression(Const(1), {})) is int
    assert eval_expression(Binary("+", x(), Const(1)), {"x": 4}) == 5
    assert eval_expression(Const(False), {}) is False
    assert type(eval_expression(Const(0), {})) is int
    assert Const(True) != Const(1)
    assert Const(0) != Const(False)
    assert Const(3) == Const(3)


def test_integer_literal_first_then_boolean():
    assert type(eval_expression(Const(1), {})) is int
    assert eval_expression(Const(True), {}) is True
