from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ahrs.errors import ArityMismatch, DslSyntaxError, NonFiniteResult, UnboundVariable, UnknownFunction
from ahrs.reward_dsl import (
    FUNCTIONS,
    AuxReward,
    BinOp,
    Call,
    Neg,
    Num,
    Var,
    compile_expr,
    eval_expr,
    free_vars,
    parse_expr,
    print_expr,
)

VARS = ("x", "y", "dist", "v_2")


def ev(text, **b):
    return eval_expr(parse_expr(text), b)


def test_precedence():
    assert ev("1+2*3") == 7
    assert ev("2^3^2") == 512
    assert ev("-2^2") == -4
    assert ev("(-2)^2") == 4
    assert ev("2*3+1") == 7
    assert ev("8/4/2") == 1
    assert ev("10-4-3") == 3
    assert ev("2^-1") == 0.5
    assert ev("--3") == 3


def test_ast_structure():
    assert parse_expr("2*3+1") == BinOp("+", BinOp("*", Num(2.0), Num(3.0)), Num(1.0))
    assert parse_expr("exp(-dist)") == Call("exp", (Neg(Var("dist")),))
    assert parse_expr("2^3^2") == BinOp("^", Num(2.0), BinOp("^", Num(3.0), Num(2.0)))


def test_numbers():
    assert ev("1.5e2") == 150.0
    assert ev(".25") == 0.25
    assert ev("3.") == 3.0
    assert ev("2E-1") == pytest.approx(0.2)


def test_hand_evaluations():
    assert ev("exp(-d)", d=0.0) == 1.0
    assert ev("-(x^2) - 0.1*abs(v)", x=2.0, v=-3.0) == pytest.approx(-4.3, abs=1e-12)
    assert ev("clamp(x, -1, 1)", x=5.0) == 1.0
    assert ev("min(x, y) + max(x, y)", x=2.0, y=-1.0) == 1.0
    assert ev("sqrt(16) + log(1) + tanh(0)") == 4.0


def test_free_vars():
    assert free_vars(parse_expr("1+2")) == set()
    assert free_vars(parse_expr("exp(-d) + v")) == {"d", "v"}
    assert free_vars(parse_expr("x + x")) == {"x"}


def test_function_table_errors():
    with pytest.raises(ArityMismatch) as e:
        parse_expr("min(1,2,3)")
    assert e.value.expected == 2 and e.value.got == 3
    with pytest.raises(UnknownFunction):
        parse_expr("sin(x)")


@pytest.mark.parametrize("text,offset", [
    ("", 0), ("1+", 2), ("(1", 2), ("1 2", 2), ("*3", 0), ("x $ y", 2), ("exp(", 4), ("f(1,)", 4),
    ("abs()", 4), ("1)", 1), ("X", 0),
])
def test_syntax_errors_have_offsets(text, offset):
    with pytest.raises((DslSyntaxError, UnknownFunction)) as e:
        parse_expr(text)
    if isinstance(e.value, DslSyntaxError):
        assert e.value.offset == offset
        assert 0 <= e.value.offset <= len(text)


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="0123456789.eE+-*/^(),xyzabsmintlogqrpc_ \t", max_size=25))
def test_malformed_inputs_never_crash(text):
    try:
        ast = parse_expr(text)
    except DslSyntaxError as e:
        assert 0 <= e.offset <= len(text)
        return
    except (UnknownFunction, ArityMismatch):
        return
    # parsed: evaluation either succeeds finitely or raises a DSL error
    try:
        r = eval_expr(ast, {v: 0.5 for v in free_vars(ast)})
        assert math.isfinite(r)
    except NonFiniteResult:
        pass


@pytest.mark.parametrize("text,b", [
    ("1/0", {}), ("log(0)", {}), ("log(-1)", {}), ("sqrt(-1)", {}), ("exp(1000)", {}),
    ("10^400", {}), ("(-8)^(1/3)", {}), ("x/y", {"x": 1.0, "y": 0.0}), ("0/0", {}),
    ("x*2", {"x": math.inf}), ("x", {"x": math.nan}), ("1e308*10", {}), ("0^(-1)", {}),
])
def test_non_finite_results_raise(text, b):
    ast = parse_expr(text)
    with pytest.raises(NonFiniteResult):
        eval_expr(ast, b)
    with pytest.raises(NonFiniteResult):
        compile_expr(ast)(b)


def test_unbound_variable():
    with pytest.raises(UnboundVariable) as e:
        ev("x + q", x=1.0)
    assert e.value.name == "q"
    with pytest.raises(UnboundVariable):
        AuxReward("pos_x + nope", ("pos_x",))


def random_ast(rng: random.Random, depth: int):
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.5:
            return Num(rng.choice([0.0, 0.5, 1.0, 2.0, 3.25, 1e-3, 17.0, -1.5, 2.5e10]))
        return Var(rng.choice(VARS))
    kind = rng.random()
    if kind < 0.15:
        return Neg(random_ast(rng, depth - 1))
    if kind < 0.7:
        return BinOp(rng.choice("+-*/^"), random_ast(rng, depth - 1), random_ast(rng, depth - 1))
    name = rng.choice(sorted(FUNCTIONS))
    return Call(name, tuple(random_ast(rng, depth - 1) for _ in range(FUNCTIONS[name][0])))


def _outcome(ast, b):
    try:
        return eval_expr(ast, b)
    except NonFiniteResult:
        return "nonfinite"


def test_print_parse_round_trip_500_random_asts():
    rng = random.Random(1234)
    b = {"x": 0.7, "y": -1.3, "dist": 2.0, "v_2": 0.25}
    finite_cases = 0
    for _ in range(500):
        ast = random_ast(rng, rng.randint(1, 6))
        text = print_expr(ast)
        back = parse_expr(text)
        assert print_expr(back) == text
        want, got = _outcome(ast, b), _outcome(back, b)
        assert want == got or (want != want and got != got)
        if want != "nonfinite":
            finite_cases += 1
            assert compile_expr(back)(b) == want
    assert finite_cases > 100


def test_evaluation_is_pure():
    ast = parse_expr("tanh(x)*exp(-y^2)/(1+abs(x))")
    b = {"x": 0.3, "y": 1.7}
    assert eval_expr(ast, b) == eval_expr(ast, b) == compile_expr(ast)(b)


def test_aux_reward_callable():
    aux = AuxReward("-0.5*tanh(2*sqrt((pos_x-goal_x)^2))", ("pos_x", "goal_x"))
    assert aux({"pos_x": 1.0, "goal_x": 1.0}) == 0.0
    assert aux({"pos_x": 0.0, "goal_x": 1.0}) == pytest.approx(-0.5 * math.tanh(2.0))
