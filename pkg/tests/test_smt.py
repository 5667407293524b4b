import pytest

from hypdr.formulas import Var, parse_formula
from hypdr.smt import SmtSession, parse_model as parse_smt_model


def V(name, level=0):
    return Var(name, level)


def test_trivial_unsat(smt):
    assert smt.check([parse_formula("x > 0 & x < 0")], want_model=False).is_unsat


def test_unique_circle_point(smt):
    # x^2 + y^2 = 1 with y >= 0 and x = 1 pins (1, 0).
    res = smt.check([parse_formula("x*x + y*y = 1 & y >= 0 & x = 1")])
    assert res.is_sat
    assert abs(res.model[V("x")] - 1.0) < 1e-9
    assert abs(res.model[V("y")]) < 1e-9


def test_stay_condition_excludes_ce_point(smt):
    # The counterexample point below the axis cannot satisfy y >= 0.
    res = smt.check([parse_formula("x = 0.998516 & y = -1.889365 & y >= 0")],
                    want_model=False)
    assert res.is_unsat


def test_model_completion_defaults_missing_vars(smt):
    res = smt.check([parse_formula("x > 1")])
    assert res.is_sat
    assert V("x") in res.model


def test_push_pop_isolation(smt):
    assert smt.check([parse_formula("x = 3")]).is_sat
    assert smt.check([parse_formula("x = 4")]).is_sat  # no leftover x = 3


def test_primed_symbols(smt):
    res = smt.check([parse_formula("x'' = x + 1 & x = 0")])
    assert res.is_sat
    assert abs(res.model[V("x", 2)] - 1.0) < 1e-9


def test_algebraic_model_value(smt):
    res = smt.check([parse_formula("x*x = 2 & x > 0")])
    assert res.is_sat
    assert abs(res.model[V("x")] - 2 ** 0.5) < 1e-6


def test_crash_recovery():
    with SmtSession() as session:
        session.declare([V("x")])
        assert session.check([parse_formula("x = 1")]).is_sat
        session._proc.kill()  # simulate a solver crash mid-session
        res = session.check([parse_formula("x = 2")])
        assert res.is_sat and abs(res.model[V("x")] - 2.0) < 1e-9


def test_implication_helpers(smt):
    assert smt.is_valid_implication(parse_formula("x = 0 & y = 0"), parse_formula("x <= 1"))
    assert not smt.is_valid_implication(parse_formula("x <= 1"), parse_formula("x = 0"))
    assert smt.equivalent(parse_formula("x <= 1 & x <= 2"), parse_formula("x <= 1"))


def test_model_text_parsing():
    text = """(
      (define-fun |x| () Real (- (/ 1.0 2.0)))
      (define-fun |y'| () Real 1.5)
      (define-fun |z| () Real (- 2.0))
    )"""
    model = parse_smt_model(text)
    assert model[V("x")] == -0.5
    assert model[V("y", 1)] == 1.5
    assert model[V("z")] == -2.0
