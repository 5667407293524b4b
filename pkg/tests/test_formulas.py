import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from hypdr.formulas import (
    Atom,
    BinTerm,
    Const,
    FALSE,
    TRUE,
    UndeclaredVariable,
    Var,
    conj,
    conjuncts,
    disj,
    evaluate,
    evaluate_term,
    format_formula,
    neg,
    parse_formula,
    parse_term,
    substitute,
    valuation_to_formula,
    ParseError,
)


def V(name, level=0):
    return Var(name, level)


class TestEvaluate:
    def test_example_1_init(self):
        phi = parse_formula("x >= 0 & sum = 0")
        assert evaluate(phi, {V("x"): 3.0, V("sum"): 0.0}) is True

    def test_true_literal(self):
        assert evaluate(TRUE, {}) is True

    def test_direct_arithmetic(self):
        # 0.4999 <= 0.5 holds with zero tolerance
        assert evaluate(parse_formula("x <= 0.5"), {V("x"): 0.4999, V("y"): 0.0}, 0.0)
        assert not evaluate(parse_formula("x <= 0.5"), {V("x"): 0.5001}, 0.0)

    def test_eps_slack_on_simulated_points(self):
        phi = parse_formula("y >= 0")
        assert not evaluate(phi, {V("y"): -1e-12}, 0.0)
        assert evaluate(phi, {V("y"): -1e-12}, 1e-9)

    def test_missing_binding(self):
        with pytest.raises(UndeclaredVariable):
            evaluate(parse_formula("x > 0"), {V("y"): 1.0})

    def test_connectives(self):
        sigma = {V("x"): 1.0, V("y"): -1.0}
        assert evaluate(parse_formula("x > 0 | y > 0"), sigma)
        assert not evaluate(parse_formula("x > 0 & y > 0"), sigma)
        assert evaluate(parse_formula("y > 0 -> x < 0"), sigma)
        assert evaluate(parse_formula("!(y > 0)"), sigma)


class TestSubstitute:
    def test_single_rename(self):
        phi = parse_formula("x > 0")
        out = substitute(phi, {V("x"): V("x", 2)})
        assert out == parse_formula("x'' > 0")

    def test_double_rename_pattern(self):
        # [x/x', x''/x] applied to  x' = x - 1
        phi = parse_formula("x' = x - 1")
        out = substitute(phi, {V("x", 1): V("x"), V("x"): V("x", 2)})
        assert out == parse_formula("x = x'' - 1")

    def test_simultaneous(self):
        phi = parse_formula("x = y")
        out = substitute(phi, {V("x"): V("y"), V("y"): V("x")})
        assert out == parse_formula("y = x")


_names = st.sampled_from(["x", "y", "z"])
_consts = st.integers(-4, 4).map(lambda k: Const(Fraction(k)))
_terms = st.recursive(
    _names.map(V) | _consts,
    lambda sub: st.tuples(st.sampled_from("+-*"), sub, sub).map(lambda t: BinTerm(*t)),
    max_leaves=6,
)
_atoms = st.tuples(st.sampled_from(["<", "<=", "=", ">=", ">"]), _terms, _terms).map(
    lambda t: Atom(*t)
)
_formulas = st.recursive(
    _atoms,
    lambda sub: st.one_of(
        sub.map(neg),
        st.tuples(sub, sub).map(lambda p: conj(*p)),
        st.tuples(sub, sub).map(lambda p: disj(*p)),
    ),
    max_leaves=8,
)
_valuations = st.fixed_dictionaries(
    {V("x"): st.integers(-5, 5), V("y"): st.integers(-5, 5), V("z"): st.integers(-5, 5)}
)


class TestSubstitutionProperties:
    @settings(max_examples=120, deadline=None)
    @given(_formulas, _terms, _valuations)
    def test_substitution_evaluation_commutes(self, phi, t, sigma):
        # evaluate(phi[t/x], sigma) == evaluate(phi, sigma[x -> t(sigma)])
        lhs = evaluate(substitute(phi, {V("x"): t}), sigma)
        updated = dict(sigma)
        updated[V("x")] = evaluate_term(t, sigma)
        assert lhs == evaluate(phi, updated)

    @settings(max_examples=80, deadline=None)
    @given(_formulas, _terms, _terms, _valuations)
    def test_substitution_composition(self, phi, t1, t2, sigma):
        # phi[t1/x][t2/y]  ==  phi[{x -> t1[t2/y], y -> t2}]  (simultaneous)
        step = substitute(substitute(phi, {V("x"): t1}), {V("y"): t2})
        composed = substitute(
            phi,
            {V("x"): substitute_term_for_test(t1, t2), V("y"): t2},
        )
        assert step == composed

    @settings(max_examples=100, deadline=None)
    @given(_formulas, _valuations)
    def test_evaluate_deterministic(self, phi, sigma):
        assert evaluate(phi, sigma) == evaluate(phi, sigma)

    @settings(max_examples=60, deadline=None)
    @given(_formulas)
    def test_format_parse_roundtrip(self, phi):
        assert parse_formula(format_formula(phi)) == phi


def substitute_term_for_test(t1, t2):
    from hypdr.formulas import substitute_term
    return substitute_term(t1, {V("y"): t2})


class TestValuationToFormula:
    def test_origin(self):
        phi = valuation_to_formula({V("x"): 0.0, V("y"): 0.0})
        assert phi == parse_formula("x = 0 & y = 0")

    def test_counterexample_point(self):
        sigma = {V("x"): 0.490533, V("y"): 1.93995}
        phi = valuation_to_formula(sigma)
        assert evaluate(phi, sigma) is True

    def test_negation_is_conflict_target(self):
        sigma = {V("x"): 2.0}
        assert not evaluate(neg(valuation_to_formula(sigma)), sigma)

    def test_unique_model(self, smt):
        sigma = {V("x"): 0.25, V("y"): -3.0}
        phi = valuation_to_formula(sigma)
        for v, val in sigma.items():
            flipped = neg(Atom("=", v, Const(Fraction(val))))
            assert smt.check([phi, flipped], want_model=False).is_unsat


class TestConjuncts:
    def test_nested_split(self):
        a, b, c = (parse_formula(s) for s in ["x>0", "y>0", "x<1"])
        assert conjuncts(conj(a, conj(b, c))) == [a, b, c]

    def test_disjunction_atomic(self):
        phi = parse_formula("x>0 | y>0")
        assert conjuncts(phi) == [phi]

    def test_reconjoin_equivalent(self, smt):
        phi = parse_formula("(x>0 & (y>0 & x<5)) & y<9")
        again = conj(*conjuncts(phi))
        assert smt.equivalent(phi, again)


class TestGrammar:
    def test_primes(self):
        phi = parse_formula("x'' = x' + x")
        assert V("x", 2) in {v for v in _vars(phi)}

    def test_errors_have_positions(self):
        with pytest.raises(ParseError):
            parse_formula("x >")
        with pytest.raises(ParseError):
            parse_formula("x = = 1")
        with pytest.raises(ParseError):
            parse_formula("")

    def test_precedence(self):
        phi = parse_formula("x>0 & y>0 | x<0 -> y=1")
        # -> binds loosest, | next, & tightest
        from hypdr.formulas import Implies, NaryBool
        assert isinstance(phi, Implies)
        assert isinstance(phi.left, NaryBool) and phi.left.op == "|"

    def test_numeric_literals(self):
        t = parse_term("0.707107")
        assert t == Const(Fraction("0.707107"))
        assert math.isclose(float(parse_term("1e-3").value), 1e-3)


def _vars(phi):
    from hypdr.formulas import formula_vars
    return formula_vars(phi)
