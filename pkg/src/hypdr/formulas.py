"""Quantifier-free real-arithmetic formulas with primed variable copies.

Formulas range over three copies of the model variables: the plain copy
(``x``), the primed copy (``x'``) used for post-states of jump commands, and
the double-primed copy (``x''``) used as fresh unknowns when a transformer
eliminates its existential.  Terms are polynomial: constants, variables,
``+``, ``-``, ``*`` and unary negation.  Atoms compare two terms with one of
``< <= = >= >``; connectives are ``&``, ``|``, ``!`` and ``->``.

Everything here is an immutable value; all operations are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

Number = Union[int, float, Fraction]


class FormulaError(Exception):
    """Malformed formula or term."""


class UndeclaredVariable(FormulaError):
    """A variable was evaluated without a binding."""


class ParseError(FormulaError):
    """Formula text does not conform to the grammar."""

    def __init__(self, message: str, pos: int = -1):
        super().__init__(message if pos < 0 else f"{message} (at column {pos + 1})")
        self.pos = pos


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Var:
    """A variable occurrence at a prime level (0 = x, 1 = x', 2 = x'')."""

    name: str
    prime_level: int = 0

    def __post_init__(self):
        if not self.name:
            raise FormulaError("variable name must be nonempty")
        if self.prime_level not in (0, 1, 2):
            raise FormulaError(f"prime level must be 0, 1 or 2, got {self.prime_level}")

    def __str__(self) -> str:
        return self.name + "'" * self.prime_level


@dataclass(frozen=True)
class Const:
    value: Fraction

    def __post_init__(self):
        if isinstance(self.value, float) and not math.isfinite(self.value):
            raise FormulaError("constants must be finite")
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))

    def __str__(self) -> str:
        return format_fraction(self.value)


@dataclass(frozen=True)
class BinTerm:
    op: str  # '+', '-', '*'
    left: "Term"
    right: "Term"

    def __post_init__(self):
        if self.op not in ("+", "-", "*"):
            raise FormulaError(f"unknown term operator {self.op!r}")

    def __str__(self) -> str:
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class NegTerm:
    arg: "Term"

    def __str__(self) -> str:
        return f"(- {self.arg})"


Term = Union[Var, Const, BinTerm, NegTerm]


def const(value: Number) -> Const:
    if isinstance(value, float):
        return Const(Fraction(value))
    return Const(Fraction(value))


def format_fraction(f: Fraction) -> str:
    """Decimal-friendly rendering used by the pretty printer."""
    if f.denominator == 1:
        return str(f.numerator)
    as_float = float(f)
    # Round-trippable decimal keeps model files and logs readable.
    if Fraction(as_float) == f:
        return repr(as_float)
    return f"({f.numerator} / {f.denominator})"


# ---------------------------------------------------------------------------
# Formulas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    """Comparison of two terms: ``left op right`` with op in < <= = >= >."""

    op: str
    left: Term
    right: Term

    def __post_init__(self):
        if self.op not in ("<", "<=", "=", ">=", ">"):
            raise FormulaError(f"unknown comparison {self.op!r}")

    def __str__(self) -> str:
        return f"{self.left} {self.op} {self.right}"


@dataclass(frozen=True)
class BoolLit:
    value: bool

    def __str__(self) -> str:
        return "true" if self.value else "false"


@dataclass(frozen=True)
class Not:
    arg: "Formula"

    def __str__(self) -> str:
        return f"!({self.arg})"


@dataclass(frozen=True)
class NaryBool:
    op: str  # '&' or '|'
    args: tuple

    def __post_init__(self):
        if self.op not in ("&", "|"):
            raise FormulaError(f"unknown connective {self.op!r}")
        if len(self.args) < 2:
            raise FormulaError("n-ary connective needs at least two arguments")

    def __str__(self) -> str:
        return "(" + f" {self.op} ".join(str(a) for a in self.args) + ")"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"

    def __str__(self) -> str:
        return f"({self.left} -> {self.right})"


Formula = Union[Atom, BoolLit, Not, NaryBool, Implies]

TRUE = BoolLit(True)
FALSE = BoolLit(False)


def _dedupe(parts: Iterable) -> list:
    out, seen = [], set()
    for p in parts:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


def conj(*parts: Formula) -> Formula:
    """Conjunction, flattening literals and syntactic duplicates."""
    flat = _dedupe(p for p in parts if p != TRUE)
    if any(p == FALSE for p in flat):
        return FALSE
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return NaryBool("&", tuple(flat))


def disj(*parts: Formula) -> Formula:
    flat = _dedupe(p for p in parts if p != FALSE)
    if any(p == TRUE for p in flat):
        return TRUE
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return NaryBool("|", tuple(flat))


def neg(phi: Formula) -> Formula:
    if phi == TRUE:
        return FALSE
    if phi == FALSE:
        return TRUE
    if isinstance(phi, Not):
        return phi.arg
    return Not(phi)


def eq_atom(name: str, value: Number, prime_level: int = 0) -> Atom:
    return Atom("=", Var(name, prime_level), const(value))


# ---------------------------------------------------------------------------
# Traversals
# ---------------------------------------------------------------------------

def term_vars(t: Term) -> set:
    if isinstance(t, Var):
        return {t}
    if isinstance(t, Const):
        return set()
    if isinstance(t, NegTerm):
        return term_vars(t.arg)
    return term_vars(t.left) | term_vars(t.right)


def formula_vars(phi: Formula) -> set:
    if isinstance(phi, Atom):
        return term_vars(phi.left) | term_vars(phi.right)
    if isinstance(phi, BoolLit):
        return set()
    if isinstance(phi, Not):
        return formula_vars(phi.arg)
    if isinstance(phi, NaryBool):
        out: set = set()
        for a in phi.args:
            out |= formula_vars(a)
        return out
    if isinstance(phi, Implies):
        return formula_vars(phi.left) | formula_vars(phi.right)
    raise FormulaError(f"not a formula: {phi!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------
# Valuations are plain mappings Var -> float (or Fraction).  ``eps`` loosens
# every comparison; it is 0 for symbolic work and the configured evaluation
# tolerance when judging numerically simulated points.

Valuation = Mapping[Var, float]


def evaluate_term(t: Term, sigma: Valuation) -> float:
    if isinstance(t, Var):
        try:
            return float(sigma[t])
        except KeyError:
            raise UndeclaredVariable(f"no binding for {t}") from None
    if isinstance(t, Const):
        return float(t.value)
    if isinstance(t, NegTerm):
        return -evaluate_term(t.arg, sigma)
    a = evaluate_term(t.left, sigma)
    b = evaluate_term(t.right, sigma)
    if t.op == "+":
        return a + b
    if t.op == "-":
        return a - b
    return a * b


def evaluate(phi: Formula, sigma: Valuation, eps: float = 0.0) -> bool:
    """Truth of ``phi`` under ``sigma``, with comparison slack ``eps``."""
    if isinstance(phi, BoolLit):
        return phi.value
    if isinstance(phi, Atom):
        d = evaluate_term(phi.left, sigma) - evaluate_term(phi.right, sigma)
        if phi.op == "<":
            return d < eps
        if phi.op == "<=":
            return d <= eps
        if phi.op == "=":
            return abs(d) <= eps
        if phi.op == ">=":
            return d >= -eps
        return d > -eps
    if isinstance(phi, Not):
        return not evaluate(phi.arg, sigma, eps)
    if isinstance(phi, NaryBool):
        if phi.op == "&":
            return all(evaluate(a, sigma, eps) for a in phi.args)
        return any(evaluate(a, sigma, eps) for a in phi.args)
    if isinstance(phi, Implies):
        return (not evaluate(phi.left, sigma, eps)) or evaluate(phi.right, sigma, eps)
    raise FormulaError(f"not a formula: {phi!r}")


# ---------------------------------------------------------------------------
# Substitution
# ---------------------------------------------------------------------------

def substitute_term(t: Term, mapping: Mapping[Var, Term]) -> Term:
    if isinstance(t, Var):
        return mapping.get(t, t)
    if isinstance(t, Const):
        return t
    if isinstance(t, NegTerm):
        return NegTerm(substitute_term(t.arg, mapping))
    return BinTerm(t.op, substitute_term(t.left, mapping), substitute_term(t.right, mapping))


def substitute(phi: Formula, mapping: Mapping[Var, Term]) -> Formula:
    """Simultaneous substitution of terms for variables."""
    if isinstance(phi, BoolLit):
        return phi
    if isinstance(phi, Atom):
        return Atom(phi.op, substitute_term(phi.left, mapping), substitute_term(phi.right, mapping))
    if isinstance(phi, Not):
        return Not(substitute(phi.arg, mapping))
    if isinstance(phi, NaryBool):
        return NaryBool(phi.op, tuple(substitute(a, mapping) for a in phi.args))
    if isinstance(phi, Implies):
        return Implies(substitute(phi.left, mapping), substitute(phi.right, mapping))
    raise FormulaError(f"not a formula: {phi!r}")


def rename_level(phi: Formula, src_level: int, dst_level: int) -> Formula:
    """Rename every variable at ``src_level`` to the same name at ``dst_level``."""
    mapping = {
        v: Var(v.name, dst_level)
        for v in formula_vars(phi)
        if v.prime_level == src_level
    }
    return substitute(phi, mapping)


def valuation_to_formula(sigma: Valuation) -> Formula:
    """The conjunction of equalities that pins down ``sigma``."""
    parts = []
    for v in sorted(sigma.keys(), key=lambda u: (u.prime_level, u.name)):
        parts.append(Atom("=", v, const(sigma[v])))
    return conj(*parts)


def conjuncts(phi: Formula) -> list:
    """Top-level conjuncts, split recursively; disjunctions stay atomic."""
    if isinstance(phi, NaryBool) and phi.op == "&":
        out = []
        for a in phi.args:
            out.extend(conjuncts(a))
        return out
    return [phi]


# ---------------------------------------------------------------------------
# Text grammar
# ---------------------------------------------------------------------------
# atom      := term ('<' | '<=' | '=' | '>=' | '>') term
# formula   := implication; '&' binds tighter than '|' binds tighter than '->'
# term      := sum of products of unary-negated factors
# identifiers [a-zA-Z_][a-zA-Z0-9_]*, primes written x' and x''.

_CMP_OPS = ("<=", ">=", "<", ">", "=")


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tokens: list = []
        self._run()

    def _run(self):
        text, n = self.text, len(self.text)
        i = 0
        while i < n:
            c = text[i]
            if c.isspace():
                i += 1
                continue
            if c.isalpha() or c == "_":
                j = i + 1
                while j < n and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                primes = 0
                while j < n and text[j] == "'" and primes < 2:
                    primes += 1
                    j += 1
                self.tokens.append(("ident", text[i:j], i))
                i = j
                continue
            if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
                j = i
                seen_dot = False
                while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                    seen_dot = seen_dot or text[j] == "."
                    j += 1
                if j < n and text[j] in "eE":
                    k = j + 1
                    if k < n and text[k] in "+-":
                        k += 1
                    if k < n and text[k].isdigit():
                        while k < n and text[k].isdigit():
                            k += 1
                        j = k
                self.tokens.append(("number", text[i:j], i))
                i = j
                continue
            two = text[i:i + 2]
            if two in ("<=", ">=", "->"):
                self.tokens.append(("op", two, i))
                i += 2
                continue
            if c in "<>=&|!+-*()":
                self.tokens.append(("op", c, i))
                i += 1
                continue
            raise ParseError(f"unexpected character {c!r}", i)
        self.tokens.append(("eof", "", n))


class _Parser:
    def __init__(self, text: str):
        self.toks = _Tokenizer(text).tokens
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, value=None):
        tok = self.toks[self.i]
        if kind is not None and tok[0] != kind:
            raise ParseError(f"expected {kind}, got {tok[1]!r}", tok[2])
        if value is not None and tok[1] != value:
            raise ParseError(f"expected {value!r}, got {tok[1]!r}", tok[2])
        self.i += 1
        return tok

    # -- formulas ----------------------------------------------------------
    def formula(self) -> Formula:
        lhs = self.disjunction()
        if self.peek()[:2] == ("op", "->"):
            self.take()
            return Implies(lhs, self.formula())  # right associative
        return lhs

    def disjunction(self) -> Formula:
        parts = [self.conjunction()]
        while self.peek()[:2] == ("op", "|"):
            self.take()
            parts.append(self.conjunction())
        return disj(*parts) if len(parts) > 1 else parts[0]

    def conjunction(self) -> Formula:
        parts = [self.unary()]
        while self.peek()[:2] == ("op", "&"):
            self.take()
            parts.append(self.unary())
        return conj(*parts) if len(parts) > 1 else parts[0]

    def unary(self) -> Formula:
        tok = self.peek()
        if tok[:2] == ("op", "!"):
            self.take()
            return neg(self.unary())
        if tok[0] == "ident" and tok[1] in ("true", "false"):
            self.take()
            return TRUE if tok[1] == "true" else FALSE
        if tok[:2] == ("op", "("):
            # Either a parenthesised formula or a parenthesised term opening
            # an atom; backtrack on comparison.
            save = self.i
            try:
                self.take()
                inner = self.formula()
                self.take("op", ")")
                if self.peek()[1] in _CMP_OPS:
                    raise ParseError("atom", self.peek()[2])
                return inner
            except ParseError:
                self.i = save
        return self.atom()

    def atom(self) -> Formula:
        left = self.term()
        tok = self.peek()
        if tok[0] != "op" or tok[1] not in _CMP_OPS:
            raise ParseError(f"expected comparison, got {tok[1]!r}", tok[2])
        self.take()
        right = self.term()
        return Atom(tok[1], left, right)

    # -- terms -------------------------------------------------------------
    def term(self) -> Term:
        t = self.product()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            t = BinTerm(op, t, self.product())
        return t

    def product(self) -> Term:
        t = self.factor()
        while self.peek()[:2] == ("op", "*"):
            self.take()
            t = BinTerm("*", t, self.factor())
        return t

    def factor(self) -> Term:
        tok = self.peek()
        if tok[:2] == ("op", "-"):
            self.take()
            inner = self.factor()
            if isinstance(inner, Const):  # fold literal negation
                return Const(-inner.value)
            return NegTerm(inner)
        if tok[:2] == ("op", "("):
            self.take()
            t = self.term()
            self.take("op", ")")
            return t
        if tok[0] == "number":
            self.take()
            return Const(Fraction(tok[1]))
        if tok[0] == "ident":
            self.take()
            name = tok[1].rstrip("'")
            return Var(name, len(tok[1]) - len(name))
        raise ParseError(f"expected term, got {tok[1]!r}", tok[2])


def parse_formula(text: str) -> Formula:
    p = _Parser(text)
    phi = p.formula()
    tok = p.peek()
    if tok[0] != "eof":
        raise ParseError(f"trailing input {tok[1]!r}", tok[2])
    return phi


def parse_term(text: str) -> Term:
    p = _Parser(text)
    t = p.term()
    tok = p.peek()
    if tok[0] != "eof":
        raise ParseError(f"trailing input {tok[1]!r}", tok[2])
    return t


def format_formula(phi: Formula) -> str:
    """Stable text form; re-parses to a syntactically equal tree."""
    return _fmt_f(phi, 0)


def format_term(t: Term) -> str:
    return _fmt_t(t, 0)


# precedence: -> 0, | 1, & 2, ! / atom 3
def _fmt_f(phi: Formula, prec: int) -> str:
    if isinstance(phi, BoolLit):
        return str(phi)
    if isinstance(phi, Atom):
        return f"{_fmt_t(phi.left, 1)} {phi.op} {_fmt_t(phi.right, 1)}"
    if isinstance(phi, Not):
        return f"!({_fmt_f(phi.arg, 0)})"
    if isinstance(phi, Implies):
        body = f"{_fmt_f(phi.left, 1)} -> {_fmt_f(phi.right, 0)}"
        return f"({body})" if prec > 0 else body
    level = 2 if phi.op == "&" else 1
    body = f" {phi.op} ".join(_fmt_f(a, level + (0 if phi.op == '&' else 1)) for a in phi.args)
    return f"({body})" if prec >= level else body


# term precedence: +,- at 1; * at 2; atoms at 3
def _fmt_t(t: Term, prec: int) -> str:
    if isinstance(t, Var):
        return str(t)
    if isinstance(t, Const):
        return format_fraction(t.value)
    if isinstance(t, NegTerm):
        return f"-{_fmt_t(t.arg, 3)}"
    level = 2 if t.op == "*" else 1
    body = f"{_fmt_t(t.left, level)} {t.op} {_fmt_t(t.right, level + 1)}"
    return f"({body})" if prec > level else body
