"""Bridge to an external SMT solver process speaking SMT-LIB v2, logic QF_NRA.

One persistent solver session runs per verification; queries are scoped with
push/pop.  If the process dies mid-session it is restarted and the permanent
declarations are replayed.  The default command is ``z3 -in`` and can be
overridden with ``--solver-cmd`` or the ``HYPDR_SOLVER`` environment variable.
"""

from __future__ import annotations

import os
import shlex
import subprocess
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .formulas import (
    Atom,
    BoolLit,
    Const,
    Formula,
    FormulaError,
    Implies,
    NaryBool,
    NegTerm,
    Not,
    Term,
    Var,
    formula_vars,
)

DEFAULT_SOLVER_CMD = "z3 -in"


class SolverError(Exception):
    """The solver process failed in a way we cannot recover from."""


class SolverCrashed(SolverError):
    pass


@dataclass
class SmtResult:
    status: str  # 'sat' | 'unsat' | 'unknown'
    model: Optional[Dict[Var, float]] = None

    @property
    def is_sat(self) -> bool:
        return self.status == "sat"

    @property
    def is_unsat(self) -> bool:
        return self.status == "unsat"


def smt_symbol(v: Var) -> str:
    # Quoted symbols keep the surface syntax (primes) readable in logs.
    return "|" + v.name + "'" * v.prime_level + "|"


def term_to_smt(t: Term) -> str:
    if isinstance(t, Var):
        return smt_symbol(t)
    if isinstance(t, Const):
        f: Fraction = t.value
        if f < 0:
            return f"(- {_frac_smt(-f)})"
        return _frac_smt(f)
    if isinstance(t, NegTerm):
        return f"(- {term_to_smt(t.arg)})"
    return f"({t.op} {term_to_smt(t.left)} {term_to_smt(t.right)})"


def _frac_smt(f: Fraction) -> str:
    if f.denominator == 1:
        return f"{f.numerator}.0"
    return f"(/ {f.numerator}.0 {f.denominator}.0)"


def formula_to_smt(phi: Formula) -> str:
    if isinstance(phi, BoolLit):
        return "true" if phi.value else "false"
    if isinstance(phi, Atom):
        op = "=" if phi.op == "=" else phi.op
        return f"({op} {term_to_smt(phi.left)} {term_to_smt(phi.right)})"
    if isinstance(phi, Not):
        return f"(not {formula_to_smt(phi.arg)})"
    if isinstance(phi, NaryBool):
        word = "and" if phi.op == "&" else "or"
        return f"({word} " + " ".join(formula_to_smt(a) for a in phi.args) + ")"
    if isinstance(phi, Implies):
        return f"(=> {formula_to_smt(phi.left)} {formula_to_smt(phi.right)})"
    raise FormulaError(f"not a formula: {phi!r}")


# ---------------------------------------------------------------------------
# Model parsing
# ---------------------------------------------------------------------------

def _tokenize_sexp(text: str) -> List[str]:
    toks: List[str] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            toks.append(c)
            i += 1
        elif c == "|":
            j = text.index("|", i + 1)
            toks.append(text[i:j + 1])
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            toks.append(text[i:j])
            i = j
    return toks


def _parse_sexp(toks: List[str], i: int) -> Tuple[object, int]:
    if toks[i] == "(":
        items = []
        i += 1
        while toks[i] != ")":
            item, i = _parse_sexp(toks, i)
            items.append(item)
        return items, i + 1
    return toks[i], i + 1


def _sexp_value(expr) -> float:
    """Numeric value of a model term: decimals, rationals, negation."""
    if isinstance(expr, str):
        text = expr.rstrip("?")  # inexact-decimal marker for algebraic numbers
        return float(Fraction(text)) if "/" in text else float(text)
    if isinstance(expr, list) and expr:
        head = expr[0]
        if head == "-" and len(expr) == 2:
            return -_sexp_value(expr[1])
        if head == "/" and len(expr) == 3:
            return _sexp_value(expr[1]) / _sexp_value(expr[2])
        if head == "+" and len(expr) == 3:
            return _sexp_value(expr[1]) + _sexp_value(expr[2])
        if head == "*" and len(expr) == 3:
            return _sexp_value(expr[1]) * _sexp_value(expr[2])
        if head == "root-obj":
            raise SolverError(f"cannot read algebraic model value {expr!r}")
    raise SolverError(f"cannot read model value {expr!r}")


def _symbol_to_var(sym: str) -> Optional[Var]:
    name = sym[1:-1] if sym.startswith("|") else sym
    level = len(name) - len(name.rstrip("'"))
    base = name.rstrip("'")
    if not base or level > 2:
        return None
    return Var(base, level)


def parse_model(text: str) -> Dict[Var, float]:
    toks = _tokenize_sexp(text)
    expr, _ = _parse_sexp(toks, 0)
    if not isinstance(expr, list):
        raise SolverError(f"unexpected model output: {text!r}")
    if expr and expr[0] == "model":  # older solvers prefix the keyword
        expr = expr[1:]
    out: Dict[Var, float] = {}
    for entry in expr:
        if not (isinstance(entry, list) and len(entry) >= 5 and entry[0] == "define-fun"):
            continue
        var = _symbol_to_var(entry[1])
        if var is None:
            continue
        out[var] = _sexp_value(entry[4])
    return out


# ---------------------------------------------------------------------------
# Solver session
# ---------------------------------------------------------------------------

class SmtSession:
    """A live solver process with incremental push/pop and crash recovery."""

    def __init__(self, solver_cmd: Optional[str] = None, timeout_ms: int = 10000):
        self.solver_cmd = solver_cmd or os.environ.get("HYPDR_SOLVER") or DEFAULT_SOLVER_CMD
        self.timeout_ms = timeout_ms
        self._declared: List[Var] = []
        self._proc: Optional[subprocess.Popen] = None
        self.num_queries = 0
        self._start()

    # -- process management -------------------------------------------------
    def _start(self):
        try:
            self._proc = subprocess.Popen(
                shlex.split(self.solver_cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SolverError(f"cannot start solver {self.solver_cmd!r}: {exc}") from exc
        self._send("(set-option :print-success true)")
        self._expect_success()
        for line in (
            f"(set-option :timeout {self.timeout_ms})",
            "(set-option :pp.decimal true)",
            "(set-option :pp.decimal_precision 25)",
            "(set-option :smt.random_seed 7)",
            "(set-logic QF_NRA)",
        ):
            self._send(line)
            self._expect_success()
        for v in self._declared:
            self._send(f"(declare-const {smt_symbol(v)} Real)")
            self._expect_success()

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _send(self, line: str):
        assert self._proc is not None
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SolverCrashed(str(exc)) from exc

    def _readline(self) -> str:
        assert self._proc is not None
        line = self._proc.stdout.readline()
        if line == "":
            raise SolverCrashed("solver closed its output stream")
        return line.strip()

    def _expect_success(self):
        line = self._readline()
        while line == "":
            line = self._readline()
        if line != "success":
            raise SolverError(f"solver said {line!r} where success was expected")

    def _read_sexp_block(self) -> str:
        depth = 0
        chunks: List[str] = []
        while True:
            line = self._readline()
            chunks.append(line)
            depth += line.count("(") - line.count(")")
            if depth <= 0 and chunks:
                return "\n".join(chunks)

    # -- declarations and queries -------------------------------------------
    def declare(self, variables: Iterable[Var]):
        """Declare variables for the whole session (survives restarts)."""
        fresh = [v for v in variables if v not in self._declared]
        for v in fresh:
            self._declared.append(v)
            self._send(f"(declare-const {smt_symbol(v)} Real)")
            self._expect_success()

    def check(self, assertions: Sequence[Formula], want_model: bool = True) -> SmtResult:
        """Satisfiability of a conjunction, under a fresh push/pop scope."""
        for attempt in (0, 1):
            try:
                return self._check_once(assertions, want_model)
            except SolverCrashed:
                if attempt == 1:
                    raise
                self.close()
                self._start()
        raise SolverCrashed("unreachable")

    def _check_once(self, assertions: Sequence[Formula], want_model: bool) -> SmtResult:
        self.num_queries += 1
        local = set()
        for phi in assertions:
            local |= formula_vars(phi)
        undeclared = [v for v in sorted(local, key=lambda u: (u.prime_level, u.name))
                      if v not in self._declared]
        self._send("(push 1)")
        self._expect_success()
        try:
            for v in undeclared:
                self._send(f"(declare-const {smt_symbol(v)} Real)")
                self._expect_success()
            for phi in assertions:
                self._send(f"(assert {formula_to_smt(phi)})")
                self._expect_success()
            self._send("(check-sat)")
            status = self._readline()
            while status == "":
                status = self._readline()
            if status not in ("sat", "unsat", "unknown"):
                raise SolverError(f"unexpected check-sat answer {status!r}")
            model = None
            if status == "sat" and want_model:
                self._send("(get-model)")
                raw = self._read_sexp_block()
                parsed = parse_model(raw)
                # The solver omits don't-care variables; they default to 0.
                model = {v: parsed.get(v, 0.0) for v in set(self._declared) | local}
        finally:
            try:
                self._send("(pop 1)")
                self._expect_success()
            except SolverError:
                pass
        return SmtResult(status, model)

    # -- convenience wrappers -----------------------------------------------
    def is_unsat(self, *assertions: Formula) -> bool:
        return self.check(list(assertions), want_model=False).is_unsat

    def is_valid_implication(self, lhs: Formula, rhs: Formula) -> bool:
        """|= lhs -> rhs, i.e. lhs & !rhs unsat.  Unknown counts as not valid."""
        return self.is_unsat(lhs, Not(rhs) if not isinstance(rhs, Not) else rhs.arg)

    def equivalent(self, a: Formula, b: Formula) -> bool:
        return self.is_valid_implication(a, b) and self.is_valid_implication(b, a)
