"""Hybrid automata and discrete-time transition systems.

A model file is UTF-8 JSON: variables, locations (optionally carrying a flow
ODE and a stay condition), an initial location plus initial formula, a list
of guarded jump transitions, and an optional default safety formula.  A model
whose locations carry no ``flow``/``inv`` entries is a discrete-time system.

Commands are restricted to the invertible grammar ``skip`` and
``x := r1*x + r2`` / ``x := r1*x - r2`` with ``r1 != 0``; this is what makes
backward jump queries deterministic.  All right-hand sides of a multi-
assignment command read the pre-state.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from .formulas import (
    Formula,
    ParseError,
    Term,
    Var,
    conj,
    evaluate,
    format_formula,
    formula_vars,
    parse_formula,
    parse_term,
    term_vars,
)


class ValidationError(Exception):
    """The model violates a structural invariant."""


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Command:
    """``skip`` or the affine update ``var := r1*var +/- addend``.

    The addend is a constant ``r2`` or a scaled variable ``r2*addend_var``
    (Example-style accumulator updates such as ``sum := 1*sum + x`` need the
    latter).  The sign is folded into ``r2``.
    """

    var: Optional[str] = None  # None means skip
    r1: Fraction = Fraction(1)
    r2: Fraction = Fraction(0)
    addend_var: Optional[str] = None

    @property
    def is_skip(self) -> bool:
        return self.var is None

    def __str__(self) -> str:
        if self.is_skip:
            return "skip"
        sign = "-" if self.r2 < 0 else "+"
        mag = _frac_text(abs(self.r2))
        tail = mag if self.addend_var is None else (
            self.addend_var if abs(self.r2) == 1 else f"{mag}*{self.addend_var}"
        )
        return f"{self.var} := {_frac_text(self.r1)}*{self.var} {sign} {tail}"


def _frac_text(f: Fraction) -> str:
    return str(f.numerator) if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


_NUM = r"-?[0-9]+(?:\.[0-9]+)?(?:/[0-9]+)?"
_IDENT = r"[a-zA-Z_][a-zA-Z0-9_]*"
_CMD_RE = re.compile(
    rf"^\s*({_IDENT})\s*:=\s*({_NUM})\s*\*\s*({_IDENT})\s*([+-])\s*"
    rf"(?:({_NUM})\s*\*\s*({_IDENT})|({_NUM})|({_IDENT}))\s*$"
)


def parse_command(text: str) -> Command:
    if text.strip() == "skip":
        return Command()
    m = _CMD_RE.match(text)
    if not m:
        raise ValidationError(
            f"command {text!r} is outside the grammar skip | x := r1*x + r2 | x := r1*x - r2"
        )
    lhs, r1, rhs, sign, coef, coef_var, const_r2, bare_var = m.groups()
    if lhs != rhs:
        raise ValidationError(f"command {text!r} must update {lhs} from itself")
    r1f = Fraction(r1)
    if r1f == 0:
        raise ValidationError(f"command {text!r} has r1 = 0 and cannot be inverted")
    if const_r2 is not None:
        r2f, addend = Fraction(const_r2), None
    elif bare_var is not None:
        r2f, addend = Fraction(1), bare_var
    else:
        r2f, addend = Fraction(coef), coef_var
    if sign == "-":
        r2f = -r2f
    return Command(lhs, r1f, r2f, addend)


def command_matrix(cmds: Sequence["Command"], variables: Sequence[str]):
    """(A, b) with post = A * pre + b, over exact rationals."""
    index = {n: i for i, n in enumerate(variables)}
    size = len(variables)
    a = [[Fraction(1) if i == j else Fraction(0) for j in range(size)] for i in range(size)]
    b = [Fraction(0)] * size
    for c in cmds:
        if c.is_skip:
            continue
        i = index[c.var]
        row = [Fraction(0)] * size
        row[index[c.var]] = c.r1
        if c.addend_var is None:
            b[i] = c.r2
        else:
            row[index[c.addend_var]] += c.r2
            b[i] = Fraction(0)
        a[i] = row
    return a, b


def _det(a) -> Fraction:
    m = [row[:] for row in a]
    size = len(m)
    det = Fraction(1)
    for col in range(size):
        pivot = next((r for r in range(col, size) if m[r][col] != 0), None)
        if pivot is None:
            return Fraction(0)
        if pivot != col:
            m[col], m[pivot] = m[pivot], m[col]
            det = -det
        det *= m[col][col]
        inv = Fraction(1) / m[col][col]
        for r in range(col + 1, size):
            factor = m[r][col] * inv
            if factor:
                m[r] = [x - factor * y for x, y in zip(m[r], m[col])]
    return det


def check_command_invertible(cmds: Sequence["Command"], variables: Sequence[str]):
    a, _ = command_matrix(cmds, variables)
    if _det(a) == 0:
        raise ValidationError(
            "command is not deterministic backwards: its update matrix is singular"
        )


def command_update_term(cmds: Sequence[Command], name: str) -> Term:
    """The level-0 term the command assigns to ``name`` (identity if untouched)."""
    from .formulas import BinTerm, Const
    for c in cmds:
        if not c.is_skip and c.var == name:
            scaled = BinTerm("*", Const(c.r1), Var(name, 0))
            if c.addend_var is None:
                addend: Term = Const(c.r2)
            elif c.r2 == 1:
                addend = Var(c.addend_var, 0)
            else:
                addend = BinTerm("*", Const(c.r2), Var(c.addend_var, 0))
            return BinTerm("+", scaled, addend)
    return Var(name, 0)


def command_formula(cmds: Sequence[Command], variables: Sequence[str]) -> Formula:
    """phi_c over X and X': assigned vars get their update, the rest stutter."""
    from .formulas import Atom
    parts = [Atom("=", Var(n, 1), command_update_term(cmds, n)) for n in variables]
    return conj(*parts)


def apply_command(cmds: Sequence[Command], sigma: Dict[Var, float]) -> Dict[Var, float]:
    """Forward image; every right-hand side reads the pre-state ``sigma``."""
    out = dict(sigma)
    for c in cmds:
        if not c.is_skip:
            addend = float(c.r2) if c.addend_var is None else float(c.r2) * sigma[Var(c.addend_var)]
            out[Var(c.var)] = float(c.r1) * sigma[Var(c.var)] + addend
    return out


def invert_command(cmds: Sequence[Command], sigma_post: Dict[Var, float]) -> Dict[Var, float]:
    """The unique pre-state mapping to ``sigma_post``.

    Solves the exact rational system post = A*pre + b; parse-time validation
    guarantees A is invertible.
    """
    if all(c.is_skip for c in cmds):
        return dict(sigma_post)
    names = sorted({v.name for v in sigma_post})
    a, b = command_matrix(cmds, names)
    rhs = [Fraction(sigma_post[Var(n, 0)]) - b[i] for i, n in enumerate(names)]
    pre = _solve_exact(a, rhs)
    return {Var(n, 0): float(x) for n, x in zip(names, pre)}


def _solve_exact(a, rhs):
    size = len(rhs)
    m = [row[:] + [rhs[i]] for i, row in enumerate(a)]
    for col in range(size):
        pivot = next(r for r in range(col, size) if m[r][col] != 0)
        m[col], m[pivot] = m[pivot], m[col]
        inv = Fraction(1) / m[col][col]
        m[col] = [x * inv for x in m[col]]
        for r in range(size):
            if r != col and m[r][col]:
                factor = m[r][col]
                m[r] = [x - factor * y for x, y in zip(m[r], m[col])]
    return [m[i][size] for i in range(size)]


# ---------------------------------------------------------------------------
# Automata
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpTransition:
    source: str
    guard: Formula
    commands: Tuple[Command, ...]
    target: str

    def __str__(self) -> str:
        cmds = ", ".join(str(c) for c in self.commands)
        return f"{self.source} --[{format_formula(self.guard)} / {cmds}]--> {self.target}"


@dataclass(frozen=True)
class Ode:
    """Map from each level-0 variable to its polynomial time derivative."""

    derivatives: Tuple[Tuple[str, Term], ...]

    def rhs(self, name: str) -> Term:
        for n, t in self.derivatives:
            if n == name:
                return t
        raise KeyError(name)

    def names(self) -> List[str]:
        return [n for n, _ in self.derivatives]

    def __str__(self) -> str:
        from .formulas import format_term
        return ", ".join(f"d{n}/dt = {format_term(t)}" for n, t in self.derivatives)


@dataclass(frozen=True)
class HybridAutomaton:
    """Shared carrier for hybrid automata and DTSTS (``flow``/``inv`` empty)."""

    variables: Tuple[str, ...]
    locations: Tuple[str, ...]
    initial_location: str
    init: Formula
    flow: Dict[str, Ode]
    stay: Dict[str, Formula]
    transitions: Tuple[JumpTransition, ...]
    safe: Optional[Formula] = None

    @property
    def is_hybrid(self) -> bool:
        return bool(self.flow)

    def vars0(self) -> List[Var]:
        return [Var(n, 0) for n in self.variables]

    def incoming(self, target: str) -> List[JumpTransition]:
        return [t for t in self.transitions if t.target == target]

    def validate(self):
        names = set(self.variables)
        if len(names) != len(self.variables):
            raise ValidationError("duplicate variable names")
        if self.initial_location not in self.locations:
            raise ValidationError(f"initial location {self.initial_location!r} is not declared")
        if len(set(self.locations)) != len(self.locations):
            raise ValidationError("duplicate location ids")
        self._check_levels(self.init, "init", {0})
        if self.safe is not None:
            self._check_levels(self.safe, "safe", {0})
        if self.is_hybrid:
            for q in self.locations:
                if q not in self.flow or q not in self.stay:
                    raise ValidationError(f"location {q!r} lacks flow or stay condition")
                ode = self.flow[q]
                if sorted(ode.names()) != sorted(self.variables):
                    raise ValidationError(f"flow at {q!r} must define every variable")
                for n, t in ode.derivatives:
                    for v in term_vars(t):
                        if v.prime_level != 0 or v.name not in names:
                            raise ValidationError(f"flow at {q!r} mentions {v}")
                self._check_levels(self.stay[q], f"stay at {q!r}", {0})
        elif self.stay or self.flow:
            raise ValidationError("flow/inv must be given for all locations or none")
        for t in self.transitions:
            if t.source not in self.locations or t.target not in self.locations:
                raise ValidationError(f"transition endpoint is not a declared location: {t}")
            self._check_levels(t.guard, f"guard of {t}", {0})
            seen = set()
            for c in t.commands:
                if c.is_skip:
                    continue
                if c.var not in names:
                    raise ValidationError(f"command assigns undeclared variable {c.var!r}")
                if c.addend_var is not None and c.addend_var not in names:
                    raise ValidationError(f"command reads undeclared variable {c.addend_var!r}")
                if c.var in seen:
                    raise ValidationError(f"command assigns {c.var!r} twice")
                seen.add(c.var)
            check_command_invertible(t.commands, self.variables)

    def _check_levels(self, phi: Formula, what: str, levels: set):
        for v in formula_vars(phi):
            if v.name not in set(self.variables):
                raise ValidationError(f"{what} mentions undeclared variable {v.name!r}")
            if v.prime_level not in levels:
                raise ValidationError(f"{what} mentions {v} at a forbidden prime level")


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

def parse_model(text: str) -> HybridAutomaton:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model file is not valid JSON: line {exc.lineno} column {exc.colno}") from exc
    try:
        variables = tuple(doc["vars"])
        raw_locations = doc["locations"]
        init_doc = doc["init"]
        raw_transitions = doc.get("transitions", [])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"model file misses required key: {exc}") from exc

    locations = []
    flow: Dict[str, Ode] = {}
    stay: Dict[str, Formula] = {}
    for loc in raw_locations:
        qid = loc["id"]
        locations.append(qid)
        if "flow" in loc or "inv" in loc:
            if "flow" not in loc or "inv" not in loc:
                raise ParseError(f"location {qid!r} must give both flow and inv, or neither")
            derivs = tuple((name, parse_term(expr)) for name, expr in loc["flow"].items())
            flow[qid] = Ode(derivs)
            stay[qid] = parse_formula(loc["inv"])

    transitions = []
    for tr in raw_transitions:
        cmds = tuple(parse_command(c) for c in tr.get("cmd", ["skip"]))
        transitions.append(
            JumpTransition(tr["from"], parse_formula(tr["guard"]), cmds, tr["to"])
        )

    ha = HybridAutomaton(
        variables=variables,
        locations=tuple(locations),
        initial_location=init_doc["location"],
        init=parse_formula(init_doc["formula"]),
        flow=flow,
        stay=stay,
        transitions=tuple(transitions),
        safe=parse_formula(doc["safe"]) if "safe" in doc else None,
    )
    ha.validate()
    return ha


def load_model(path: str) -> HybridAutomaton:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())


def serialize_model(ha: HybridAutomaton) -> str:
    from .formulas import format_term
    doc: Dict[str, object] = {"vars": list(ha.variables)}
    locs = []
    for q in ha.locations:
        entry: Dict[str, object] = {"id": q}
        if ha.is_hybrid:
            entry["flow"] = {n: format_term(t) for n, t in ha.flow[q].derivatives}
            entry["inv"] = format_formula(ha.stay[q])
        locs.append(entry)
    doc["locations"] = locs
    doc["init"] = {"location": ha.initial_location, "formula": format_formula(ha.init)}
    doc["transitions"] = [
        {
            "from": t.source,
            "guard": format_formula(t.guard),
            "cmd": [str(c) for c in t.commands],
            "to": t.target,
        }
        for t in ha.transitions
    ]
    if ha.safe is not None:
        doc["safe"] = format_formula(ha.safe)
    return json.dumps(doc, indent=2)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Run:
    """Alternating sequence of locations and valuations."""

    steps: Tuple[Tuple[str, Dict[Var, float]], ...]

    def __post_init__(self):
        if not self.steps:
            raise ValidationError("a run is nonempty")

    def last_valuation(self) -> Dict[Var, float]:
        return self.steps[-1][1]


class SimulationDiverged(Exception):
    pass


def check_run(ha: HybridAutomaton, run: Run, eps: float = 1e-6) -> bool:
    """Replay ``run`` against the model within tolerance ``eps``.

    For a hybrid model every interior step must be a flow transition (found
    by forward simulation, stay condition enforced along the way with the
    start point exempt) followed by an enabled jump; the last step is a flow
    transition only.  Zero-duration flows are legal.  For a discrete model
    every step is a jump.  Raises SimulationDiverged if the integrator
    leaves the representable range while replaying a flow segment.
    """
    from .discharge import NumericOverflow, SimParams, flow_connects

    q0, sigma0 = run.steps[0]
    if q0 != ha.initial_location:
        return False
    if not evaluate(ha.init, sigma0, eps):
        return False
    if not ha.is_hybrid:
        for (q_a, s_a), (q_b, s_b) in zip(run.steps, run.steps[1:]):
            if not _discrete_step_ok(ha, q_a, s_a, q_b, s_b, eps):
                return False
        return True

    params = SimParams()
    n = len(run.steps)
    try:
        for i in range(n - 1):
            q_a, s_a = run.steps[i]
            q_b, s_b = run.steps[i + 1]
            if i == n - 2:
                # Final step: flow only, same location.
                if q_a != q_b:
                    return False
                if not flow_connects(ha.flow[q_a], ha.stay[q_a], s_a, s_b,
                                     params, eps, on_overflow="raise"):
                    return False
            else:
                if not _hybrid_step_ok(ha, q_a, s_a, q_b, s_b, params, eps):
                    return False
    except NumericOverflow as exc:
        raise SimulationDiverged(str(exc)) from exc
    return True


def _discrete_step_ok(ha, q_a, s_a, q_b, s_b, eps) -> bool:
    for t in ha.transitions:
        if t.source != q_a or t.target != q_b:
            continue
        if not evaluate(t.guard, s_a, eps):
            continue
        image = apply_command(t.commands, s_a)
        if all(abs(image[v] - s_b[v]) <= max(eps, eps * abs(s_b[v])) for v in image):
            return True
    return False


def _hybrid_step_ok(ha, q_a, s_a, q_b, s_b, params, eps) -> bool:
    from .discharge import flow_connects

    for t in ha.transitions:
        if t.source != q_a or t.target != q_b:
            continue
        pre_jump = invert_command(t.commands, s_b)
        if not evaluate(t.guard, pre_jump, eps):
            continue
        if flow_connects(ha.flow[q_a], ha.stay[q_a], s_a, pre_jump, params, eps,
                         on_overflow="raise"):
            return True
    return False
