"""Discharging the three verification-condition classes.

* Pure quantifier-free nonlinear real arithmetic goes to the SMT session.
* Satisfiability of ``pre /\ <ode, stay>(x = sigma')`` is decided by
  time-inverted fixed-step RK4 simulation from ``sigma'``: the first sample
  that satisfies ``pre`` while every strictly earlier sample satisfied the
  stay condition witnesses satisfiability; hitting a sample that violates
  the stay condition first proves the backward-reachable set exhausted and
  sends the query down the unsatisfiability/generalization path; running out
  of horizon is inconclusive.
* Unsatisfiability of ``phi1 /\ <ode, stay> phi2`` is established by the
  one-Euler-step invariance sufficient condition: either ``phi1`` or
  ``!phi2`` is invariant under a symbolic step of any size in (0, r), and
  ``phi1 /\ phi2`` has no models.

Jump obligations reduce to the flow-only forms because commands are
restricted to the invertible affine grammar: the post-jump constraint is
pulled back through the command into a constraint on the flow endpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .formulas import (
    Atom,
    BinTerm,
    Const,
    Formula,
    NegTerm,
    Term,
    TRUE,
    Var,
    conj,
    evaluate,
    neg,
    substitute,
)
from .model import Command, Ode, command_update_term, invert_command
from .smt import SmtSession

Valuation = Dict[Var, float]


@dataclass
class SimParams:
    """Fixed-step integration parameters and the evaluation tolerance."""

    step: float = 1e-3
    horizon: int = 20000
    eps_eval: float = 1e-9

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")


class NumericOverflow(Exception):
    pass


# ---------------------------------------------------------------------------
# ODE compilation and RK4
# ---------------------------------------------------------------------------

def _compile_term(t: Term, index: Dict[str, int]) -> Callable:
    if isinstance(t, Var):
        i = index[t.name]
        return lambda s: s[i]
    if isinstance(t, Const):
        v = float(t.value)
        return lambda s: v
    if isinstance(t, NegTerm):
        f = _compile_term(t.arg, index)
        return lambda s: -f(s)
    fl = _compile_term(t.left, index)
    fr = _compile_term(t.right, index)
    if t.op == "+":
        return lambda s: fl(s) + fr(s)
    if t.op == "-":
        return lambda s: fl(s) - fr(s)
    return lambda s: fl(s) * fr(s)


def compile_ode(ode: Ode) -> Tuple[List[str], Callable]:
    """Variable order and a vector field callable over state tuples."""
    names = ode.names()
    index = {n: i for i, n in enumerate(names)}
    fns = [_compile_term(ode.rhs(n), index) for n in names]
    def field(state):
        return [f(state) for f in fns]
    return names, field


def _rk4_step(field: Callable, state: List[float], h: float) -> List[float]:
    k1 = field(state)
    k2 = field([s + 0.5 * h * k for s, k in zip(state, k1)])
    k3 = field([s + 0.5 * h * k for s, k in zip(state, k2)])
    k4 = field([s + h * k for s, k in zip(state, k3)])
    return [
        s + (h / 6.0) * (a + 2 * b + 2 * c + d)
        for s, a, b, c, d in zip(state, k1, k2, k3, k4)
    ]


def simulate_ode(
    ode: Ode,
    sigma0: Valuation,
    params: SimParams,
    direction: str = "forward",
) -> List[Valuation]:
    """Sampled trajectory sigma_0 .. sigma_{T-1} at spacing ``params.step``.

    Backward integration uses the negated vector field, which is the
    fixed-step equivalent of rewriting t to -t in the ODE.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(direction)
    names, field = compile_ode(ode)
    sign = 1.0 if direction == "forward" else -1.0
    signed = lambda s: [sign * d for d in field(s)]
    state = [float(sigma0[Var(n, 0)]) for n in names]
    out: List[Valuation] = [dict(sigma0)]
    for _ in range(params.horizon - 1):
        state = _rk4_step(signed, state, params.step)
        if any(not math.isfinite(x) or abs(x) > 1e12 for x in state):
            raise NumericOverflow("trajectory left the representable range")
        out.append({Var(n, 0): x for n, x in zip(names, state)})
    return out


def _iter_backward(ode: Ode, sigma0: Valuation, params: SimParams):
    """Lazy backward samples, index 0 being ``sigma0`` itself."""
    names, field = compile_ode(ode)
    neg_field = lambda s: [-d for d in field(s)]
    state = [float(sigma0[Var(n, 0)]) for n in names]
    yield dict(sigma0)
    for _ in range(params.horizon - 1):
        state = _rk4_step(neg_field, state, params.step)
        if any(not math.isfinite(x) or abs(x) > 1e12 for x in state):
            raise NumericOverflow("trajectory left the representable range")
        yield {Var(n, 0): x for n, x in zip(names, state)}


def flow_connects(
    ode: Ode,
    stay: Formula,
    sigma_from: Valuation,
    sigma_to: Valuation,
    params: SimParams,
    eps: float,
    on_overflow: str = "false",
) -> bool:
    """Whether ``sigma_from`` flow-reaches ``sigma_to`` within tolerance.

    Checked on the backward trajectory from ``sigma_to``: some sample must
    match ``sigma_from`` while all strictly earlier samples (the open-start
    interval, endpoint included) satisfy the stay condition.  An integrator
    overflow counts as not-connected unless ``on_overflow`` is 'raise'.
    """
    def close(a: Valuation, b: Valuation) -> bool:
        return all(abs(a[v] - b[v]) <= eps * (1.0 + abs(b[v])) for v in b if v in a)

    if close(sigma_to, sigma_from):
        return True
    try:
        for i, sample in enumerate(_iter_backward(ode, sigma_to, params)):
            if i > 0 and close(sample, sigma_from):
                return True
            if not evaluate(stay, sample, max(eps, params.eps_eval)):
                return False
    except NumericOverflow:
        if on_overflow == "raise":
            raise
        return False
    return False


# ---------------------------------------------------------------------------
# Outcomes
# ---------------------------------------------------------------------------

@dataclass
class DischargeOutcome:
    kind: str  # 'sat' | 'unsat' | 'otherwise' | 'abort'
    witness: Optional[Valuation] = None
    generalization: Optional[Formula] = None
    source: Optional[str] = None  # 'script' | 'heuristic' | 'interactive'
    reason: Optional[str] = None
    trajectory: Optional[List[Valuation]] = None

    @property
    def is_sat(self) -> bool:
        return self.kind == "sat"

    @property
    def is_unsat(self) -> bool:
        return self.kind == "unsat"


# ---------------------------------------------------------------------------
# Point and jump queries (time-inverted simulation)
# ---------------------------------------------------------------------------

GeneralizeCallback = Callable[[List[Valuation]], Optional[Tuple[Formula, str]]]

# When set to a list, every satisfiability witness produced by the backward
# simulation is recorded as (ode, stay, sigma_prime, witness, index) so test
# suites can replay them forward.
WITNESS_AUDIT: Optional[List[tuple]] = None


def query_sat_and_cont_point(
    pre: Formula,
    ode: Ode,
    stay: Formula,
    sigma_prime: Valuation,
    params: SimParams,
    generalize: Optional[GeneralizeCallback] = None,
) -> DischargeOutcome:
    """Discharge ``pre /\ <ode, stay>(x = sigma')`` by backward simulation.

    The index-0 sample is ``sigma'`` itself: a zero-duration flow needs no
    stay condition, so ``sigma' |= pre`` alone is already a witness.
    """
    eps = params.eps_eval
    samples: List[Valuation] = []
    frontier_hit = False
    try:
        for i, sample in enumerate(_iter_backward(ode, sigma_prime, params)):
            samples.append(sample)
            if evaluate(pre, sample, eps):
                if WITNESS_AUDIT is not None:
                    WITNESS_AUDIT.append((ode, stay, dict(sigma_prime), dict(sample), i))
                return DischargeOutcome("sat", witness=sample, trajectory=samples)
            if not evaluate(stay, sample, eps):
                frontier_hit = True
                break
    except NumericOverflow:
        return DischargeOutcome("abort", reason="NumericOverflow", trajectory=samples)
    if not frontier_hit:
        return DischargeOutcome("abort", reason="HorizonExhausted", trajectory=samples)
    if generalize is None:
        return DischargeOutcome("unsat", trajectory=samples)
    got = generalize(samples)
    if got is None:
        return DischargeOutcome("abort", reason="OracleExhausted", trajectory=samples)
    psi, source = got
    return DischargeOutcome("unsat", generalization=psi, source=source, trajectory=samples)


def query_sat_and_cont_jump(
    pre: Formula,
    ode: Ode,
    stay: Formula,
    guard: Formula,
    commands: Sequence[Command],
    sigma_prime: Valuation,
    params: SimParams,
    generalize: Optional[GeneralizeCallback] = None,
) -> DischargeOutcome:
    """Discharge ``pre /\ <ode, stay>(guard /\ cmd /\ x' = sigma')``.

    The command grammar pins the unique pre-jump valuation, so the query
    reduces to a point query from that valuation.  A pre-jump point that
    fails the guard makes the obligation immediately unsatisfiable.
    """
    pre_jump = invert_command(commands, sigma_prime)
    if not evaluate(guard, pre_jump, params.eps_eval):
        if generalize is None:
            return DischargeOutcome("unsat", trajectory=[pre_jump])
        got = generalize([pre_jump])
        if got is None:
            return DischargeOutcome("abort", reason="OracleExhausted", trajectory=[pre_jump])
        psi, source = got
        return DischargeOutcome("unsat", generalization=psi, source=source,
                                trajectory=[pre_jump])
    return query_sat_and_cont_point(pre, ode, stay, pre_jump, params, generalize)


# ---------------------------------------------------------------------------
# Unsatisfiability via one-step invariance
# ---------------------------------------------------------------------------

# The symbolic step size; level 2 keeps it off the model's plain namespace.
DT = Var("dtslack", 2)


@dataclass
class UnsatRecord:
    """An issued invariance verdict, kept for the statistical soundness probe."""

    phi1: Formula
    ode: Ode
    stay: Formula
    phi2: Formula
    r: float


def euler_substitution(phi: Formula, ode: Ode, dt: Var = DT) -> Formula:
    """[x + f(x)*dt / x] phi, applied simultaneously to all flowing variables."""
    mapping = {
        Var(n, 0): BinTerm("+", Var(n, 0), BinTerm("*", ode.rhs(n), dt))
        for n in ode.names()
    }
    return substitute(phi, mapping)


def query_unsat_invariance(
    smt: SmtSession,
    phi1: Formula,
    ode: Ode,
    stay: Formula,
    phi2: Formula,
    r: float = 1e-3,
    registry: Optional[List[UnsatRecord]] = None,
) -> str:
    """Return 'unsat' or 'otherwise' for ``phi1 /\ <ode, stay> phi2``.

    Solver failures and unknowns degrade to 'otherwise'; an 'unsat' answer
    is a proof.  Every 'unsat' is appended to ``registry`` when given.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    try:
        overlap = smt.check([phi1, phi2], want_model=False)
    except Exception:
        return "otherwise"
    if not overlap.is_unsat:
        return "otherwise"  # includes unknown, conservatively

    dt_bounds = conj(Atom(">", DT, Const(0)), Atom("<", DT, Const(r)))

    def settled() -> str:
        if registry is not None:
            registry.append(UnsatRecord(phi1, ode, stay, phi2, r))
        return "unsat"

    try:
        # (b) phi1 is invariant throughout the dynamics.
        step_out = smt.check(
            [dt_bounds, phi1, stay, neg(euler_substitution(phi1, ode))],
            want_model=False,
        )
        if step_out.is_unsat:
            return settled()
        # (c) !phi2 is invariant throughout the dynamics.
        step_in = smt.check(
            [dt_bounds, neg(phi2), stay, euler_substitution(phi2, ode)],
            want_model=False,
        )
        if step_in.is_unsat:
            return settled()
    except Exception:
        return "otherwise"
    return "otherwise"


# ---------------------------------------------------------------------------
# Closure obligations (implication discharge via pullback)
# ---------------------------------------------------------------------------

def pullback_through_command(psi: Formula, commands: Sequence[Command], variables) -> Formula:
    """psi over post-jump states as a constraint on the pre-jump state."""
    mapping = {Var(n, 0): command_update_term(commands, n) for n in variables}
    return substitute(psi, mapping)


def jump_closure_unsat(
    smt: SmtSession,
    pre: Formula,
    ode: Optional[Ode],
    stay: Optional[Formula],
    guard: Formula,
    commands: Sequence[Command],
    psi: Formula,
    variables,
    r: float,
    registry: Optional[List[UnsatRecord]] = None,
) -> bool:
    """Whether every flow-then-jump successor of ``pre`` lands inside ``psi``.

    With no dynamics (discrete mode) this is one complete SMT query; with
    dynamics it is the one-step invariance condition on the pulled-back target.
    """
    bad = conj(guard, neg(pullback_through_command(psi, commands, variables)))
    if ode is None:
        try:
            return smt.check([pre, bad], want_model=False).is_unsat
        except Exception:
            return False
    verdict = query_unsat_invariance(smt, pre, ode, stay if stay is not None else TRUE,
                                     bad, r, registry)
    return verdict == "unsat"


def cont_closure_unsat(
    smt: SmtSession,
    pre: Formula,
    ode: Ode,
    stay: Formula,
    psi: Formula,
    r: float,
    registry: Optional[List[UnsatRecord]] = None,
) -> bool:
    """Whether every flow successor of ``pre`` (jump-free) stays inside ``psi``."""
    return query_unsat_invariance(smt, pre, ode, stay, neg(psi), r, registry) == "unsat"


# ---------------------------------------------------------------------------
# Statistical soundness probe for invariance verdicts
# ---------------------------------------------------------------------------

def _term_np(t: Term, index: Dict[str, int]):
    if isinstance(t, Var):
        i = index[t.name]
        return lambda S: S[:, i]
    if isinstance(t, Const):
        v = float(t.value)
        return lambda S: np.full(S.shape[0], v)
    if isinstance(t, NegTerm):
        f = _term_np(t.arg, index)
        return lambda S: -f(S)
    fl, fr = _term_np(t.left, index), _term_np(t.right, index)
    if t.op == "+":
        return lambda S: fl(S) + fr(S)
    if t.op == "-":
        return lambda S: fl(S) - fr(S)
    return lambda S: fl(S) * fr(S)


def compile_formula_np(phi: Formula, index: Dict[str, int], eps: float = 0.0):
    """Vectorised truth mask of a level-0 formula over state-row arrays."""
    from .formulas import Atom as FAtom, BoolLit, Implies, NaryBool, Not as FNot

    if isinstance(phi, BoolLit):
        val = phi.value
        return lambda S: np.full(S.shape[0], val, dtype=bool)
    if isinstance(phi, FAtom):
        fl, fr = _term_np(phi.left, index), _term_np(phi.right, index)
        op = phi.op
        if op == "<":
            return lambda S: fl(S) - fr(S) < eps
        if op == "<=":
            return lambda S: fl(S) - fr(S) <= eps
        if op == "=":
            return lambda S: np.abs(fl(S) - fr(S)) <= eps
        if op == ">=":
            return lambda S: fl(S) - fr(S) >= -eps
        return lambda S: fl(S) - fr(S) > -eps
    if isinstance(phi, FNot):
        f = compile_formula_np(phi.arg, index, eps)
        return lambda S: ~f(S)
    if isinstance(phi, NaryBool):
        fns = [compile_formula_np(a, index, eps) for a in phi.args]
        if phi.op == "&":
            def all_mask(S):
                out = fns[0](S)
                for f in fns[1:]:
                    out = out & f(S)
                return out
            return all_mask
        def any_mask(S):
            out = fns[0](S)
            for f in fns[1:]:
                out = out | f(S)
            return out
        return any_mask
    if isinstance(phi, Implies):
        fl = compile_formula_np(phi.left, index, eps)
        fr = compile_formula_np(phi.right, index, eps)
        return lambda S: (~fl(S)) | fr(S)
    raise TypeError(f"not a formula: {phi!r}")


def _compile_field_np(ode: Ode):
    names = ode.names()
    index = {n: i for i, n in enumerate(names)}
    fns = [_term_np(ode.rhs(n), index) for n in names]

    def field(S):
        return np.stack([f(S) for f in fns], axis=1)

    return names, index, field


def probe_unsat_record(
    smt: SmtSession,
    record: UnsatRecord,
    trials: int = 1000,
    steps: int = 2000,
    step_size: float = 1e-2,
    seed: int = 0,
    eps: float = 1e-7,
) -> int:
    """Counterexamples found among ``trials`` random trajectories.

    Start points come from solver models of phi1, jittered; their flows are
    scanned for a stay-respecting path into phi2.  A sound verdict yields
    zero.
    """
    rng = np.random.default_rng(seed)
    names, index, field = _compile_field_np(record.ode)
    phi1_np = compile_formula_np(record.phi1, index)
    stay_np = compile_formula_np(record.stay, index, eps)
    phi2_np = compile_formula_np(record.phi2, index, eps)

    base_points: List[List[float]] = []
    blockers: List[Formula] = [record.phi1]
    for _ in range(8):
        try:
            res = smt.check(blockers, want_model=True)
        except Exception:
            break
        if not res.is_sat or res.model is None:
            break
        point = [res.model.get(Var(n, 0), 0.0) for n in names]
        base_points.append(point)
        blockers.append(
            neg(conj(*[Atom("=", Var(n, 0), Const(Fraction(p))) for n, p in zip(names, point)]))
        )
    if not base_points:
        return 0  # phi1 empty: vacuously sound

    base = np.array(base_points, dtype=float)
    picks = rng.integers(0, len(base_points), size=trials)
    starts = base[picks] + rng.normal(scale=1e-3, size=(trials, len(names)))
    off = ~phi1_np(starts)  # jitter may leave phi1; fall back to the model point
    starts[off] = base[picks[off]]

    alive = np.ones(trials, dtype=bool)
    found = 0
    S = starts
    for i in range(steps):
        if not alive.any():
            break
        if i > 0:
            # Samples on (0, t] must satisfy the stay condition to be legal
            # endpoints; the start itself is exempt (zero-duration flow).
            alive &= stay_np(S)
        hits = alive & phi2_np(S)
        found += int(hits.sum())
        alive &= ~hits
        k1 = field(S)
        k2 = field(S + 0.5 * step_size * k1)
        k3 = field(S + 0.5 * step_size * k2)
        k4 = field(S + step_size * k3)
        S = S + (step_size / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return found
