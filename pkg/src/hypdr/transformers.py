"""Forward predicate transformers as verification-condition objects.

The discrete transformer produces one quantifier-free formula whose
double-primed variables stand for the eliminated existential (free fresh
unknowns, sound in satisfiability positions).  The hybrid transformers keep
the continuous-reachability part symbolic: one ``CrpQuery`` per incoming
transition, carrying the renamed precondition, dynamics, stay condition and
target.  The flow-only transformer pins the endpoint to the plain copy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

from .formulas import (
    Atom,
    Formula,
    FALSE,
    Var,
    conj,
    disj,
    formula_vars,
    rename_level,
    substitute,
)
from .model import Command, HybridAutomaton, JumpTransition, Ode, command_formula

Frame = Mapping[str, Formula]


def frame_of(pairs: Mapping[str, Formula]) -> Dict[str, Formula]:
    return dict(pairs)


def rename_to_double_primed(phi: Formula) -> Formula:
    return rename_level(phi, 0, 2)


def cmd_mixed_formula(cmds: Tuple[Command, ...], variables) -> Formula:
    """[x/x', x''/x] phi_c: plain copy is the post-state, double-primed the pre."""
    phi_c = command_formula(cmds, variables)
    sub = {}
    for v in formula_vars(phi_c):
        if v.prime_level == 1:
            sub[v] = Var(v.name, 0)
        elif v.prime_level == 0:
            sub[v] = Var(v.name, 2)
    return substitute(phi_c, sub)


@dataclass(frozen=True)
class CrpQuery:
    """One continuous-reachability obligation ``pre /\\ <ode, stay> target``.

    ``pre`` and ``stay`` are over the double-primed copy, the ODE drives the
    double-primed copy, and ``target`` may mention both copies (the plain
    copy is the post-jump state, held constant along the flow).
    """

    pre: Formula
    ode: Ode
    stay: Formula
    target: Formula


@dataclass(frozen=True)
class HybridVc:
    """F_H(R)(q') split disjunct by disjunct, as the driver consumes it."""

    initial: Formula  # the (q' = q0 /\ phi_0) disjunct, already specialised
    parts: Tuple[Tuple[JumpTransition, CrpQuery], ...]


def predtrans_discrete(dtsts: HybridAutomaton, frame: Frame, q_target: str) -> Formula:
    """F(R)(q') with the existential eliminated by double-primed unknowns."""
    disjuncts: List[Formula] = []
    if q_target == dtsts.initial_location:
        disjuncts.append(dtsts.init)
    for t in dtsts.incoming(q_target):
        pre = rename_to_double_primed(frame[t.source])
        guard = rename_to_double_primed(t.guard)
        cmd = cmd_mixed_formula(t.commands, dtsts.variables)
        disjuncts.append(conj(pre, guard, cmd))
    return disj(*disjuncts)


def predtrans_hybrid(ha: HybridAutomaton, frame: Frame, q_target: str) -> HybridVc:
    """F_H(R)(q') as the initial disjunct plus one CrpQuery per transition."""
    initial = ha.init if q_target == ha.initial_location else FALSE
    parts = []
    for t in ha.incoming(q_target):
        query = CrpQuery(
            pre=rename_to_double_primed(frame[t.source]),
            ode=ha.flow[t.source],
            stay=rename_to_double_primed(ha.stay[t.source]),
            target=conj(
                rename_to_double_primed(t.guard),
                cmd_mixed_formula(t.commands, ha.variables),
            ),
        )
        parts.append((t, query))
    return HybridVc(initial, tuple(parts))


def predtrans_cont(ha: HybridAutomaton, frame: Frame, q_target: str) -> CrpQuery:
    """F_C(R)(q'): flow only, endpoint equated with the plain copy."""
    target = conj(*[Atom("=", Var(n, 0), Var(n, 2)) for n in ha.variables])
    return CrpQuery(
        pre=rename_to_double_primed(frame[q_target]),
        ode=ha.flow[q_target],
        stay=rename_to_double_primed(ha.stay[q_target]),
        target=target,
    )
