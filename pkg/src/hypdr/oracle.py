"""Generalization-hint sourcing and validation.

When a backward query proves a counterexample unreachable, the engine must
strengthen a frame with a formula that excludes the counterexample and still
contains everything one step forward-reachable.  Candidates come from three
sources tried in order: a scripted hint file, a small set of built-in
heuristics, and an interactive session (HTTP).  Nothing reaches a frame
without passing validation; that is what keeps the consistency invariant
across oracle answers.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .formulas import (
    Atom,
    Const,
    FALSE,
    Formula,
    Var,
    format_formula,
    neg,
    parse_formula,
    valuation_to_formula,
)
from .model import Command, HybridAutomaton, Ode
from .discharge import (
    UnsatRecord,
    cont_closure_unsat,
    jump_closure_unsat,
)
from .smt import SmtSession

Valuation = Dict[Var, float]


@dataclass
class GeneralizationQuery:
    """What the engine shows when it asks for a generalization.

    ``kind`` is 'conflict' for flow-then-jump refutations (guard and cmd
    present) and 'conflict_cont' for flow-only refutations at the remainder
    frame (guard and cmd omitted).
    """

    id: int
    kind: str
    location: str  # the location whose frame will be strengthened
    level: Optional[int]  # frame index k for conflict, None for the remainder
    pre: Formula
    flow: Optional[Ode]
    stay: Optional[Formula]
    guard: Optional[Formula]
    cmd: Optional[Tuple[Command, ...]]
    ce: Valuation
    init: Formula
    trajectory: List[Valuation] = field(default_factory=list)

    def fields_text(self) -> Dict[str, str]:
        out = {
            "Pre": format_formula(self.pre),
            "Flow": str(self.flow) if self.flow is not None else "-",
            "Stay": format_formula(self.stay) if self.stay is not None else "-",
        }
        if self.kind == "conflict":
            out["Guard"] = format_formula(self.guard) if self.guard is not None else "-"
            out["Cmd"] = ", ".join(str(c) for c in self.cmd) if self.cmd else "skip"
        out["CE"] = "{" + ", ".join(
            f"{v.name}: {self.ce[v]:.6g}" for v in sorted(self.ce, key=lambda u: u.name)
        ) + "}"
        out["Init"] = format_formula(self.init)
        return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationContext:
    """Everything needed to re-check the Conflict/ConflictCont side conditions."""

    ha: HybridAutomaton
    smt: SmtSession
    r: float
    # Frame the side condition quantifies over: R_{k-1} for conflict (keyed
    # by source location), R_N for conflict_cont (the query's own location).
    frame: Dict[str, Formula]
    registry: Optional[List[UnsatRecord]] = None


def validate_generalization(ctx: ValidationContext, query: GeneralizationQuery,
                            psi: Formula) -> Tuple[bool, str]:
    """Check that ``psi`` excludes the counterexample and is closed forward.

    Returns (ok, reason); the reason names the violated side condition and is
    surfaced verbatim over the session API.
    """
    ha, smt = ctx.ha, ctx.smt
    try:
        ce_formula = valuation_to_formula(query.ce)
        if not smt.check([psi, ce_formula], want_model=False).is_unsat:
            return False, "does not exclude CE"
        if query.kind == "conflict_cont":
            q = query.location
            pre = ctx.frame[q]
            if ha.is_hybrid:
                ok = cont_closure_unsat(smt, pre, ha.flow[q], ha.stay[q], psi,
                                        ctx.r, ctx.registry)
            else:
                ok = smt.check([pre, neg(psi)], want_model=False).is_unsat
            if not ok:
                return False, "does not contain R_N(q') or its flow successors"
            return True, "ok"
        # conflict: the full transformer at the query location must imply psi.
        q_target = query.location
        if q_target == ha.initial_location:
            if not smt.check([ha.init, neg(psi)], want_model=False).is_unsat:
                return False, "does not contain the initial states"
        for t in ha.incoming(q_target):
            pre = ctx.frame[t.source]
            ode = ha.flow.get(t.source) if ha.is_hybrid else None
            stay = ha.stay.get(t.source) if ha.is_hybrid else None
            ok = jump_closure_unsat(smt, pre, ode, stay, t.guard, t.commands,
                                    psi, ha.variables, ctx.r, ctx.registry)
            if not ok:
                return False, f"not implied by the transformer along {t}"
        return True, "ok"
    except Exception as exc:  # solver failure rejects, conservatively
        return False, f"validation failed: {exc}"


# ---------------------------------------------------------------------------
# Hint sources
# ---------------------------------------------------------------------------

class HintScript:
    """Ordered hint entries, matched positionally or by explicit query id.

    An entry ``{"psi": "<formula>"}`` answers the next query that asks; an
    entry with ``"match": 7`` answers only query id 7 and is dropped once the
    ids have moved past it.
    """

    def __init__(self, entries: Sequence[Tuple[Optional[int], Formula]]):
        self.entries: List[Tuple[Optional[int], Formula]] = list(entries)
        self.used = 0

    @classmethod
    def load(cls, path: str) -> "HintScript":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    doc = json.loads(line)
                    entries.append((doc.get("match"), parse_formula(doc["psi"])))
                except Exception as exc:
                    raise ValueError(f"{path}:{lineno}: bad hint entry: {exc}") from exc
        return cls(entries)

    def candidates(self, query_id: int):
        """Yield hints applicable to this query, consuming them in order."""
        while self.entries:
            match, psi = self.entries[0]
            if match is None or match == query_id:
                self.entries.pop(0)
                self.used += 1
                yield psi
            elif match < query_id:
                self.entries.pop(0)  # stale, skipped
            else:
                return


def heuristic_candidates(query: GeneralizationQuery, ha: HybridAutomaton,
                         phi_p: Formula) -> List[Formula]:
    """Weak built-in candidate generators, all subject to validation.

    In order: the stay condition itself, the precondition the side condition
    quantifies over, the safety formula, false, and axis-aligned half-spaces
    separating the counterexample from the box hull of the simulated
    backward trajectory.
    """
    out: List[Formula] = []
    if query.stay is not None:
        out.append(query.stay)
    out.append(query.pre)
    out.append(phi_p)
    out.append(FALSE)
    if query.trajectory:
        lo: Dict[Var, float] = {}
        hi: Dict[Var, float] = {}
        for sample in query.trajectory:
            for v, x in sample.items():
                lo[v] = min(lo.get(v, x), x)
                hi[v] = max(hi.get(v, x), x)
        for v in sorted(lo, key=lambda u: u.name):
            ce_v = query.ce.get(v)
            if ce_v is None:
                continue
            if ce_v > hi[v]:
                out.append(Atom("<=", v, Const(Fraction(_cut(hi[v], ce_v)))))
            elif ce_v < lo[v]:
                out.append(Atom(">=", v, Const(Fraction(_cut(lo[v], ce_v)))))
    for v in sorted(query.ce, key=lambda u: u.name):
        out.append(Atom("<=", v, Const(Fraction(query.ce[v]) - 1)))
        out.append(Atom(">=", v, Const(Fraction(query.ce[v]) + 1)))
    return out


def _cut(inside: float, outside: float) -> float:
    return inside + 0.5 * (outside - inside)


class InteractiveOracle:
    """Single-slot rendezvous between the engine and the session server."""

    def __init__(self):
        self._lock = threading.Lock()
        self._event = threading.Event()
        self._pending: Optional[GeneralizationQuery] = None
        self._validator: Optional[Callable[[Formula], Tuple[bool, str]]] = None
        self._answer: Optional[Formula] = None
        self._cancelled = False

    def ask(self, query: GeneralizationQuery,
            validator: Callable[[Formula], Tuple[bool, str]]) -> Optional[Formula]:
        """Publish ``query`` and block until a validated answer or cancel."""
        with self._lock:
            self._pending = query
            self._validator = validator
            self._answer = None
            self._event.clear()
        self._event.wait()
        with self._lock:
            answer = self._answer
            self._pending = None
            self._validator = None
            return answer

    def pending(self) -> Optional[GeneralizationQuery]:
        with self._lock:
            return self._pending

    def submit(self, query_id: int, psi: Formula) -> Tuple[int, str]:
        """Try to answer the pending query; (status, reason) mirrors HTTP."""
        with self._lock:
            if self._pending is None or self._cancelled:
                return 409, "no pending query"
            if self._pending.id != query_id:
                return 409, f"stale query id {query_id}, pending is {self._pending.id}"
            validator = self._validator
        ok, reason = validator(psi)
        if not ok:
            return 422, reason
        with self._lock:
            if self._pending is None or self._pending.id != query_id:
                return 409, "query changed during validation"
            self._answer = psi
        self._event.set()
        return 200, "accepted"

    def cancel(self):
        with self._lock:
            self._cancelled = True
            self._answer = None
        self._event.set()


@dataclass
class OracleChain:
    """The ordered sources a query runs through."""

    script: Optional[HintScript] = None
    heuristics_enabled: bool = True
    interactive: Optional[InteractiveOracle] = None

    def next_generalization(
        self,
        query: GeneralizationQuery,
        ha: HybridAutomaton,
        phi_p: Formula,
        validator: Callable[[Formula], Tuple[bool, str]],
    ) -> Optional[Tuple[Formula, str]]:
        """First validated candidate in source order, or None if exhausted."""
        if self.script is not None:
            for psi in self.script.candidates(query.id):
                ok, _ = validator(psi)
                if ok:
                    return psi, "script"
        if self.heuristics_enabled:
            for psi in heuristic_candidates(query, ha, phi_p):
                ok, _ = validator(psi)
                if ok:
                    return psi, "heuristic"
        if self.interactive is not None:
            answer = self.interactive.ask(query, validator)
            if answer is not None:
                return answer, "interactive"
        return None
