"""The property-directed reachability engine.

Two drivers share one state machine: the hybrid driver keeps a remainder
frame overapproximating one flow transition past the last frame and seeds
candidate counterexamples there; the discrete driver seeds them at the last
frame directly.  Candidates are backpropagated by Decide steps; a refuted
candidate triggers a Conflict whose generalization comes from the oracle
chain and is re-validated against the rule's side condition before any frame
is touched.  Every rule application is written to an append-only session log
so a run can be replayed bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .formulas import (
    Atom,
    Const,
    FALSE,
    Formula,
    TRUE,
    Var,
    conj,
    conjuncts,
    disj,
    evaluate,
    format_formula,
    neg,
)
from .model import (
    HybridAutomaton,
    JumpTransition,
    Run,
    apply_command,
    check_run,
    command_update_term,
    invert_command,
)
from .discharge import (
    DischargeOutcome,
    SimParams,
    UnsatRecord,
    cont_closure_unsat,
    flow_connects,
    jump_closure_unsat,
    pullback_through_command,
    query_sat_and_cont_jump,
    query_sat_and_cont_point,
    simulate_ode,
)
from .oracle import (
    GeneralizationQuery,
    OracleChain,
    ValidationContext,
    validate_generalization,
)
from .smt import SmtSession

REM = "rem"

Valuation = Dict[Var, float]


class SideConditionViolated(Exception):
    """A rule was about to fire although its side condition does not hold."""


@dataclass
class Limits:
    max_frames: int = 32
    max_steps: int = 20000
    solver_timeout_ms: int = 10000


@dataclass
class TraceEntry:
    sigma: Valuation
    location: str
    index: Union[int, str]  # frame index or REM

    def encode(self) -> list:
        vals = {str(v): self.sigma[v] for v in sorted(self.sigma, key=lambda u: u.name)}
        return [self.location, self.index, vals]


@dataclass
class VerificationResult:
    status: str  # 'valid' | 'model' | 'aborted'
    invariant: Optional[Dict[str, Formula]] = None
    trace: Optional[List[TraceEntry]] = None
    reason: Optional[str] = None
    stats: Dict[str, object] = field(default_factory=dict)

    @property
    def is_valid(self) -> bool:
        return self.status == "valid"

    @property
    def is_model(self) -> bool:
        return self.status == "model"


class Frames:
    """R_0 .. R_N plus the remainder frame, as per-location conjunct lists."""

    def __init__(self, ha: HybridAutomaton):
        self.ha = ha
        first = {
            q: [ha.init] if q == ha.initial_location else [FALSE]
            for q in ha.locations
        }
        self.levels: List[Dict[str, List[Formula]]] = [first]
        self.rem: Dict[str, List[Formula]] = {q: [] for q in ha.locations}

    @property
    def n(self) -> int:
        return len(self.levels) - 1

    def formula(self, i: int, q: str) -> Formula:
        return conj(*self.levels[i][q])

    def rem_formula(self, q: str) -> Formula:
        return conj(*self.rem[q])

    def frame_dict(self, i: int) -> Dict[str, Formula]:
        return {q: self.formula(i, q) for q in self.ha.locations}

    def add_level(self):
        self.levels.append({q: [] for q in self.ha.locations})

    def reset_rem(self):
        self.rem = {q: [] for q in self.ha.locations}

    def strengthen(self, i: int, q: str, psi: Formula) -> bool:
        if psi == TRUE:
            return False
        have = {format_formula(p) for p in self.levels[i][q]}
        if format_formula(psi) in have:
            return False
        self.levels[i][q].append(psi)
        return True

    def strengthen_rem(self, q: str, psi: Formula) -> bool:
        if psi == TRUE:
            return False
        have = {format_formula(p) for p in self.rem[q]}
        if format_formula(psi) in have:
            return False
        self.rem[q].append(psi)
        return True

    def conjunct_list(self, i: int, q: str) -> List[Formula]:
        out: List[Formula] = []
        for part in self.levels[i][q]:
            out.extend(conjuncts(part))
        return out

    def digest(self) -> str:
        payload = json.dumps(
            {
                "levels": [
                    {q: [format_formula(p) for p in level[q]] for q in sorted(level)}
                    for level in self.levels
                ],
                "rem": {q: [format_formula(p) for p in self.rem[q]] for q in sorted(self.rem)},
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


class Engine:
    """The deterministic driver, in hybrid or discrete mode."""

    def __init__(
        self,
        ha: HybridAutomaton,
        phi_p: Formula,
        smt: SmtSession,
        oracle: Optional[OracleChain] = None,
        params: Optional[SimParams] = None,
        r: float = 1e-3,
        limits: Optional[Limits] = None,
        debug_consistency: bool = False,
    ):
        self.ha = ha
        self.phi_p = phi_p
        self.smt = smt
        self.oracle = oracle or OracleChain()
        self.params = params or SimParams()
        self.r = r
        self.limits = limits or Limits()
        self.debug_consistency = debug_consistency

        self.hybrid = ha.is_hybrid
        self.frames = Frames(ha)
        self.trace: List[TraceEntry] = []
        self.log: List[dict] = []
        self.consistency_violations: List[Tuple[int, List[str]]] = []
        self.consistency_checks = 0
        self.unsat_registry: List[UnsatRecord] = []
        self.sim_queries = 0
        self._query_counter = 0
        self._pending_query_log: Optional[dict] = None
        smt.declare([Var(n, lvl) for n in ha.variables for lvl in (0, 1, 2)])

    # -- logging -------------------------------------------------------------
    def _log_rule(self, rule: str, **extra):
        entry = {
            "step": len(self.log),
            "rule": rule,
            "frames_digest": self.frames.digest(),
            "n": self.frames.n,
            "trace": [e.encode() for e in self.trace],
        }
        if self._pending_query_log is not None:
            entry.update(self._pending_query_log)
            self._pending_query_log = None
        entry.update(extra)
        self.log.append(entry)
        if len(self.log) > self.limits.max_steps:
            raise _StepBudget()
        if self.debug_consistency:
            self.consistency_checks += 1
            bad = self.check_consistent()
            if bad:
                self.consistency_violations.append((entry["step"], bad))

    def stats(self) -> Dict[str, object]:
        return {
            "rule_applications": len(self.log),
            "smt_queries": self.smt.num_queries,
            "sim_queries": self.sim_queries,
            "oracle_queries": self._query_counter,
            "frames": self.frames.n,
        }

    # -- model extraction ------------------------------------------------------
    def _model_valuation(self, model: Dict[Var, float]) -> Valuation:
        return {Var(n, 0): model.get(Var(n, 0), 0.0) for n in self.ha.variables}

    # -- rule application -------------------------------------------------------
    def apply_rule(self, rule: str, **w) -> Optional[VerificationResult]:
        """Apply one rewriting rule after re-checking its side condition.

        Witnesses come in through keyword arguments (a valuation for the
        Candidate/Decide family, a generalization formula for the Conflict
        and Induction families, a frame index for Valid).  A witness that
        does not meet the rule's side condition raises
        ``SideConditionViolated``; nothing is mutated in that case.  Valid
        and Model return the terminal result, other rules return None.
        """
        handler = getattr(self, f"_rule_{rule.lower()}", None)
        if handler is None:
            raise ValueError(f"unknown rule {rule!r}")
        return handler(**w)

    def _require(self, ok: bool, rule: str, why: str):
        if not ok:
            raise SideConditionViolated(f"{rule}: {why}")

    def _eps(self) -> float:
        return self.params.eps_eval

    def _frontier(self, q: str) -> Formula:
        if self.hybrid:
            return self.frames.rem_formula(q)
        return self.frames.formula(self.frames.n, q)

    def _rule_initialize(self):
        self._require(not self.log, "Initialize", "applies once, at the start")
        self._log_rule("Initialize")
        return None

    def _rule_unfold(self):
        for q in self.ha.locations:
            self._require(
                self.smt.is_valid_implication(self._frontier(q), self.phi_p),
                "Unfold", f"frontier at {q} does not imply the safety formula")
        self.frames.add_level()
        if self.hybrid:
            self.frames.reset_rem()
        self.trace = []
        self._log_rule("Unfold")
        return None

    def _rule_valid(self, level: int):
        self._require(0 <= level < self.frames.n, "Valid", "level out of range")
        for q in self.ha.locations:
            self._require(
                self.smt.is_valid_implication(
                    self.frames.formula(level + 1, q), self.frames.formula(level, q)),
                "Valid", f"R_{level + 1}({q}) does not imply R_{level}({q})")
        invariant = self.frames.frame_dict(level)
        self._log_rule("Valid", fixpoint_level=level)
        return VerificationResult("valid", invariant=invariant)

    def _rule_model(self):
        self._require(bool(self.trace) and self.trace[0].index == 0,
                      "Model", "head of the trace is not at frame 0")
        self._log_rule("Model")
        return VerificationResult("model", trace=list(self.trace))

    def _rule_candidate(self, location: str, sigma: Valuation):
        self._require(not self.hybrid, "Candidate", "hybrid mode seeds at the remainder frame")
        return self._seed(location, sigma, self.frames.n, "Candidate")

    def _rule_candidatecont(self, location: str, sigma: Valuation):
        self._require(self.hybrid, "CandidateCont", "discrete mode has no remainder frame")
        return self._seed(location, sigma, REM, "CandidateCont")

    def _seed(self, location: str, sigma: Valuation, index, rule: str):
        self._require(not self.trace, rule, "trace is not empty")
        member = conj(self._frontier(location), neg(self.phi_p))
        self._require(evaluate(member, sigma, self._eps()), rule,
                      "candidate does not satisfy frontier /\\ !safe")
        self.trace = [TraceEntry(dict(sigma), location, index)]
        self._log_rule(rule)
        return None

    def _rule_decidecont(self, sigma: Valuation):
        head = self._head()
        self._require(head.index == REM, "DecideCont", "head is not a remainder entry")
        q, n = head.location, self.frames.n
        self._require(evaluate(self.frames.formula(n, q), sigma, self._eps()),
                      "DecideCont", "witness is outside R_N")
        self._require(
            flow_connects(self.ha.flow[q], self.ha.stay[q], sigma, head.sigma,
                          self.params, max(self._eps(), 1e-9)),
            "DecideCont", "witness does not flow to the counterexample")
        self.trace.insert(0, TraceEntry(dict(sigma), q, n))
        self._log_rule("DecideCont")
        return None

    def _rule_decide(self, transition: JumpTransition, sigma: Valuation):
        head = self._head()
        self._require(isinstance(head.index, int) and head.index >= 1,
                      "Decide", "head is not an interior entry")
        k = head.index
        self._require(transition.target == head.location, "Decide",
                      "transition does not lead to the head location")
        self._require(evaluate(self.frames.formula(k - 1, transition.source),
                               sigma, self._eps()),
                      "Decide", "witness is outside the previous frame")
        pre_jump = invert_command(transition.commands, head.sigma)
        self._require(evaluate(transition.guard, pre_jump, self._eps()),
                      "Decide", "pre-jump point violates the guard")
        if self.hybrid:
            self._require(
                flow_connects(self.ha.flow[transition.source],
                              self.ha.stay[transition.source],
                              sigma, pre_jump, self.params, max(self._eps(), 1e-9)),
                "Decide", "witness does not flow to the pre-jump point")
        else:
            self._require(
                all(abs(pre_jump[v] - sigma[v]) <= 1e-6 * (1 + abs(sigma[v]))
                    for v in sigma),
                "Decide", "witness does not match the inverted command")
        self.trace.insert(0, TraceEntry(dict(sigma), transition.source, k - 1))
        self._log_rule("Decide", transition=str(transition))
        return None

    def _rule_conflictcont(self, psi: Formula, source: str = "caller"):
        head = self._head()
        self._require(head.index == REM, "ConflictCont", "head is not a remainder entry")
        q = head.location
        ok, why = self._validator("conflict_cont", q, None, head.sigma)(psi)
        self._require(ok, "ConflictCont", why)
        self.frames.strengthen_rem(q, psi)
        self.trace = []
        self._log_rule("ConflictCont", answer=format_formula(psi), source=source)
        return None

    def _rule_conflict(self, psi: Formula, source: str = "caller"):
        head = self._head()
        self._require(isinstance(head.index, int) and head.index >= 1,
                      "Conflict", "head is not an interior entry")
        q, k = head.location, head.index
        ok, why = self._validator("conflict", q, k, head.sigma)(psi)
        self._require(ok, "Conflict", why)
        for j in range(1, k + 1):
            self.frames.strengthen(j, q, psi)
        self.trace = []
        self._log_rule("Conflict", answer=format_formula(psi), source=source)
        return None

    def _rule_inductioncont(self, location: str, psi: Formula):
        q = location
        self._require(
            cont_closure_unsat(self.smt, self.frames.formula(self.frames.n, q),
                               self.ha.flow[q], self.ha.stay[q], psi,
                               self.r, self.unsat_registry),
            "InductionCont", "formula is not invariant past the last frame")
        if self.frames.strengthen_rem(q, psi):
            self._log_rule("InductionCont", pushed=format_formula(psi), location=q)
        return None

    def _rule_induction(self, location: str, level: int, psi: Formula):
        self._require(1 <= level < self.frames.n, "Induction", "level out of range")
        self._require(self._induction_side_condition(level, location, psi),
                      "Induction", "transformer closure does not hold")
        changed = False
        for j in range(1, level + 2):
            changed |= self.frames.strengthen(j, location, psi)
        if changed:
            self._log_rule("Induction", pushed=format_formula(psi),
                           location=location, level=level)
        return None

    def _head(self) -> TraceEntry:
        if not self.trace:
            raise SideConditionViolated("the trace is empty")
        return self.trace[0]

    # -- driver ---------------------------------------------------------------
    def run(self) -> VerificationResult:
        started = time.time()
        try:
            result = self._run_inner()
        except _StepBudget:
            result = VerificationResult("aborted", reason="StepBudgetExceeded")
        result.stats = self.stats()
        result.stats["seconds"] = round(time.time() - started, 3)
        return result

    def _run_inner(self) -> VerificationResult:
        ha = self.ha
        self.apply_rule("Initialize")
        # Initialize's side condition: an initial state violating the safety
        # formula is already a (flow-free) counterexample.
        res = self.smt.check([ha.init, neg(self.phi_p)])
        if res.status == "unknown":
            return VerificationResult("aborted", reason="SolverFailure")
        if res.is_sat:
            sigma0 = self._model_valuation(res.model)
            self.trace = [TraceEntry(sigma0, ha.initial_location, 0)]
            return self.apply_rule("Model")

        candidate_rule = "CandidateCont" if self.hybrid else "Candidate"
        while True:
            all_unsat = True
            for q in ha.locations:
                res = self.smt.check([self._frontier(q), neg(self.phi_p)])
                if res.status == "unknown":
                    return VerificationResult("aborted", reason="SolverFailure")
                if not res.is_sat:
                    continue
                all_unsat = False
                sigma = self._model_valuation(res.model)
                self.apply_rule(candidate_rule, location=q, sigma=sigma)
                out = self._remove_trace()
                if out is not None:
                    return out
            if all_unsat:
                if self.frames.n + 1 > self.limits.max_frames:
                    return VerificationResult("aborted", reason="FrameBudgetExceeded")
                self.apply_rule("Unfold")
                valid = self._check_valid_fixpoint()
                if valid is not None:
                    return valid

    # -- RemoveTrace ------------------------------------------------------------
    def _remove_trace(self) -> Optional[VerificationResult]:
        while self.trace:
            head = self.trace[0]
            if head.index == REM:
                out = self._step_rem(head)
            elif head.index == 0:
                return self.apply_rule("Model")
            else:
                out = self._step_interior(head)
            if out is not None:
                return out
        return self._check_valid_fixpoint()

    def _step_rem(self, head: TraceEntry) -> Optional[VerificationResult]:
        ha, q = self.ha, head.location
        n = self.frames.n
        pre = self.frames.formula(n, q)

        def generalize(samples):
            return self._ask_oracle(
                kind="conflict_cont", location=q, level=None,
                pre=pre, ce=head.sigma, samples=samples,
            )

        self.sim_queries += 1
        out = query_sat_and_cont_point(
            pre, ha.flow[q], ha.stay[q], head.sigma, self.params, generalize
        )
        if out.is_sat:
            self.apply_rule("DecideCont", sigma=out.witness)
            return None
        if out.is_unsat:
            self.apply_rule("ConflictCont", psi=out.generalization, source=out.source)
            self._induction_cont(q)
            return None
        reason = "OracleExhausted" if out.reason == "OracleExhausted" else "SimulationInconclusive"
        return VerificationResult("aborted", reason=reason)

    def _step_interior(self, head: TraceEntry) -> Optional[VerificationResult]:
        ha, q_target, k = self.ha, head.location, head.index
        first_unsat: Optional[DischargeOutcome] = None
        abort_reason: Optional[str] = None

        for t in ha.incoming(q_target):
            pre = self.frames.formula(k - 1, t.source)
            if self.hybrid:
                self.sim_queries += 1
                out = query_sat_and_cont_jump(
                    pre, ha.flow[t.source], ha.stay[t.source],
                    t.guard, t.commands, head.sigma, self.params, generalize=None,
                )
            else:
                out = self._discrete_backward(t, pre, head.sigma)
            if out.is_sat:
                self.apply_rule("Decide", transition=t, sigma=out.witness)
                return None
            if out.is_unsat:
                if first_unsat is None:
                    first_unsat = out
            else:
                abort_reason = out.reason

        if abort_reason is not None:
            return VerificationResult("aborted", reason="SimulationInconclusive")

        # Every incoming route is refuted: Conflict.
        pre_parts = [self.frames.formula(k - 1, t.source) for t in ha.incoming(q_target)]
        if q_target == ha.initial_location:
            pre_parts.insert(0, ha.init)
        display_pre = disj(*pre_parts) if pre_parts else FALSE
        shown = ha.incoming(q_target)[0] if ha.incoming(q_target) else None
        got = self._ask_oracle(
            kind="conflict", location=q_target, level=k,
            pre=display_pre, ce=head.sigma,
            samples=(first_unsat.trajectory if first_unsat else []) or [],
            transition=shown,
        )
        if got is None:
            return VerificationResult("aborted", reason="OracleExhausted")
        psi, source = got
        self.apply_rule("Conflict", psi=psi, source=source)
        self._induction(q_target)
        return None

    def _discrete_backward(self, t: JumpTransition, pre: Formula,
                           sigma_post: Valuation) -> DischargeOutcome:
        eqs = [
            Atom("=", command_update_term(t.commands, n), Const(Fraction(sigma_post[Var(n, 0)])))
            for n in self.ha.variables
        ]
        res = self.smt.check([pre, t.guard] + eqs)
        if res.status == "unknown":
            return DischargeOutcome("abort", reason="SolverFailure")
        if res.is_sat:
            return DischargeOutcome("sat", witness=self._model_valuation(res.model))
        return DischargeOutcome("unsat")

    # -- Induction ----------------------------------------------------------------
    def _induction_cont(self, q: str):
        """Push flow-invariant conjuncts of R_N(q) into the remainder frame."""
        for psi in list(self.frames.conjunct_list(self.frames.n, q)):
            if psi == TRUE:
                continue
            try:
                self.apply_rule("InductionCont", location=q, psi=psi)
            except SideConditionViolated:
                pass

    def _induction(self, q: str):
        """Forward-propagate conjuncts after a Conflict, per-level."""
        for lvl in range(1, self.frames.n):
            for psi in list(self.frames.conjunct_list(lvl, q)):
                if psi == TRUE:
                    continue
                try:
                    self.apply_rule("Induction", location=q, level=lvl, psi=psi)
                except SideConditionViolated:
                    pass

    def _induction_side_condition(self, lvl: int, q: str, psi: Formula) -> bool:
        """|= F(lambda q2. R_lvl(q2) and psi@q)(q) -> psi, checked per disjunct."""
        ha = self.ha
        if q == ha.initial_location:
            if not self.smt.check([ha.init, neg(psi)], want_model=False).is_unsat:
                return False
        for t in ha.incoming(q):
            pre = self.frames.formula(lvl, t.source)
            if t.source == q:
                pre = conj(pre, psi)
            ode = ha.flow.get(t.source) if self.hybrid else None
            stay = ha.stay.get(t.source) if self.hybrid else None
            if not jump_closure_unsat(self.smt, pre, ode, stay, t.guard, t.commands,
                                      psi, ha.variables, self.r, self.unsat_registry):
                return False
        return True

    # -- Valid -------------------------------------------------------------------
    def _check_valid_fixpoint(self) -> Optional[VerificationResult]:
        for i in range(self.frames.n):
            if all(
                self.smt.is_valid_implication(
                    self.frames.formula(i + 1, q), self.frames.formula(i, q)
                )
                for q in self.ha.locations
            ):
                invariant = self.frames.frame_dict(i)
                self._log_rule("Valid", fixpoint_level=i)
                return VerificationResult("valid", invariant=invariant)
        return None

    # -- oracle -------------------------------------------------------------------
    def _validator(self, kind: str, location: str, level: Optional[int],
                   ce: Valuation):
        """The side-condition checker for a Conflict/ConflictCont at ``location``."""
        ha = self.ha
        if kind == "conflict_cont":
            frame = {location: self.frames.formula(self.frames.n, location)}
        else:
            frame = {
                t.source: self.frames.formula(level - 1, t.source)
                for t in ha.incoming(location)
            }
        ctx = ValidationContext(ha=ha, smt=self.smt, r=self.r, frame=frame,
                                registry=self.unsat_registry)
        probe = GeneralizationQuery(
            id=-1, kind=kind, location=location, level=level,
            pre=TRUE, flow=None, stay=None, guard=None, cmd=None,
            ce=ce, init=self.frames.formula(0, location),
        )

        def validator(psi: Formula):
            return validate_generalization(ctx, probe, psi)

        return validator

    def _ask_oracle(self, kind: str, location: str, level: Optional[int],
                    pre: Formula, ce: Valuation, samples: List[Valuation],
                    transition: Optional[JumpTransition] = None):
        ha = self.ha
        qid = self._query_counter
        self._query_counter += 1
        if kind == "conflict_cont":
            flow = ha.flow.get(location)
            stay = ha.stay.get(location)
            guard = cmd = None
        else:
            src = transition.source if transition is not None else location
            flow = ha.flow.get(src) if self.hybrid else None
            stay = ha.stay.get(src) if self.hybrid else None
            guard = transition.guard if transition is not None else None
            cmd = transition.commands if transition is not None else None
        query = GeneralizationQuery(
            id=qid, kind=kind, location=location, level=level,
            pre=pre, flow=flow, stay=stay, guard=guard, cmd=cmd,
            ce=ce, init=self.frames.formula(0, location),
            trajectory=samples,
        )
        validator = self._validator(kind, location, level, ce)
        self._pending_query_log = {
            "query": {"id": qid, "kind": kind, "location": location,
                      "level": level, **query.fields_text()},
        }
        got = self.oracle.next_generalization(query, ha, self.phi_p, validator)
        if got is None:
            self._pending_query_log = None
            return None
        return got

    # -- consistency ---------------------------------------------------------------
    def check_consistent(self) -> List[str]:
        return check_consistent(
            self.ha, self.phi_p, self.frames, self.trace, self.smt,
            self.params, self.r, hybrid=self.hybrid,
        )


class _StepBudget(Exception):
    pass


# ---------------------------------------------------------------------------
# Consistency checker (the Con-A .. Con-F-2 conditions)
# ---------------------------------------------------------------------------

def check_consistent(
    ha: HybridAutomaton,
    phi_p: Formula,
    frames: Frames,
    trace: Sequence[TraceEntry],
    smt: SmtSession,
    params: SimParams,
    r: float,
    hybrid: bool,
) -> List[str]:
    """Violated consistency conditions of the current configuration.

    Implications go to the solver; the flow-closure conditions use the
    invariance check plus a bounded simulation refutation when the symbolic
    check is inconclusive (only a demonstrated violation is reported).
    Trace conditions are evaluated directly.
    """
    bad: List[str] = []
    n = frames.n
    eps = params.eps_eval

    # Con-A
    init_frame = frames.formula(0, ha.initial_location)
    if not smt.equivalent(init_frame, ha.init):
        bad.append("Con-A")
    else:
        for q in ha.locations:
            if q != ha.initial_location and not smt.equivalent(frames.formula(0, q), FALSE):
                bad.append("Con-A")
                break

    # Con-B
    for i in range(n):
        for q in ha.locations:
            if not smt.is_valid_implication(frames.formula(i, q), frames.formula(i + 1, q)):
                bad.append("Con-B-1" if hybrid else "Con-B")
                break
        else:
            continue
        break
    if hybrid:
        for q in ha.locations:
            if not smt.is_valid_implication(frames.formula(n, q), frames.rem_formula(q)):
                bad.append("Con-B-2")
                break

    # Con-C
    for i in range(n):
        for q in ha.locations:
            if not smt.is_valid_implication(frames.formula(i, q), phi_p):
                bad.append("Con-C")
                break
        else:
            continue
        break

    # Con-D
    for i in range(n):
        if _closure_violated(ha, frames.frame_dict(i), frames.frame_dict(i + 1),
                             smt, params, r, hybrid):
            bad.append("Con-D-1" if hybrid else "Con-D")
            break
    if hybrid:
        rem_dict = {q: frames.rem_formula(q) for q in ha.locations}
        if _cont_closure_violated(ha, frames.frame_dict(n), rem_dict, smt, params, r):
            bad.append("Con-D-2")

    # Con-E / Con-F
    for entry in trace:
        if entry.index == REM:
            member = conj(frames.rem_formula(entry.location), neg(phi_p))
            if not evaluate(member, entry.sigma, eps):
                bad.append("Con-E")
                break
        elif not hybrid and entry.index == n:
            member = conj(frames.formula(n, entry.location), neg(phi_p))
            if not evaluate(member, entry.sigma, eps):
                bad.append("Con-E")
                break

    for a, b in zip(trace, trace[1:]):
        label = _pair_consistent(ha, frames, a, b, params, eps, hybrid)
        if label:
            bad.append(label)
            break
    return bad


def _closure_violated(ha, frame_lo, frame_hi, smt, params, r, hybrid) -> bool:
    """Definite violation of F(frame_lo) => frame_hi at some location."""
    for q in ha.locations:
        target = frame_hi[q]
        if q == ha.initial_location:
            if not smt.check([ha.init, neg(target)], want_model=False).is_unsat:
                return True
        for t in ha.incoming(q):
            pre = frame_lo[t.source]
            # Zero-duration slice is a complete check in both modes.
            pulled = pullback_through_command(target, t.commands, ha.variables)
            if not smt.check([pre, t.guard, neg(pulled)], want_model=False).is_unsat:
                return True
            if not hybrid:
                continue
            ode, stay = ha.flow[t.source], ha.stay[t.source]
            settled = jump_closure_unsat(smt, pre, ode, stay, t.guard, t.commands,
                                         target, ha.variables, r)
            if settled:
                continue
            if _simulate_refutes_jump_closure(ha, t, pre, target, smt, params):
                return True
    return False


def _cont_closure_violated(ha, frame_n, frame_rem, smt, params, r) -> bool:
    for q in ha.locations:
        pre, target = frame_n[q], frame_rem[q]
        if not smt.check([pre, neg(target)], want_model=False).is_unsat:
            return True
        if cont_closure_unsat(smt, pre, ha.flow[q], ha.stay[q], target, r):
            continue
        if _simulate_refutes_cont_closure(ha, q, pre, target, smt, params):
            return True
    return False


_PROBE_STEPS = 400
_PROBE_H = 1e-2


def _probe_start(smt, pre, ha) -> Optional[Valuation]:
    try:
        res = smt.check([pre])
    except Exception:
        return None
    if not res.is_sat or res.model is None:
        return None
    return {Var(n, 0): res.model.get(Var(n, 0), 0.0) for n in ha.variables}


def _simulate_refutes_jump_closure(ha, t, pre, target, smt, params) -> bool:
    sigma = _probe_start(smt, pre, ha)
    if sigma is None:
        return False
    probe = SimParams(step=_PROBE_H, horizon=_PROBE_STEPS, eps_eval=params.eps_eval)
    eps = 1e-7
    samples = simulate_ode(ha.flow[t.source], sigma, probe, "forward")
    for i, sample in enumerate(samples):
        if i > 0 and not evaluate(ha.stay[t.source], sample, eps):
            break
        if evaluate(t.guard, sample, eps):
            landed = apply_command(t.commands, sample)
            if not evaluate(target, landed, 1e-6):
                return True
    return False


def _simulate_refutes_cont_closure(ha, q, pre, target, smt, params) -> bool:
    sigma = _probe_start(smt, pre, ha)
    if sigma is None:
        return False
    probe = SimParams(step=_PROBE_H, horizon=_PROBE_STEPS, eps_eval=params.eps_eval)
    eps = 1e-7
    samples = simulate_ode(ha.flow[q], sigma, probe, "forward")
    for i, sample in enumerate(samples):
        if i > 0 and not evaluate(ha.stay[q], sample, eps):
            break
        if not evaluate(target, sample, 1e-6):
            return True
    return False


def _pair_consistent(ha, frames, a: TraceEntry, b: TraceEntry, params, eps, hybrid):
    """Con-F on one adjacent trace pair; returns a label or None."""
    from .discharge import flow_connects

    tol = 1e-6
    if hybrid and b.index == REM:
        if a.index != frames.n or a.location != b.location:
            return "Con-F-2"
        if not evaluate(frames.formula(frames.n, a.location), a.sigma, tol):
            return "Con-F-2"
        if not flow_connects(ha.flow[a.location], ha.stay[a.location],
                             a.sigma, b.sigma, params, 1e-4):
            return "Con-F-2"
        return None
    if not isinstance(a.index, int) or not isinstance(b.index, int):
        return "Con-F-1"
    if b.index != a.index + 1:
        return "Con-F-1"
    label = "Con-F-1" if hybrid else "Con-F"
    if not evaluate(frames.formula(a.index, a.location), a.sigma, tol):
        return label
    for t in ha.transitions:
        if t.source != a.location or t.target != b.location:
            continue
        pre_jump = invert_command(t.commands, b.sigma)
        if not evaluate(t.guard, pre_jump, tol):
            continue
        if not hybrid:
            return None
        if flow_connects(ha.flow[t.source], ha.stay[t.source],
                         a.sigma, pre_jump, params, 1e-4):
            return None
    return label


# ---------------------------------------------------------------------------
# Independent result validation (inductive invariant / counterexample checks)
# ---------------------------------------------------------------------------

def trace_to_run(trace: Sequence[TraceEntry]) -> Run:
    steps = []
    for entry in trace:
        steps.append((entry.location, dict(entry.sigma)))
    return Run(tuple(steps))


def validate_result(
    ha: HybridAutomaton,
    phi_p: Formula,
    result: VerificationResult,
    smt: SmtSession,
    params: Optional[SimParams] = None,
    r: float = 1e-3,
    run_eps: float = 1e-2,
) -> str:
    """'ok', 'invalid' or 'inconclusive', independently of the engine's path.

    A valid verdict is checked against the three inductive-invariant
    conditions (initiation by SMT, flow-then-jump closure by the invariance
    check, safety by SMT).  A model verdict is replayed as a run.
    """
    params = params or SimParams()
    if result.status == "model":
        if not result.trace:
            return "invalid"
        run = trace_to_run(result.trace)
        if not check_run(ha, run, run_eps):
            return "invalid"
        if evaluate(phi_p, run.last_valuation(), 0.0):
            return "invalid"
        return "ok"
    if result.status != "valid" or not result.invariant:
        return "invalid"
    inv = result.invariant
    if not smt.check([ha.init, neg(inv[ha.initial_location])], want_model=False).is_unsat:
        return "invalid"
    for q in ha.locations:
        if not smt.check([inv[q], neg(phi_p)], want_model=False).is_unsat:
            return "invalid"
    inconclusive = False
    for q in ha.locations:
        for t in ha.incoming(q):
            pre = inv[t.source]
            pulled = pullback_through_command(inv[q], t.commands, ha.variables)
            if not smt.check([pre, t.guard, neg(pulled)], want_model=False).is_unsat:
                return "invalid"  # the zero-duration slice already leaks
            if not ha.is_hybrid:
                continue
            ok = jump_closure_unsat(smt, pre, ha.flow[t.source], ha.stay[t.source],
                                    t.guard, t.commands, inv[q], ha.variables, r)
            if not ok:
                if _simulate_refutes_jump_closure(ha, t, pre, inv[q], smt, params):
                    return "invalid"
                inconclusive = True
    return "inconclusive" if inconclusive else "ok"
