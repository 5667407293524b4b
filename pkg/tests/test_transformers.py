import random
from fractions import Fraction

import pytest

from hypdr.formulas import (
    FALSE,
    TRUE,
    Var,
    conj,
    evaluate,
    formula_vars,
    neg,
    parse_formula,
)
from hypdr.model import apply_command
from hypdr.transformers import (
    predtrans_cont,
    predtrans_discrete,
    predtrans_hybrid,
)
from hypdr.discharge import SimParams, flow_connects, simulate_ode
from conftest import ground


def V(name, level=0):
    return Var(name, level)


class TestDiscreteTransformer:
    def test_false_frame_is_initial(self, sum_model, smt):
        bottom = {q: FALSE for q in sum_model.locations}
        at_q0 = predtrans_discrete(sum_model, bottom, "q0")
        assert smt.equivalent(at_q0, sum_model.init)
        at_q1 = predtrans_discrete(sum_model, bottom, "q1")
        assert smt.equivalent(at_q1, FALSE)

    def test_sum_step_satisfied(self, sum_model, smt):
        # From R(q0) = (x=3 & sum=0) the loop reaches {x: 2, sum: 3}.
        frame = {"q0": parse_formula("x = 3 & sum = 0"), "q1": FALSE}
        vc = predtrans_discrete(sum_model, frame, "q0")
        post = {V("x"): 2.0, V("sum"): 3.0}
        residue = ground(vc, post, level=0)
        assert smt.check([residue]).is_sat  # x'' remain free unknowns

    def test_monotonicity(self, sum_model, smt):
        rng = random.Random(3)
        atoms = ["x >= 0", "sum >= 0", "x <= 4", "sum <= 6", "x + sum <= 8"]
        for _ in range(12):
            base = {
                q: conj(*[parse_formula(a) for a in rng.sample(atoms, 2)])
                for q in sum_model.locations
            }
            stronger = {
                q: conj(base[q], parse_formula(rng.choice(atoms)))
                for q in sum_model.locations
            }
            for q in sum_model.locations:
                weak = predtrans_discrete(sum_model, base, q)
                strong = predtrans_discrete(sum_model, stronger, q)
                assert smt.is_valid_implication(strong, weak)

    def test_fresh_copies_do_not_collide(self, sum_model):
        frame = {"q0": parse_formula("x = 1"), "q1": FALSE}
        vc = predtrans_discrete(sum_model, frame, "q0")
        levels = {v.prime_level for v in formula_vars(vc)}
        assert levels <= {0, 2}  # plain copy for the post state, fresh copy pre


class TestHybridTransformers:
    def test_false_frame_leaves_initial_disjunct(self, circle):
        bottom = {q: FALSE for q in circle.locations}
        vc = predtrans_hybrid(circle, bottom, "q0")
        assert vc.initial == circle.init
        assert all(q.pre == FALSE for _, q in vc.parts)
        vc1 = predtrans_hybrid(circle, bottom, "q1")
        assert vc1.initial == FALSE

    def test_fixpoint_origin(self, circle, smt):
        # R(q0) = origin; the only flow+jump image into q1 is the origin.
        frame = {"q0": parse_formula("x = 0 & y = 0"), "q1": FALSE}
        vc = predtrans_hybrid(circle, frame, "q1")
        (_, crp), = [(t, q) for t, q in vc.parts if t.source == "q0"]
        origin = {V("x"): 0.0, V("y"): 0.0}
        pre_ok = ground(crp.pre, origin, level=2)
        target_ok = ground(ground(crp.target, origin, level=2), origin, level=0)
        assert smt.check([pre_ok]).is_sat
        assert smt.check([target_ok]).is_sat
        # No other jump point is reachable: the origin is a flow fixpoint.
        elsewhere = {V("x"): 1.0, V("y"): 0.0}
        assert not flow_connects(crp.ode, circle.stay["q0"], origin, elsewhere,
                                 SimParams(step=1e-3, horizon=2000), 1e-4)

    def test_cont_half_circle(self, circle, smt):
        # Analytic solution: from (1,0) the flow within y>=0 reaches (-1,0).
        frame = {"q0": parse_formula("x = 1 & y = 0"), "q1": TRUE}
        crp = predtrans_cont(circle, frame, "q0")
        start = {V("x"): 1.0, V("y"): 0.0}
        end = {V("x"): -1.0, V("y"): 0.0}
        # matching tolerance must cover the sample spacing (h * |f| = 1e-3)
        assert flow_connects(crp.ode, circle.stay["q0"], start, end, SimParams(), 2e-3)
        residue = ground(ground(crp.target, end, level=2), end, level=0)
        assert smt.check([ground(crp.pre, start, level=2), residue]).is_sat

    def test_cont_false_frame_unsat(self, circle, smt):
        frame = {q: FALSE for q in circle.locations}
        crp = predtrans_cont(circle, frame, "q0")
        assert smt.check([crp.pre], want_model=False).is_unsat

    def test_hybrid_monotonicity(self, circle, smt):
        # Strengthening the frame strengthens exactly the precondition of
        # each reachability obligation; dynamics and targets are untouched,
        # so the transformer is pointwise monotone.
        import random
        rng = random.Random(9)
        atoms = ["x <= 1", "y >= 0", "x + y <= 2", "x >= -1"]
        for _ in range(8):
            base = {q: parse_formula(rng.choice(atoms)) for q in circle.locations}
            stronger = {q: conj(base[q], parse_formula(rng.choice(atoms)))
                        for q in circle.locations}
            for q in circle.locations:
                weak_vc = predtrans_hybrid(circle, base, q)
                strong_vc = predtrans_hybrid(circle, stronger, q)
                assert smt.is_valid_implication(strong_vc.initial, weak_vc.initial)
                for (t_w, crp_w), (t_s, crp_s) in zip(weak_vc.parts, strong_vc.parts):
                    assert t_w == t_s
                    assert smt.is_valid_implication(crp_s.pre, crp_w.pre)
                    assert crp_s.ode == crp_w.ode
                    assert crp_s.stay == crp_w.stay
                    assert crp_s.target == crp_w.target
                cont_w = predtrans_cont(circle, base, q)
                cont_s = predtrans_cont(circle, stronger, q)
                assert smt.is_valid_implication(cont_s.pre, cont_w.pre)
                assert (cont_s.ode, cont_s.stay, cont_s.target) == \
                       (cont_w.ode, cont_w.stay, cont_w.target)


class TestSimulationSoundness:
    """Single-step soundness of the transformers, small scale; the acceptance
    suite runs the 500-sample version."""

    def test_flow_only_steps_satisfy_cont_vc(self, circle, smt):
        rng = random.Random(5)
        params = SimParams(step=1e-3, horizon=1500)
        for _ in range(10):
            start = {V("x"): rng.uniform(-0.8, 0.8), V("y"): rng.uniform(0.0, 0.8)}
            frame = {"q0": parse_formula(
                f"x >= {start[V('x')] - 0.1} & x <= {start[V('x')] + 0.1} & "
                f"y >= {start[V('y')] - 0.1} & y <= {start[V('y')] + 0.1}"
            ), "q1": FALSE}
            samples = simulate_ode(circle.flow["q0"], start, params, "forward")
            stop = None
            for i, s in enumerate(samples):
                if i > 0 and not evaluate(circle.stay["q0"], s, 1e-9):
                    break
                stop = s
                if i >= rng.randrange(1, 1400):
                    break
            crp = predtrans_cont(circle, frame, "q0")
            residue = conj(
                ground(crp.pre, start, level=2),
                ground(ground(crp.target, stop, level=2), stop, level=0),
            )
            assert smt.check([residue]).is_sat

    def test_jump_steps_satisfy_discrete_vc(self, sum_model, smt):
        rng = random.Random(7)
        for _ in range(15):
            sigma = {V("x"): float(rng.randint(1, 5)), V("sum"): float(rng.randint(0, 6))}
            t = sum_model.transitions[0]
            assert evaluate(t.guard, sigma)
            post = apply_command(t.commands, sigma)
            frame = {"q0": ground_box(sigma), "q1": FALSE}
            vc = predtrans_discrete(sum_model, frame, t.target)
            residue = ground(ground(vc, sigma, level=2), post, level=0)
            assert smt.check([residue]).is_sat


def ground_box(sigma, width=0.5):
    parts = []
    for v, x in sigma.items():
        parts.append(parse_formula(f"{v.name} >= {x - width} & {v.name} <= {x + width}"))
    return conj(*parts)
