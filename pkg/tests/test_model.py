import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from hypdr.formulas import Var, evaluate, format_formula, parse_formula
from hypdr.model import (
    Command,
    HybridAutomaton,
    Run,
    ValidationError,
    apply_command,
    check_run,
    command_formula,
    invert_command,
    load_model,
    parse_command,
    parse_model,
    serialize_model,
)
from conftest import fixture_path


def V(name):
    return Var(name, 0)


class TestParsing:
    def test_circle_fixture(self, circle):
        assert circle.is_hybrid
        assert circle.locations == ("q0", "q1")
        assert format_formula(circle.stay["q0"]) == "y >= 0"
        assert format_formula(circle.stay["q1"]) == "y <= 0"
        assert len(circle.transitions) == 2
        assert all(c.is_skip for t in circle.transitions for c in t.commands)

    def test_sum_fixture(self, sum_model):
        assert not sum_model.is_hybrid
        loop = sum_model.transitions[0]
        assert loop.source == loop.target == "q0"
        assert format_formula(loop.guard) == "x > 0"
        assert str(loop.commands[0]) == "sum := 1*sum + x"

    def test_nonlinear_command_rejected(self):
        text = """{"vars":["x","y"],"locations":[{"id":"q0"}],
                   "init":{"location":"q0","formula":"x=0"},
                   "transitions":[{"from":"q0","guard":"true","cmd":["x := x*y"],"to":"q0"}]}"""
        with pytest.raises(ValidationError):
            parse_model(text)

    def test_zero_r1_rejected(self):
        with pytest.raises(ValidationError):
            parse_command("x := 0*x + 1")

    def test_singular_update_rejected(self):
        text = """{"vars":["x","y"],"locations":[{"id":"q0"}],
                   "init":{"location":"q0","formula":"x=0"},
                   "transitions":[{"from":"q0","guard":"true",
                     "cmd":["x := 1*x + y", "y := 1*y + x"],"to":"q0"}]}"""
        with pytest.raises(ValidationError):
            parse_model(text)

    def test_partial_flow_rejected(self):
        text = """{"vars":["x"],"locations":[{"id":"a","flow":{"x":"1"},"inv":"true"},
                   {"id":"b"}],"init":{"location":"a","formula":"x=0"},"transitions":[]}"""
        with pytest.raises(ValidationError):
            parse_model(text)

    def test_undeclared_variable_rejected(self):
        text = """{"vars":["x"],"locations":[{"id":"a"}],
                   "init":{"location":"a","formula":"z=0"},"transitions":[]}"""
        with pytest.raises(ValidationError):
            parse_model(text)

    @pytest.mark.parametrize(
        "name", ["circle.hha", "sum.dtsts", "decay.hha", "counter.dtsts", "bounce.hha"])
    def test_serialize_roundtrip(self, name):
        ha = load_model(fixture_path(name))
        again = parse_model(serialize_model(ha))
        assert again == ha


class TestCommands:
    def test_skip_identity(self):
        sigma = {V("x"): 2.001, V("y"): 0.0}
        assert invert_command((Command(),), sigma) == sigma

    def test_affine_inverse(self):
        # x := 2*x + 1 back from x = 5
        pre = invert_command((parse_command("x := 2*x + 1"),), {V("x"): 5.0})
        assert pre == {V("x"): 2.0}

    def test_sum_step_inverse(self):
        # Derived by solving sum_pre + x_pre = 3, x_pre - 1 = 2 by hand.
        cmds = (parse_command("sum := 1*sum + x"), parse_command("x := 1*x - 1"))
        pre = invert_command(cmds, {V("x"): 2.0, V("sum"): 3.0})
        assert pre == {V("x"): 3.0, V("sum"): 0.0}

    @settings(max_examples=100, deadline=None)
    @given(
        st.fractions(min_value=Fraction(-4), max_value=Fraction(4), max_denominator=8)
        .filter(lambda f: abs(f) >= Fraction(1, 8)),
        st.fractions(min_value=Fraction(-4), max_value=Fraction(4), max_denominator=8),
        st.booleans(),
        st.tuples(st.integers(-50, 50), st.integers(-50, 50)),
    )
    def test_invert_roundtrip(self, r1, r2, use_var, point):
        cmds = (
            Command("x", r1, r2, "y" if use_var else None),
            parse_command("y := 1*y + 2"),
        )
        sigma = {V("x"): float(point[0]), V("y"): float(point[1])}
        fwd = apply_command(cmds, sigma)
        back = invert_command(cmds, fwd)
        assert all(math.isclose(back[v], sigma[v], abs_tol=1e-9) for v in sigma)
        fwd2 = apply_command(cmds, invert_command(cmds, sigma))
        assert all(math.isclose(fwd2[v], sigma[v], abs_tol=1e-9) for v in sigma)

    def test_command_formula_reads_prestate(self):
        cmds = (parse_command("sum := 1*sum + x"), parse_command("x := 1*x - 1"))
        phi = command_formula(cmds, ["x", "sum"])
        sigma = {
            V("x"): 3.0, V("sum"): 0.0,
            Var("x", 1): 2.0, Var("sum", 1): 3.0,
        }
        assert evaluate(phi, sigma) is True


class TestCheckRun:
    def test_circle_half_turn_run(self, circle):
        from dataclasses import replace
        ha = replace(circle, init=parse_formula("x = 1 & y = 0"))
        run = Run((
            ("q0", {V("x"): 1.0, V("y"): 0.0}),
            ("q1", {V("x"): -1.0, V("y"): 0.0}),
            ("q1", {V("x"): 0.0, V("y"): -1.0}),
        ))
        assert check_run(ha, run, 1e-3) is True

    def test_example1_run(self, sum_model):
        states = [(3, 0), (2, 3), (1, 5), (0, 6)]
        steps = [("q0", {V("x"): float(x), V("sum"): float(s)}) for x, s in states]
        steps.append(("q1", {V("x"): 0.0, V("sum"): 6.0}))
        assert check_run(sum_model, Run(tuple(steps)), 1e-9) is True

    def test_init_violation_rejected(self, circle):
        run = Run((("q0", {V("x"): 5.0, V("y"): 0.0}),))
        assert check_run(circle, run, 1e-3) is False

    def test_zero_duration_jump_accepted(self, circle):
        from dataclasses import replace
        ha = replace(circle, init=parse_formula("x = 0.3 & y = -1"))
        run = Run((
            ("q0", {V("x"): 0.3, V("y"): -1.0}),
            ("q1", {V("x"): 0.3, V("y"): -1.0}),
            ("q1", {V("x"): math.sqrt(0.09 + 1.0), V("y"): 0.0}),
        ))
        assert check_run(ha, run, 1e-2) is True

    def test_damped_bounce_run(self):
        # Drop from h=1, impact at v=-sqrt(2), damping halves the speed,
        # rise to the h=1/4 apex: the affine jump command is replayed exactly.
        ha = load_model(fixture_path("bounce.hha"))
        run = Run((
            ("fall", {V("h"): 1.0, V("v"): 0.0}),
            ("fall", {V("h"): 0.0, V("v"): math.sqrt(2) / 2}),
            ("fall", {V("h"): 0.25, V("v"): 0.0}),
        ))
        assert check_run(ha, run, 2e-3) is True
        # Doubling the rebound speed is not explained by the damping command.
        bad = Run((
            ("fall", {V("h"): 1.0, V("v"): 0.0}),
            ("fall", {V("h"): 0.0, V("v"): math.sqrt(2)}),
        ))
        assert check_run(ha, bad, 2e-3) is False

    def test_corrupted_interior_rejected(self, sum_model):
        # (3,0) -> (1,5) skips a loop iteration: no enabled transition fits.
        steps = (
            ("q0", {V("x"): 3.0, V("sum"): 0.0}),
            ("q0", {V("x"): 1.0, V("sum"): 5.0}),
        )
        assert check_run(sum_model, Run(steps), 1e-9) is False

    def test_diverging_replay_raises(self):
        # A growth field overflows while replaying a distant final segment.
        from hypdr.model import SimulationDiverged
        text = """{"vars":["x"],"locations":[{"id":"g","flow":{"x":"x*x"},"inv":"true"}],
                   "init":{"location":"g","formula":"x=10"},"transitions":[]}"""
        ha = parse_model(text)
        run = Run((
            ("g", {V("x"): 10.0}),
            ("g", {V("x"): -1e11}),
        ))
        with pytest.raises(SimulationDiverged):
            check_run(ha, run, 1e-3)

    def test_fuzzed_corruption(self, sum_model):
        import random
        rng = random.Random(11)
        base = [(3, 0), (2, 3), (1, 5), (0, 6)]
        for _ in range(25):
            i = rng.randrange(len(base))
            bad = list(base)
            dx, ds = rng.choice([(1, 0), (0, 1), (-1, 1), (2, -2)])
            bad[i] = (base[i][0] + dx, base[i][1] + ds)
            steps = tuple(("q0", {V("x"): float(x), V("sum"): float(s)}) for x, s in bad)
            assert check_run(sum_model, Run(steps), 1e-9) is False
