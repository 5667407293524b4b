"""Command-line entry point.

Subcommands: ``verify`` runs the appropriate driver and writes the result
artifact, session log and a phase figure; ``check-invariant`` validates a
user-supplied frame; ``replay`` re-executes a logged session and compares;
``simulate`` dumps a trajectory with a figure next to it.

Exit codes for verify: 0 safe (Valid), 10 unsafe (Model), 20 aborted,
2 usage error.  check-invariant: 0 inductive and safe, 1 not, 30 the flow
closure could not be discharged.  replay: 0 identical, 1 divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Optional

from .formulas import ParseError, Var, format_formula, parse_formula
from .model import HybridAutomaton, ValidationError, load_model
from .discharge import SimParams, simulate_ode
from .engine import Engine, Limits, VerificationResult, validate_result
from .oracle import HintScript, InteractiveOracle, OracleChain
from .smt import SmtSession, SolverError
from . import report

EXIT_VALID = 0
EXIT_MODEL = 10
EXIT_ABORTED = 20
EXIT_USAGE = 2
EXIT_INVALID = 1
EXIT_INCONCLUSIVE = 30


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"error: solver: {exc}", file=sys.stderr)
        return EXIT_ABORTED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypdr",
                                     description="PDR-style safety checking for hybrid automata")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the verification driver")
    v.add_argument("model")
    _common_flags(v)
    v.add_argument("--hints", help="scripted generalization file")
    v.add_argument("--interactive", action="store_true",
                   help="block on the session server for generalizations")
    v.add_argument("--serve", metavar="ADDR", nargs="?", const="127.0.0.1:8750",
                   help="expose the session API (default 127.0.0.1:8750)")
    v.add_argument("--no-heuristics", action="store_true",
                   help="disable the built-in generalization heuristics")
    v.add_argument("--debug-consistency", action="store_true",
                   help="check the consistency conditions after every rule")
    v.add_argument("--out", default=".", help="artifact directory")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("check-invariant", help="validate a user-supplied invariant")
    c.add_argument("model")
    c.add_argument("invariant", help="JSON file {location: formula}")
    _common_flags(c)
    c.set_defaults(func=cmd_check_invariant)

    r = sub.add_parser("replay", help="re-execute a logged session")
    r.add_argument("model")
    r.add_argument("log")
    _common_flags(r)
    r.set_defaults(func=cmd_replay)

    s = sub.add_parser("simulate", help="dump a trajectory from a state")
    s.add_argument("model")
    s.add_argument("--location", required=True)
    s.add_argument("--state", required=True, help='e.g. "x=1, y=0"')
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--backward", action="store_true")
    s.add_argument("--step", type=float, default=1e-3)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_simulate)
    return parser


def _common_flags(p: argparse.ArgumentParser):
    p.add_argument("--safe", help="safety formula (overrides the model file)")
    p.add_argument("--init-formula", help="initial formula (overrides the model file)")
    p.add_argument("--init-location", help="initial location (overrides the model file)")
    p.add_argument("--mode", choices=["auto", "discrete", "hybrid"], default="auto")
    p.add_argument("--step", type=float, default=1e-3, help="integration step h")
    p.add_argument("--horizon", type=int, default=20000, help="backward steps T")
    p.add_argument("--eps-eval", type=float, default=1e-9)
    p.add_argument("--r", type=float, default=1e-3, help="invariance step bound")
    p.add_argument("--max-frames", type=int, default=32)
    p.add_argument("--solver-cmd", default=None)
    p.add_argument("--timeout-ms", type=int, default=10000)


def _load(args) -> HybridAutomaton:
    ha = load_model(args.model)
    if getattr(args, "init_formula", None):
        ha = replace(ha, init=parse_formula(args.init_formula))
    if getattr(args, "init_location", None):
        ha = replace(ha, initial_location=args.init_location)
    mode = getattr(args, "mode", "auto")
    if mode == "discrete" and ha.is_hybrid:
        ha = replace(ha, flow={}, stay={})
    if mode == "hybrid" and not ha.is_hybrid:
        raise ValueError("model has no flow/inv entries; cannot run in hybrid mode")
    ha.validate()
    return ha


def _phi_p(args, ha: HybridAutomaton):
    if args.safe:
        return parse_formula(args.safe)
    if ha.safe is not None:
        return ha.safe
    raise ValueError("no safety formula: give --safe or a \"safe\" entry in the model")


def _config_echo(args, ha) -> dict:
    return {
        "model": os.path.abspath(args.model),
        "mode": "hybrid" if ha.is_hybrid else "discrete",
        "safe": args.safe or (format_formula(ha.safe) if ha.safe is not None else None),
        "init": format_formula(ha.init),
        "step": args.step,
        "horizon": args.horizon,
        "eps_eval": args.eps_eval,
        "r": args.r,
        "max_frames": args.max_frames,
        "solver_cmd": args.solver_cmd or os.environ.get("HYPDR_SOLVER") or "z3 -in",
        "timeout_ms": args.timeout_ms,
        "hints": getattr(args, "hints", None),
        "interactive": getattr(args, "interactive", False),
    }


def _exit_code(result: VerificationResult) -> int:
    return {"valid": EXIT_VALID, "model": EXIT_MODEL}.get(result.status, EXIT_ABORTED)


def cmd_verify(args) -> int:
    ha = _load(args)
    phi_p = _phi_p(args, ha)
    params = SimParams(step=args.step, horizon=args.horizon, eps_eval=args.eps_eval)
    script = HintScript.load(args.hints) if args.hints else None

    interactive = None
    server = None
    state = None
    if args.interactive or args.serve:
        from .server import SessionState, serve_in_background
        interactive = InteractiveOracle()
        state = SessionState(interactive)
        static = _frontend_dir()
        server = serve_in_background(state, args.serve or "127.0.0.1:8750", static)
        print(f"session server on http://{args.serve or '127.0.0.1:8750'}"
              + (f" (ui from {static})" if static else ""))

    chain = OracleChain(
        script=script,
        heuristics_enabled=not args.no_heuristics,
        interactive=interactive if args.interactive else None,
    )
    os.makedirs(args.out, exist_ok=True)
    with SmtSession(args.solver_cmd, args.timeout_ms) as smt:
        engine = Engine(ha, phi_p, smt, chain, params, args.r,
                        Limits(max_frames=args.max_frames,
                               solver_timeout_ms=args.timeout_ms),
                        debug_consistency=args.debug_consistency)
        if state is not None:
            state.attach_engine(engine)
        try:
            result = engine.run()
        finally:
            if interactive is not None:
                interactive.cancel()
        config = _config_echo(args, ha)
        doc = report.result_to_doc(result, config)
        if state is not None:
            state.publish_result(doc)
        report.write_result_artifact(os.path.join(args.out, "result.json"), result, config)
        report.write_session_log(os.path.join(args.out, "session.log"), engine.log)
        try:
            report.verification_figure(os.path.join(args.out, "phase.png"), ha, result, params)
        except Exception as exc:
            print(f"warning: could not render figure: {exc}", file=sys.stderr)
        _print_result(result)
        if engine.debug_consistency:
            print(f"consistency: {engine.consistency_checks} checks, "
                  f"{len(engine.consistency_violations)} violations")
    if server is not None and args.serve and not args.interactive:
        server.shutdown()
    return _exit_code(result)


def _frontend_dir() -> Optional[str]:
    here = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    for cand in (os.path.join(here, "frontend", "dist"),
                 os.path.join(os.getcwd(), "frontend", "dist")):
        if os.path.isfile(os.path.join(cand, "index.html")):
            return cand
    return None


def _print_result(result: VerificationResult):
    if result.is_valid:
        print("result: VALID (safe)")
        for q, f in result.invariant.items():
            print(f"  {q}: {format_formula(f)}")
    elif result.is_model:
        print("result: MODEL (unsafe); counterexample run:")
        for e in result.trace:
            vals = ", ".join(f"{v.name}={e.sigma[v]:.6g}"
                             for v in sorted(e.sigma, key=lambda u: u.name))
            print(f"  <{e.location}, {{{vals}}}> @ {e.index}")
    else:
        print(f"result: ABORTED ({result.reason})")
    print(f"stats: {result.stats}")


def cmd_check_invariant(args) -> int:
    ha = _load(args)
    phi_p = _phi_p(args, ha)
    with open(args.invariant, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    invariant = {q: parse_formula(text) for q, text in doc.items()}
    missing = [q for q in ha.locations if q not in invariant]
    if missing:
        raise ValueError(f"invariant file misses locations: {missing}")
    result = VerificationResult("valid", invariant=invariant)
    params = SimParams(step=args.step, horizon=args.horizon, eps_eval=args.eps_eval)
    with SmtSession(args.solver_cmd, args.timeout_ms) as smt:
        verdict = validate_result(ha, phi_p, result, smt, params, args.r)
    print(f"invariant check: {verdict}")
    if verdict == "ok":
        return EXIT_VALID
    if verdict == "inconclusive":
        return EXIT_INCONCLUSIVE
    return EXIT_INVALID


def cmd_replay(args) -> int:
    ha = _load(args)
    phi_p = _phi_p(args, ha)
    log = report.read_session_log(args.log)
    if not log:
        raise ValueError("session log is empty")
    answers = [e["answer"] for e in log if "answer" in e]
    script = HintScript([(None, parse_formula(a)) for a in answers])
    params = SimParams(step=args.step, horizon=args.horizon, eps_eval=args.eps_eval)
    with SmtSession(args.solver_cmd, args.timeout_ms) as smt:
        engine = Engine(ha, phi_p, smt, OracleChain(script=script, heuristics_enabled=False),
                        params, args.r, Limits(max_frames=args.max_frames))
        result = engine.run()
    for i, (old, new) in enumerate(zip(log, engine.log)):
        for key in ("rule", "frames_digest", "n"):
            if old.get(key) != new.get(key):
                print(f"DivergenceAt(step={i}): {key} {old.get(key)!r} != {new.get(key)!r}")
                return EXIT_INVALID
    if len(log) != len(engine.log):
        print(f"DivergenceAt(step={min(len(log), len(engine.log))}): length mismatch")
        return EXIT_INVALID
    old_status = _final_status(log)
    if old_status is not None and old_status != result.status:
        print(f"DivergenceAt(end): {old_status} != {result.status}")
        return EXIT_INVALID
    print(f"replay: identical ({len(log)} steps, result {result.status})")
    return EXIT_VALID


def _final_status(log) -> Optional[str]:
    for entry in reversed(log):
        if entry["rule"] == "Valid":
            return "valid"
        if entry["rule"] == "Model":
            return "model"
    return None


def cmd_simulate(args) -> int:
    ha = _load(args)
    if not ha.is_hybrid:
        raise ValueError("simulate needs a hybrid model")
    if args.location not in ha.locations:
        raise ValueError(f"unknown location {args.location!r}")
    sigma = {}
    for part in args.state.split(","):
        name, _, value = part.partition("=")
        sigma[Var(name.strip(), 0)] = float(value)
    for n in ha.variables:
        if Var(n, 0) not in sigma:
            raise ValueError(f"state misses variable {n!r}")
    steps = max(2, int(round(args.duration / args.step)) + 1)
    params = SimParams(step=args.step, horizon=steps)
    direction = "backward" if args.backward else "forward"
    samples = simulate_ode(ha.flow[args.location], sigma, params, direction)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "trajectory.csv")
    report.write_trajectory_csv(csv_path, samples, list(ha.variables), args.step, direction)
    report.trajectory_figure(os.path.join(args.out, "trajectory.png"), samples,
                             list(ha.variables),
                             title=f"{args.location} ({direction})")
    print(f"wrote {csv_path} ({len(samples)} samples) and trajectory.png")
    return 0


if __name__ == "__main__":
    sys.exit(main())
