"""Result artifacts, session logs, trajectory dumps and figures.

The verify path writes ``result.json`` (status, invariant or trace, stats,
the effective configuration) plus an append-only ``session.log`` and a phase
portrait; the simulate path writes the ``t,x1,...,xn`` trajectory file with a
figure next to it.
"""

from __future__ import annotations

import json
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .formulas import Formula, Var, evaluate, format_formula
from .model import HybridAutomaton
from .discharge import SimParams, simulate_ode
from .engine import TraceEntry, VerificationResult


def result_to_doc(result: VerificationResult, config: Optional[dict] = None) -> dict:
    doc: Dict[str, object] = {"status": result.status, "stats": result.stats}
    if result.reason:
        doc["reason"] = result.reason
    if result.invariant is not None:
        doc["invariant"] = {q: format_formula(f) for q, f in result.invariant.items()}
    if result.trace is not None:
        doc["trace"] = [
            {"location": e.location, "index": e.index,
             "valuation": {str(v): e.sigma[v] for v in sorted(e.sigma, key=lambda u: u.name)}}
            for e in result.trace
        ]
    if config:
        doc["config"] = config
    return doc


def write_result_artifact(path: str, result: VerificationResult,
                          config: Optional[dict] = None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result_to_doc(result, config), fh, indent=2)
        fh.write("\n")


def write_session_log(path: str, log: Sequence[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def read_session_log(path: str) -> List[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


# ---------------------------------------------------------------------------
# Trajectory dumps
# ---------------------------------------------------------------------------

def write_trajectory_csv(path: str, samples: Sequence[Dict[Var, float]],
                         variables: Sequence[str], step: float,
                         direction: str = "forward"):
    sign = 1.0 if direction == "forward" else -1.0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t," + ",".join(variables) + "\n")
        for i, sample in enumerate(samples):
            row = [f"{sign * i * step:.9g}"]
            row += [f"{sample[Var(n, 0)]:.9g}" for n in variables]
            fh.write(",".join(row) + "\n")


def trajectory_figure(path: str, samples: Sequence[Dict[Var, float]],
                      variables: Sequence[str], title: str = "trajectory"):
    fig, ax = plt.subplots(figsize=(5, 5))
    if len(variables) >= 2:
        xs = [s[Var(variables[0], 0)] for s in samples]
        ys = [s[Var(variables[1], 0)] for s in samples]
        ax.plot(xs, ys, lw=1.0)
        ax.plot(xs[0], ys[0], "go", ms=5, label="start")
        ax.plot(xs[-1], ys[-1], "rx", ms=7, label="end")
        ax.set_xlabel(variables[0])
        ax.set_ylabel(variables[1])
        ax.legend(loc="best", fontsize=8)
    else:
        ts = list(range(len(samples)))
        ax.plot(ts, [s[Var(variables[0], 0)] for s in samples], lw=1.0)
        ax.set_xlabel("sample")
        ax.set_ylabel(variables[0])
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Verification figures
# ---------------------------------------------------------------------------

def verification_figure(path: str, ha: HybridAutomaton,
                        result: VerificationResult,
                        params: Optional[SimParams] = None):
    """Phase portrait of the outcome: counterexample run or invariant region."""
    params = params or SimParams()
    if len(ha.variables) < 2:
        return
    vx, vy = ha.variables[0], ha.variables[1]
    fig, ax = plt.subplots(figsize=(5.5, 5.5))

    if result.invariant is not None:
        _scatter_region(ax, result.invariant, ha, vx, vy)
        ax.set_title("invariant sample (per location)")
    if result.trace:
        _plot_trace(ax, ha, result.trace, vx, vy, params)
        ax.set_title("counterexample run")
    ax.set_xlabel(vx)
    ax.set_ylabel(vy)
    ax.grid(alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _scatter_region(ax, invariant: Dict[str, Formula], ha, vx, vy, extent=2.0, grid=121):
    import numpy as np

    xs = np.linspace(-extent, extent, grid)
    markers = {q: m for q, m in zip(ha.locations, ["o", "s", "^", "d", "v", "*"])}
    for q, phi in invariant.items():
        px, py = [], []
        for a in xs:
            for b in xs:
                sigma = {Var(vx, 0): float(a), Var(vy, 0): float(b)}
                for other in ha.variables[2:]:
                    sigma[Var(other, 0)] = 0.0
                if evaluate(phi, sigma, 1e-9):
                    px.append(a)
                    py.append(b)
        if px:
            ax.scatter(px, py, s=6, marker=markers.get(q, "o"), label=f"R({q})", alpha=0.6)


def _plot_trace(ax, ha, trace: Sequence[TraceEntry], vx, vy, params):
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, entry in enumerate(trace):
        x = entry.sigma[Var(vx, 0)]
        y = entry.sigma[Var(vy, 0)]
        ax.plot(x, y, "ko", ms=5)
        ax.annotate(f"{entry.location}@{entry.index}", (x, y), fontsize=7,
                    xytext=(4, 4), textcoords="offset points")
    if not ha.is_hybrid:
        xs = [e.sigma[Var(vx, 0)] for e in trace]
        ys = [e.sigma[Var(vy, 0)] for e in trace]
        ax.plot(xs, ys, "--", lw=0.8, color=colors[0], label="jumps")
        return
    # Flow segments between consecutive trace points, forward simulated.
    for i, (a, b) in enumerate(zip(trace, trace[1:])):
        q = a.location
        seg = simulate_ode(ha.flow[q], a.sigma, params, "forward")
        xs, ys = [], []
        target = b.sigma
        for sample in seg:
            xs.append(sample[Var(vx, 0)])
            ys.append(sample[Var(vy, 0)])
            if all(abs(sample[v] - target[v]) <= 1e-2 * (1 + abs(target[v]))
                   for v in target):
                break
        ax.plot(xs, ys, lw=1.2, color=colors[i % len(colors)],
                label=f"flow at {q}" if i < 4 else None)
