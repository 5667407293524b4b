// Single-page session view: polls the verifier, renders the pending
// generalization query with a phase-plane plot, and submits answers.  All
// state lives server-side, so a refresh never loses anything.

import { QueryDoc, ResultDoc, SessionClient, StatusDoc } from "./api.js";
import { FormulaParseError, formatFormula, parseFormula } from "./formula.js";
import { boundsAround, defaultAxes, polyline, staySignGrid, worldToScreen } from "./plot.js";

const POLL_MS = 1000;

const client = new SessionClient("");
let shownQueryId: number | null = null;
let trajectoryCache: Record<string, number>[] = [];
let declaredVariables: string[] = [];
let axisChoice: [string, string] | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setBanner(text: string, kind: "info" | "error" | "" = "") {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = text;
  banner.className = kind;
}

function renderStatus(status: StatusDoc | null) {
  const box = el<HTMLDivElement>("status");
  if (!status) {
    box.textContent = "";
    return;
  }
  const bits = [
    `state: ${status.state}`,
    status.mode ? `mode: ${status.mode}` : "",
    status.n !== undefined ? `frames: ${status.n}` : "",
    status.steps !== undefined ? `steps: ${status.steps}` : "",
    status.frames_digest ? `digest: ${status.frames_digest}` : "",
  ].filter(Boolean);
  box.textContent = bits.join("  ·  ");
}

function renderQueryFields(query: QueryDoc) {
  const rows = Object.entries(query.fields)
    .map(([k, v]) => `<tr><th>${k}</th><td><code>${escapeHtml(v)}</code></td></tr>`)
    .join("");
  el<HTMLDivElement>("query-fields").innerHTML =
    `<table><caption>query #${query.id} — ${query.kind} at ${query.location}` +
    `${query.level !== null ? ` (frame ${query.level})` : " (remainder frame)"}</caption>` +
    rows + "</table>";
}

function currentAxes(query: QueryDoc): [string, string] {
  const vars = declaredVariables.length
    ? declaredVariables
    : Object.keys(query.ce).sort();
  if (axisChoice && vars.includes(axisChoice[0]) && vars.includes(axisChoice[1])) {
    return axisChoice;
  }
  return defaultAxes(vars);
}

function renderAxisPicker(query: QueryDoc) {
  const box = el<HTMLDivElement>("axes");
  const vars = declaredVariables.length
    ? declaredVariables
    : Object.keys(query.ce).sort();
  if (vars.length <= 2) {
    box.innerHTML = "";
    return;
  }
  const [ax, ay] = currentAxes(query);
  const options = (sel: string) =>
    vars.map((v) => `<option value="${v}"${v === sel ? " selected" : ""}>${v}</option>`).join("");
  box.innerHTML =
    `axes: <select id="axis-x">${options(ax)}</select>` +
    ` vs <select id="axis-y">${options(ay)}</select>`;
  const update = () => {
    axisChoice = [
      el<HTMLSelectElement>("axis-x").value,
      el<HTMLSelectElement>("axis-y").value,
    ];
    renderPlot(query);
  };
  el<HTMLSelectElement>("axis-x").addEventListener("change", update);
  el<HTMLSelectElement>("axis-y").addEventListener("change", update);
}

function renderPlot(query: QueryDoc) {
  const canvas = el<HTMLCanvasElement>("plot");
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const axes = currentAxes(query);
  const points = [...trajectoryCache, query.ce];
  const bounds = boundsAround(points, axes);
  const t = { bounds, width: canvas.width, height: canvas.height };

  ctx.clearRect(0, 0, canvas.width, canvas.height);

  // Stay-condition sign overlay.
  if (query.stay) {
    try {
      const stay = parseFormula(query.stay);
      const n = 26;
      const cw = canvas.width / n;
      const ch = canvas.height / n;
      for (const cell of staySignGrid(stay, bounds, axes, query.ce, n)) {
        const [sx, sy] = worldToScreen(t, cell.x, cell.y);
        ctx.fillStyle = cell.inside ? "rgba(80, 160, 255, 0.18)" : "rgba(255, 120, 80, 0.10)";
        ctx.fillRect(sx - cw / 2, sy - ch / 2, cw, ch);
      }
    } catch {
      // stay condition may mention variables this slice cannot pin
    }
  }

  // Axes through the origin when visible.
  ctx.strokeStyle = "#999";
  ctx.lineWidth = 1;
  const [ox, oy] = worldToScreen(t, 0, 0);
  ctx.beginPath();
  ctx.moveTo(0, oy);
  ctx.lineTo(canvas.width, oy);
  ctx.moveTo(ox, 0);
  ctx.lineTo(ox, canvas.height);
  ctx.stroke();

  // Backward trajectory.
  if (trajectoryCache.length > 1) {
    ctx.strokeStyle = "#2266cc";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    const pts = polyline(t, trajectoryCache, axes);
    pts.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
    ctx.stroke();
  }

  // Counterexample point.
  const [cx, cy] = worldToScreen(t, query.ce[axes[0]] ?? 0, query.ce[axes[1]] ?? 0);
  ctx.fillStyle = "#cc2222";
  ctx.beginPath();
  ctx.arc(cx, cy, 5, 0, 2 * Math.PI);
  ctx.fill();
  ctx.fillStyle = "#333";
  ctx.font = "11px sans-serif";
  ctx.fillText(`CE (${axes[0]}, ${axes[1]})`, cx + 8, cy - 8);
}

function renderResult(result: ResultDoc) {
  const box = el<HTMLDivElement>("result");
  if (result.status === "valid" && result.invariant) {
    const rows = Object.entries(result.invariant)
      .map(([q, f]) => `<tr><th>${q}</th><td><code>${escapeHtml(f)}</code></td></tr>`)
      .join("");
    box.innerHTML = `<h2>VALID — inductive invariant</h2><table>${rows}</table>`;
  } else if (result.status === "model" && result.trace) {
    const rows = result.trace
      .map((e) => {
        const vals = Object.entries(e.valuation)
          .map(([k, v]) => `${k} = ${Number(v).toPrecision(6)}`)
          .join(", ");
        return `<tr><th>${e.location} @ ${e.index}</th><td><code>${vals}</code></td></tr>`;
      })
      .join("");
    box.innerHTML = `<h2>MODEL — counterexample run</h2><table>${rows}</table>`;
  } else {
    box.innerHTML = `<h2>ABORTED</h2><p>${escapeHtml(result.reason ?? "unknown reason")}</p>`;
  }
}

function escapeHtml(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

async function submitAnswer() {
  const input = el<HTMLInputElement>("psi");
  const feedback = el<HTMLDivElement>("feedback");
  if (shownQueryId === null) {
    feedback.textContent = "no pending query";
    return;
  }
  let normalized: string;
  try {
    normalized = formatFormula(parseFormula(input.value));
  } catch (err) {
    if (err instanceof FormulaParseError) {
      feedback.textContent = `parse error: ${err.message}`;
      feedback.className = "error";
      return;
    }
    throw err;
  }
  const outcome = await client.answer(shownQueryId, normalized);
  if (outcome.code === 200) {
    feedback.textContent = `accepted: ${normalized}`;
    feedback.className = "ok";
    input.value = "";
    shownQueryId = null;
  } else {
    feedback.textContent = `rejected (${outcome.code}): ${outcome.reason}`;
    feedback.className = "error";
  }
}

async function tick() {
  try {
    const status = await client.status();
    renderStatus(status);
    if (status?.variables) declaredVariables = status.variables;
    const result = await client.result();
    if (result) {
      renderResult(result);
      el<HTMLDivElement>("query-section").style.display = "none";
      setBanner("session finished", "info");
      return;
    }
    const query = await client.pendingQuery();
    if (!query) {
      setBanner("engine running — no question pending", "info");
      el<HTMLDivElement>("query-section").style.display = "none";
    } else {
      el<HTMLDivElement>("query-section").style.display = "";
      if (query.id !== shownQueryId) {
        shownQueryId = query.id;
        trajectoryCache = [];
        const traj = await client.trajectory(query.id);
        if (traj) trajectoryCache = traj.samples;
        renderQueryFields(query);
        renderAxisPicker(query);
        el<HTMLDivElement>("feedback").textContent = "";
      }
      renderPlot(query);
      setBanner(`question pending — give a generalization excluding the CE`, "");
    }
  } catch (err) {
    setBanner(`connection lost: ${(err as Error).message}`, "error");
  } finally {
    window.setTimeout(tick, POLL_MS);
  }
}

export function start() {
  el<HTMLButtonElement>("submit").addEventListener("click", () => void submitAnswer());
  el<HTMLInputElement>("psi").addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") void submitAnswer();
  });
  void tick();
}

if (typeof document !== "undefined" && document.getElementById("plot")) {
  start();
}
