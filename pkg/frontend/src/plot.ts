// Phase-plane plotting math: world-to-canvas transforms, trajectory
// polylines and the stay-condition sign grid.  Kept free of DOM types so it
// is directly unit-testable; main.ts owns the canvas.

import { Env, Formula, evalFormula } from "./formula.js";

export interface Bounds {
  xmin: number;
  xmax: number;
  ymin: number;
  ymax: number;
}

export interface Transform {
  bounds: Bounds;
  width: number;
  height: number;
}

export function boundsAround(points: Env[], axes: [string, string], pad = 0.25): Bounds {
  let xmin = Infinity, xmax = -Infinity, ymin = Infinity, ymax = -Infinity;
  for (const p of points) {
    const x = p[axes[0]] ?? 0;
    const y = p[axes[1]] ?? 0;
    xmin = Math.min(xmin, x);
    xmax = Math.max(xmax, x);
    ymin = Math.min(ymin, y);
    ymax = Math.max(ymax, y);
  }
  if (!isFinite(xmin)) {
    return { xmin: -1, xmax: 1, ymin: -1, ymax: 1 };
  }
  const spanX = Math.max(xmax - xmin, 1e-6);
  const spanY = Math.max(ymax - ymin, 1e-6);
  const margin = Math.max(spanX, spanY) * pad;
  return {
    xmin: xmin - margin,
    xmax: xmax + margin,
    ymin: ymin - margin,
    ymax: ymax + margin,
  };
}

export function worldToScreen(t: Transform, x: number, y: number): [number, number] {
  const sx = ((x - t.bounds.xmin) / (t.bounds.xmax - t.bounds.xmin)) * t.width;
  const sy = t.height - ((y - t.bounds.ymin) / (t.bounds.ymax - t.bounds.ymin)) * t.height;
  return [sx, sy];
}

export function polyline(t: Transform, samples: Env[], axes: [string, string]): [number, number][] {
  return samples.map((s) => worldToScreen(t, s[axes[0]] ?? 0, s[axes[1]] ?? 0));
}

export interface GridCell {
  x: number;
  y: number;
  inside: boolean;
}

// Sample the stay condition on an n-by-n grid; other variables are pinned to
// the counterexample's values so the overlay is a faithful 2-D slice.
export function staySignGrid(
  stay: Formula,
  bounds: Bounds,
  axes: [string, string],
  pinned: Env,
  n = 24,
): GridCell[] {
  const cells: GridCell[] = [];
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const x = bounds.xmin + ((i + 0.5) / n) * (bounds.xmax - bounds.xmin);
      const y = bounds.ymin + ((j + 0.5) / n) * (bounds.ymax - bounds.ymin);
      const env: Env = { ...pinned, [axes[0]]: x, [axes[1]]: y };
      let inside = false;
      try {
        inside = evalFormula(stay, env);
      } catch {
        inside = false;
      }
      cells.push({ x, y, inside });
    }
  }
  return cells;
}

export function defaultAxes(variables: string[]): [string, string] {
  // The first two declared variables, per the design default.
  return [variables[0] ?? "x", variables[1] ?? variables[0] ?? "y"];
}
