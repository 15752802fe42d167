import type { SupRow, SweepRow } from "./csv.js";
import { linearScale, padded, ticks, type LinearScale } from "./scale.js";
import { document, el, fmt, polyline, text } from "./svg.js";

export type FigureKind = "error-vs-strike" | "loglog-convergence";

export interface SchemeStyle {
  color: string;
  dash?: string;
  label: string;
}

/** Pinned styles so regeneration from the same CSV is byte-identical. */
export const DEFAULT_STYLES: Record<string, SchemeStyle> = {
  em: { color: "#1f77b4", label: "Euler-Maruyama" },
  tmilstein: { color: "#ff7f0e", dash: "6 3", label: "truncated Milstein" },
  extended: { color: "#2ca02c", label: "extended Milstein" },
};

export interface FigureOptions {
  width?: number;
  height?: number;
  styles?: Record<string, SchemeStyle>;
  title?: string;
  /** error-vs-strike only: required when the CSV mixes several n values */
  nFilter?: number;
  /** convergence only: sink for drop warnings (default: process stderr) */
  warn?: (message: string) => void;
}

const MARGIN = { top: 34, right: 24, bottom: 42, left: 64 };

function styleFor(
  scheme: string,
  styles: Record<string, SchemeStyle> | undefined,
  fallbackIndex: number,
): SchemeStyle {
  const table = styles ?? DEFAULT_STYLES;
  if (table[scheme]) return table[scheme];
  const palette = ["#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
  return { color: palette[fallbackIndex % palette.length], label: scheme };
}

function orderedSchemes(rows: Array<{ scheme: string }>): string[] {
  const seen: string[] = [];
  for (const row of rows) {
    if (!seen.includes(row.scheme)) seen.push(row.scheme);
  }
  return seen;
}

function axes(
  x: LinearScale,
  y: LinearScale,
  xTicks: number[],
  yTicks: number[],
  xLabel: string,
  yLabel: string,
  tickText: (v: number) => string,
  xTickText: (v: number) => string = tickText,
): string[] {
  const [x0, x1] = x.range;
  const [yTop, yBottom] = [y.range[1], y.range[0]];
  const body: string[] = [];
  for (const t of yTicks) {
    const yy = y(t);
    body.push(
      el("line", { x1: x0, y1: yy, x2: x1, y2: yy, stroke: "#dddddd", "stroke-width": 1 }),
    );
    body.push(text(x0 - 8, yy + 4, tickText(t), { "text-anchor": "end", fill: "#333333" }));
  }
  for (const t of xTicks) {
    const xx = x(t);
    body.push(
      el("line", {
        x1: xx,
        y1: yBottom,
        x2: xx,
        y2: yBottom + 5,
        stroke: "#333333",
        "stroke-width": 1,
      }),
    );
    body.push(
      text(xx, yBottom + 18, xTickText(t), { "text-anchor": "middle", fill: "#333333" }),
    );
  }
  body.push(
    el("line", { x1: x0, y1: yBottom, x2: x1, y2: yBottom, stroke: "#333333", "stroke-width": 1 }),
    el("line", { x1: x0, y1: yTop, x2: x0, y2: yBottom, stroke: "#333333", "stroke-width": 1 }),
    text((x0 + x1) / 2, yBottom + 34, xLabel, { "text-anchor": "middle", fill: "#111111" }),
    text(16, (yTop + yBottom) / 2, yLabel, {
      "text-anchor": "middle",
      fill: "#111111",
      transform: `rotate(-90 16 ${fmt((yTop + yBottom) / 2)})`,
    }),
  );
  return body;
}

function legend(
  schemes: string[],
  styles: Record<string, SchemeStyle> | undefined,
  xRight: number,
  yTop: number,
): string[] {
  const body: string[] = [];
  schemes.forEach((scheme, i) => {
    const style = styleFor(scheme, styles, i);
    const y = yTop + 16 * i;
    body.push(
      el("line", {
        x1: xRight - 150,
        y1: y,
        x2: xRight - 122,
        y2: y,
        stroke: style.color,
        "stroke-width": 2,
        ...(style.dash ? { "stroke-dasharray": style.dash } : {}),
      }),
      text(xRight - 116, y + 4, style.label, { fill: "#111111" }),
    );
  });
  return body;
}

function tickLabel(v: number): string {
  const rounded = Math.round(v * 1e6) / 1e6;
  return String(rounded);
}

/** One error curve per scheme over the strike grid, with a zero line. */
export function renderErrorVsStrike(rows: SweepRow[], options: FigureOptions = {}): string {
  if (rows.length === 0) throw new Error("error-vs-strike: no rows to plot");
  const nValues = [...new Set(rows.map((r) => r.n))].sort((a, b) => a - b);
  let filtered = rows;
  if (options.nFilter !== undefined) {
    filtered = rows.filter((r) => r.n === options.nFilter);
    if (filtered.length === 0) {
      throw new Error(`error-vs-strike: no rows with n=${options.nFilter}`);
    }
  } else if (nValues.length > 1) {
    throw new Error(
      `error-vs-strike: rows mix n values {${nValues.join(", ")}}; pass an n filter`,
    );
  }
  const width = options.width ?? 640;
  const height = options.height ?? 400;
  const schemes = orderedSchemes(filtered);
  const strikes = filtered.map((r) => r.K);
  const errors = filtered.map((r) => r.error);
  const x = linearScale(padded(Math.min(...strikes), Math.max(...strikes), 0.03), [
    MARGIN.left,
    width - MARGIN.right,
  ]);
  const y = linearScale(padded(Math.min(0, ...errors), Math.max(0, ...errors)), [
    height - MARGIN.bottom,
    MARGIN.top,
  ]);
  const body: string[] = axes(
    x,
    y,
    ticks(x.domain[0], x.domain[1], 8),
    ticks(y.domain[0], y.domain[1], 6),
    "strike K",
    "benchmark - estimate",
    tickLabel,
  );
  body.push(
    el("line", {
      x1: x.range[0],
      y1: y(0),
      x2: x.range[1],
      y2: y(0),
      stroke: "#999999",
      "stroke-width": 1.2,
      "stroke-dasharray": "2 3",
      id: "zero-line",
    }),
  );
  schemes.forEach((scheme, i) => {
    const style = styleFor(scheme, options.styles, i);
    const points = filtered
      .filter((r) => r.scheme === scheme)
      .sort((a, b) => a.K - b.K)
      .map((r): [number, number] => [x(r.K), y(r.error)]);
    body.push(
      el("g", { id: `scheme-${scheme}` }, [
        polyline(points, {
          stroke: style.color,
          "stroke-width": 2,
          ...(style.dash ? { "stroke-dasharray": style.dash } : {}),
        }),
        ...points.map(([px, py]) =>
          el("circle", { cx: px, cy: py, r: 2.5, fill: style.color }),
        ),
      ]),
    );
  });
  body.push(...legend(schemes, options.styles, width - MARGIN.right, MARGIN.top + 6));
  const title =
    options.title ??
    (options.nFilter !== undefined ? `estimation error, n=${options.nFilter}` : "estimation error");
  body.push(text(MARGIN.left, 20, title, { "font-size": 13, fill: "#111111" }));
  return document(width, height, body);
}

function leastSquares(points: Array<[number, number]>): { slope: number; intercept: number } {
  const n = points.length;
  const mx = points.reduce((acc, p) => acc + p[0], 0) / n;
  const my = points.reduce((acc, p) => acc + p[1], 0) / n;
  let sxx = 0;
  let sxy = 0;
  for (const [px, py] of points) {
    sxx += (px - mx) * (px - mx);
    sxy += (px - mx) * (py - my);
  }
  const slope = sxy / sxx;
  return { slope, intercept: my - slope * mx };
}

const LOG2 = Math.log2;

/** log2-log2 sup-error vs n per scheme, with fitted-slope annotations. */
export function renderConvergence(rows: SupRow[], options: FigureOptions = {}): string {
  if (rows.length === 0) throw new Error("loglog-convergence: no rows to plot");
  const warn = options.warn ?? ((message: string) => process.stderr.write(message + "\n"));
  const usable = rows.filter((r) => {
    if (r.sup_error > 0) return true;
    warn(`dropping non-positive sup_error for ${r.scheme} at n=${r.n}`);
    return false;
  });
  if (usable.length === 0) throw new Error("loglog-convergence: no positive errors left");
  const width = options.width ?? 480;
  const height = options.height ?? 400;
  const schemes = orderedSchemes(usable);
  const xs = usable.map((r) => LOG2(r.n));
  const ys = usable.map((r) => LOG2(r.sup_error));
  const x = linearScale(padded(Math.min(...xs), Math.max(...xs), 0.08), [
    MARGIN.left,
    width - MARGIN.right,
  ]);
  const y = linearScale(padded(Math.min(...ys), Math.max(...ys), 0.1), [
    height - MARGIN.bottom,
    MARGIN.top,
  ]);
  const nTicks = [...new Set(usable.map((r) => r.n))].sort((a, b) => a - b);
  const body: string[] = axes(
    x,
    y,
    nTicks.map(LOG2),
    ticks(y.domain[0], y.domain[1], 6),
    "steps n (log2 axis)",
    "log2 sup-over-K |error|",
    tickLabel,
    (v) => tickLabel(2 ** v),
  );
  schemes.forEach((scheme, i) => {
    const style = styleFor(scheme, options.styles, i);
    const schemeRows = usable
      .filter((r) => r.scheme === scheme)
      .sort((a, b) => a.n - b.n);
    const points = schemeRows.map(
      (r): [number, number] => [x(LOG2(r.n)), y(LOG2(r.sup_error))],
    );
    const children = [
      polyline(points, {
        stroke: style.color,
        "stroke-width": 2,
        ...(style.dash ? { "stroke-dasharray": style.dash } : {}),
      }),
      ...points.map(([px, py]) =>
        el("circle", { cx: px, cy: py, r: 3, fill: style.color }),
      ),
    ];
    if (schemeRows.length >= 2) {
      const fit = leastSquares(schemeRows.map((r) => [LOG2(r.n), LOG2(r.sup_error)]));
      const last = points[points.length - 1];
      children.push(
        text(last[0] + 6, last[1] - 6, `slope ${fit.slope.toFixed(2)}`, {
          fill: style.color,
          id: `slope-${scheme}`,
        }),
      );
    }
    body.push(el("g", { id: `scheme-${scheme}` }, children));
  });
  body.push(...legend(schemes, options.styles, width - MARGIN.right, MARGIN.top + 6));
  body.push(
    text(MARGIN.left, 20, options.title ?? "weak convergence", {
      "font-size": 13,
      fill: "#111111",
    }),
  );
  return document(width, height, body);
}
