/**
 * Pure SVG rendering of a scenario view: overlaid factual and
 * counterfactual trajectories per agent, plus a delta strip underneath.
 *
 * No DOM, no fabrication: every polyline point maps one service value at
 * observation-day granularity, so each series renders exactly `horizon`
 * points.
 */

export interface Series {
  agent: string;
  values: number[];
}

export interface ChartInput {
  factual: Series[];
  counterfactual: Series[];
  delta: Series[];
}

export interface ChartOptions {
  width?: number;
  height?: number;
  /** Height of the delta strip inside the total height. */
  stripHeight?: number;
  padding?: number;
}

function extent(series: readonly Series[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const s of series) {
    for (const v of s.values) {
      lo = Math.min(lo, v);
      hi = Math.max(hi, v);
    }
  }
  if (!Number.isFinite(lo)) return [0, 1];
  if (lo === hi) return [lo - 0.5, hi + 0.5];
  return [lo, hi];
}

function points(
  values: readonly number[],
  x0: number,
  x1: number,
  y0: number,
  y1: number,
  lo: number,
  hi: number,
): string {
  const n = values.length;
  return values
    .map((v, i) => {
      const x = n === 1 ? (x0 + x1) / 2 : x0 + ((x1 - x0) * i) / (n - 1);
      const y = y1 - ((y1 - y0) * (v - lo)) / (hi - lo);
      return `${x.toFixed(2)},${y.toFixed(2)}`;
    })
    .join(" ");
}

function polyline(kind: string, agent: string, pts: string): string {
  return `<polyline class="${kind}" data-agent="${agent}" fill="none" points="${pts}"/>`;
}

/** Render the view to an SVG string. Series must share one length (the horizon). */
export function renderChart(input: ChartInput, options: ChartOptions = {}): string {
  const width = options.width ?? 640;
  const height = options.height ?? 360;
  const stripHeight = options.stripHeight ?? 80;
  const padding = options.padding ?? 8;
  const lengths = new Set(
    [...input.factual, ...input.counterfactual, ...input.delta].map((s) => s.values.length),
  );
  if (lengths.size > 1) {
    throw new Error(`series lengths differ: ${[...lengths].sort((a, b) => a - b).join(", ")}`);
  }
  const mainBottom = height - stripHeight - padding;
  const [lo, hi] = extent([...input.factual, ...input.counterfactual]);
  const [dlo, dhi] = extent(input.delta);
  const body: string[] = [];
  for (const s of input.factual) {
    body.push(polyline("factual", s.agent, points(s.values, padding, width - padding, padding, mainBottom, lo, hi)));
  }
  for (const s of input.counterfactual) {
    body.push(
      polyline("counterfactual", s.agent, points(s.values, padding, width - padding, padding, mainBottom, lo, hi)),
    );
  }
  for (const s of input.delta) {
    body.push(
      polyline(
        "delta",
        s.agent,
        points(s.values, padding, width - padding, mainBottom + padding, height - padding, dlo, dhi),
      ),
    );
  }
  return `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}">${body.join("")}</svg>`;
}

/** Count the coordinate pairs of every polyline in a rendered chart, keyed by class and agent. */
export function pointCounts(svg: string): Map<string, number> {
  const counts = new Map<string, number>();
  const pattern = /<polyline class="([^"]+)" data-agent="([^"]+)"[^>]*points="([^"]*)"/g;
  for (const match of svg.matchAll(pattern)) {
    const pts = match[3]!.trim();
    counts.set(`${match[1]}:${match[2]}`, pts === "" ? 0 : pts.split(/\s+/).length);
  }
  return counts;
}
