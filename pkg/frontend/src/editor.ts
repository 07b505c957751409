/**
 * Timeline edit state: pickers, drag-editable treatment intervals, and the
 * pending script derived from gestures.
 *
 * The editor is DOM-free. It holds the factual prediction-window schedule
 * as an immutable baseline, records gestures as script edits, and derives
 * interval lanes by replaying those edits locally with the same semantics
 * the service applies (shift translates runs with boundary clipping,
 * remove zeroes, reorder rigidly moves both timelines, set paints a
 * window). The local replay is a preview: the service's edited_schedule in
 * the scenario response stays the source of truth after a submit.
 *
 * Day coordinates are absolute panel days. The observation window is not
 * exposed by the service, so lanes cover [obs_len, n_steps) and anything
 * shifted before obs_len leaves the visible range, exactly as it does in
 * the service's merged schedule.
 */

import type { AgentSelector, Edit, Meta } from "./protocol.js";

/** Half-open day range [start, stop). */
export interface Interval {
  start: number;
  stop: number;
}

function runsOf(column: readonly number[], offset: number): Interval[] {
  const runs: Interval[] = [];
  let start = -1;
  for (let i = 0; i <= column.length; i++) {
    const active = i < column.length && column[i] !== 0;
    if (active && start < 0) start = i;
    if (!active && start >= 0) {
      runs.push({ start: start + offset, stop: i + offset });
      start = -1;
    }
  }
  return runs;
}

function shiftColumn(column: number[], delta: number): number[] {
  const out = new Array<number>(column.length).fill(0);
  for (const run of runsOf(column, 0)) {
    const start = Math.max(0, run.start + delta);
    const stop = Math.min(column.length, run.stop + delta);
    for (let i = start; i < stop; i++) out[i] = 1;
  }
  return out;
}

function clampWindow(window: [number, number], steps: number): [number, number] {
  const start = Math.min(Math.max(window[0], 0), steps);
  const stop = Math.min(Math.max(window[1], start), steps);
  return [start, stop];
}

export class TimelineEditor {
  private readonly edits: Edit[] = [];
  private selected: string[];
  private horizonDays: number;

  constructor(
    readonly meta: Meta,
    /** Factual schedule over the full prediction window: [day][agent][treatment]. */
    private readonly baseline: ReadonlyArray<ReadonlyArray<ReadonlyArray<number>>>,
  ) {
    if (baseline.length !== meta.max_horizon) {
      throw new Error(`baseline schedule covers ${baseline.length} days, expected ${meta.max_horizon}`);
    }
    this.selected = [...meta.agents];
    this.horizonDays = meta.max_horizon;
  }

  get horizon(): number {
    return this.horizonDays;
  }

  /** Clamp into [1, max_horizon] and return the value actually set. */
  setHorizon(days: number): number {
    this.horizonDays = Math.min(Math.max(Math.trunc(days), 1), this.meta.max_horizon);
    return this.horizonDays;
  }

  selectedAgents(): string[] {
    return [...this.selected];
  }

  selectAgents(names: readonly string[]): void {
    for (const name of names) {
      if (!this.meta.agents.includes(name)) {
        throw new Error(`unknown agent ${JSON.stringify(name)}`);
      }
    }
    if (names.length === 0) {
      throw new Error("at least one agent must stay selected");
    }
    this.selected = [...names];
  }

  private selection(): AgentSelector {
    return this.selected.length === this.meta.agents.length ? "all" : [...this.selected];
  }

  private treatmentIndex(treatment: string | number): number {
    const index = typeof treatment === "number" ? treatment : this.meta.treatments.indexOf(treatment);
    if (index < 0 || index >= this.meta.treatments.length) {
      throw new Error(`unknown treatment ${JSON.stringify(treatment)}`);
    }
    return index;
  }

  /** One agent's 0/1 column for a treatment over [0, n_steps), edits applied. */
  private column(agent: string, treatment: number, edits: readonly Edit[]): number[] {
    const agentIndex = this.meta.agents.indexOf(agent);
    const columns = this.meta.treatments.map((_, k) => {
      const column = new Array<number>(this.meta.n_steps).fill(0);
      for (let day = 0; day < this.baseline.length; day++) {
        column[this.meta.obs_len + day] = this.baseline[day]![agentIndex]![k]!;
      }
      return column;
    });
    for (const edit of edits) {
      if (edit.agents !== "all" && !edit.agents.some((a) => a === agent || a === agentIndex)) continue;
      if (edit.op === "remove") {
        const [start, stop] =
          edit.window === undefined ? [0, this.meta.n_steps] : clampWindow(edit.window, this.meta.n_steps);
        columns[this.treatmentIndex(edit.treatment)]!.fill(0, start, stop);
      } else if (edit.op === "shift") {
        const k = this.treatmentIndex(edit.treatment);
        columns[k] = shiftColumn(columns[k]!, edit.deltaDays);
      } else if (edit.op === "reorder") {
        const first = this.treatmentIndex(edit.first);
        const second = this.treatmentIndex(edit.second);
        const firstRuns = runsOf(columns[first]!, 0);
        const secondRuns = runsOf(columns[second]!, 0);
        if (firstRuns.length > 0 && secondRuns.length > 0) {
          const target = Math.min(firstRuns[0]!.start, secondRuns[0]!.start);
          columns[first] = shiftColumn(columns[first]!, target - firstRuns[0]!.start);
          columns[second] = shiftColumn(columns[second]!, target + edit.gapDays - secondRuns[0]!.start);
        }
      } else {
        const [start, stop] = clampWindow(edit.window, this.meta.n_steps);
        columns[this.treatmentIndex(edit.treatment)]!.fill(edit.value, start, stop);
      }
    }
    return columns[treatment]!;
  }

  /** Active intervals for one lane, restricted to the visible prediction window. */
  intervalsFor(agent: string, treatment: string | number): Interval[] {
    const column = this.column(agent, this.treatmentIndex(treatment), this.edits);
    return runsOf(column.slice(this.meta.obs_len), this.meta.obs_len);
  }

  /**
   * Drag a treatment's timeline by whole days. The delta is clipped so no
   * visible interval of a selected agent leaves [0, n_steps); returns the
   * delta actually recorded (0 means the drag was a no-op).
   */
  dragShift(treatment: string | number, deltaDays: number): number {
    const k = this.treatmentIndex(treatment);
    let low = -this.meta.n_steps;
    let high = this.meta.n_steps;
    for (const agent of this.selected) {
      for (const run of runsOf(this.column(agent, k, this.edits), 0)) {
        low = Math.max(low, -run.start);
        high = Math.min(high, this.meta.n_steps - run.stop);
      }
    }
    const delta = Math.min(Math.max(Math.trunc(deltaDays), low), high);
    if (delta !== 0) {
      this.edits.push({ op: "shift", treatment, agents: this.selection(), deltaDays: delta });
    }
    return delta;
  }

  /** Remove a treatment inside a window, or everywhere when no window given. */
  deleteInterval(treatment: string | number, window?: [number, number]): void {
    this.treatmentIndex(treatment);
    const edit: Edit = { op: "remove", treatment, agents: this.selection() };
    if (window !== undefined) edit.window = clampWindow(window, this.meta.n_steps);
    this.edits.push(edit);
  }

  /** Make `first` start where the earlier of the two starts, `second` follow after a gap. */
  reorderTreatments(first: string | number, second: string | number, gapDays: number): void {
    this.treatmentIndex(first);
    this.treatmentIndex(second);
    if (!Number.isInteger(gapDays) || gapDays < 0) {
      throw new Error(`gap must be a nonnegative integer, got ${gapDays}`);
    }
    this.edits.push({ op: "reorder", first, second, agents: this.selection(), gapDays });
  }

  /** Paint a window of a treatment lane to on (1) or off (0). */
  paintInterval(treatment: string | number, window: [number, number], value: 0 | 1): void {
    this.treatmentIndex(treatment);
    this.edits.push({ op: "set", treatment, agents: this.selection(), window: clampWindow(window, this.meta.n_steps), value });
  }

  /** The pending script: every recorded gesture, in order. */
  pendingScript(): Edit[] {
    return this.edits.map((edit) => ({ ...edit }));
  }

  /** Drop all pending edits; lanes return to the factual schedule exactly. */
  reset(): void {
    this.edits.length = 0;
  }
}
