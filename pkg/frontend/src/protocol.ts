/**
 * Wire protocol for the scenario service.
 *
 * Mirrors the server's contract exactly: response shapes for /meta,
 * /factual and /scenario, the script edit grammar, and the canonical
 * serialized form of a script. Keep this file dependency-free; everything
 * else builds on it.
 */

/** Response of GET /meta. */
export interface Meta {
  agents: string[];
  treatments: string[];
  n_steps: number;
  obs_len: number;
  max_horizon: number;
}

/** Response of GET /factual?horizon=M: one series of M values per agent. */
export interface FactualResponse {
  series: number[][];
}

/** Response of POST /scenario. Series are [agent][day]; the schedule is [day][agent][treatment]. */
export interface ScenarioResponse {
  factual: number[][];
  counterfactual: number[][];
  delta: number[][];
  edited_schedule: number[][][];
}

/** Error body every non-2xx response carries. */
export interface ServiceErrorBody {
  code: string;
  message: string;
  location: string | null;
  trace_id?: string;
}

/** Either every agent or an explicit list of names / indices. */
export type AgentSelector = "all" | Array<string | number>;

export interface RemoveEdit {
  op: "remove";
  treatment: string | number;
  agents: AgentSelector;
  window?: [number, number];
}

export interface ShiftEdit {
  op: "shift";
  treatment: string | number;
  agents: AgentSelector;
  deltaDays: number;
}

export interface ReorderEdit {
  op: "reorder";
  first: string | number;
  second: string | number;
  agents: AgentSelector;
  gapDays: number;
}

export interface SetEdit {
  op: "set";
  treatment: string | number;
  agents: AgentSelector;
  window: [number, number];
  value: 0 | 1;
}

export type Edit = RemoveEdit | ShiftEdit | ReorderEdit | SetEdit;

/** Structural problem in a script; `location` points at the offending node. */
export class ScriptError extends Error {
  constructor(
    message: string,
    readonly location: string,
  ) {
    super(message);
    this.name = "ScriptError";
  }
}

const ALLOWED_KEYS: Record<string, ReadonlySet<string>> = {
  remove: new Set(["op", "treatment", "agents", "window"]),
  shift: new Set(["op", "treatment", "agents", "delta_days"]),
  reorder: new Set(["op", "treatment", "agents", "gap"]),
  set: new Set(["op", "treatment", "agents", "window", "value"]),
};

function isInt(value: unknown): value is number {
  return typeof value === "number" && Number.isInteger(value);
}

function parseWindow(raw: unknown, location: string): [number, number] {
  if (!Array.isArray(raw) || raw.length !== 2 || !raw.every(isInt)) {
    throw new ScriptError(`window must be two integers [start, stop), got ${JSON.stringify(raw)}`, location);
  }
  const [start, stop] = raw as [number, number];
  if (stop < start) {
    throw new ScriptError(`window stop ${stop} precedes start ${start}`, location);
  }
  return [start, stop];
}

function parseAgents(raw: unknown, location: string): AgentSelector {
  if (raw === undefined || raw === "all") return "all";
  if (Array.isArray(raw) && raw.every((a) => typeof a === "string" || isInt(a))) {
    return raw as Array<string | number>;
  }
  throw new ScriptError(`agents must be "all" or a list of names/indices, got ${JSON.stringify(raw)}`, location);
}

function requireKey(entry: Record<string, unknown>, key: string, location: string): unknown {
  if (!(key in entry)) {
    throw new ScriptError(`missing key '${key}'`, `${location}.${key}`);
  }
  return entry[key];
}

function parseTreatment(raw: unknown, location: string): string | number {
  if (typeof raw === "string" || isInt(raw)) return raw;
  throw new ScriptError(`treatment must be a name or index, got ${JSON.stringify(raw)}`, location);
}

/** Parse and structurally validate a script (a list of edit objects). */
export function parseScript(entries: unknown): Edit[] {
  if (!Array.isArray(entries)) {
    throw new ScriptError(`script must be a list of edits, got ${typeof entries}`, "script");
  }
  return entries.map((entry, i) => {
    const location = `script[${i}]`;
    if (typeof entry !== "object" || entry === null || Array.isArray(entry)) {
      throw new ScriptError("each edit must be an object", location);
    }
    const record = entry as Record<string, unknown>;
    const op = requireKey(record, "op", location);
    if (typeof op !== "string" || !(op in ALLOWED_KEYS)) {
      throw new ScriptError(`unknown op ${JSON.stringify(op)}`, `${location}.op`);
    }
    const allowed = ALLOWED_KEYS[op]!;
    const extra = Object.keys(record).filter((k) => !allowed.has(k));
    if (extra.length > 0) {
      throw new ScriptError(`unexpected keys ${JSON.stringify(extra.sort())} for op '${op}'`, location);
    }
    const agents = parseAgents(record.agents, `${location}.agents`);
    if (op === "remove") {
      const edit: RemoveEdit = {
        op,
        treatment: parseTreatment(requireKey(record, "treatment", location), `${location}.treatment`),
        agents,
      };
      if ("window" in record) edit.window = parseWindow(record.window, `${location}.window`);
      return edit;
    }
    if (op === "shift") {
      const delta = requireKey(record, "delta_days", location);
      if (!isInt(delta)) {
        throw new ScriptError(`delta_days must be an integer, got ${JSON.stringify(delta)}`, `${location}.delta_days`);
      }
      return {
        op,
        treatment: parseTreatment(requireKey(record, "treatment", location), `${location}.treatment`),
        agents,
        deltaDays: delta,
      } satisfies ShiftEdit;
    }
    if (op === "reorder") {
      const pair = requireKey(record, "treatment", location);
      if (!Array.isArray(pair) || pair.length !== 2) {
        throw new ScriptError("reorder needs treatment: [first, second]", `${location}.treatment`);
      }
      const gap = requireKey(record, "gap", location);
      if (!isInt(gap) || gap < 0) {
        throw new ScriptError(`gap must be a nonnegative integer, got ${JSON.stringify(gap)}`, `${location}.gap`);
      }
      return {
        op,
        first: parseTreatment(pair[0], `${location}.treatment`),
        second: parseTreatment(pair[1], `${location}.treatment`),
        agents,
        gapDays: gap,
      } satisfies ReorderEdit;
    }
    const window = parseWindow(requireKey(record, "window", location), `${location}.window`);
    const value = requireKey(record, "value", location);
    if (value !== 0 && value !== 1) {
      throw new ScriptError(`value must be 0 or 1, got ${JSON.stringify(value)}`, `${location}.value`);
    }
    return {
      op: "set",
      treatment: parseTreatment(requireKey(record, "treatment", location), `${location}.treatment`),
      agents,
      window,
      value,
    } satisfies SetEdit;
  });
}

/**
 * Serialize edits to plain wire objects. Key order is canonical so the
 * same script always produces the same bytes under `scriptBody`.
 */
export function serializeScript(edits: readonly Edit[]): Array<Record<string, unknown>> {
  return edits.map((edit) => {
    switch (edit.op) {
      case "remove": {
        const entry: Record<string, unknown> = { op: "remove", treatment: edit.treatment, agents: edit.agents };
        if (edit.window !== undefined) entry.window = [...edit.window];
        return entry;
      }
      case "shift":
        return { op: "shift", treatment: edit.treatment, agents: edit.agents, delta_days: edit.deltaDays };
      case "reorder":
        return { op: "reorder", treatment: [edit.first, edit.second], agents: edit.agents, gap: edit.gapDays };
      case "set":
        return { op: "set", treatment: edit.treatment, agents: edit.agents, window: [...edit.window], value: edit.value };
    }
  });
}

/** Canonical POST /scenario body bytes for a horizon and script. */
export function scenarioBody(horizon: number, edits: readonly Edit[]): string {
  return JSON.stringify({ horizon, script: serializeScript(edits) });
}
