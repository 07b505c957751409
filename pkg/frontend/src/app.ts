/**
 * Application shell: wires the client, the timeline editor, and the chart
 * into one event-driven state machine. No DOM here either; a thin render
 * layer can display `status`, `banner`, `inlineError`, and `view.svg`
 * directly.
 *
 * Concurrency: one scenario request counts at a time. Submissions are
 * numbered; a response is applied only when it belongs to the newest
 * submission, so the view always reflects the latest completed request
 * and stale responses are dropped. The previous view stays on screen
 * until a newer one lands.
 */

import { renderChart, type Series } from "./chart.js";
import { ServiceClient, ServiceError } from "./client.js";
import { TimelineEditor } from "./editor.js";
import type { Meta, ScenarioResponse } from "./protocol.js";

export type AppStatus = "idle" | "loading-meta" | "meta-error" | "ready" | "submitting";

export interface ScenarioView {
  factual: Series[];
  counterfactual: Series[];
  delta: Series[];
  /** Headline: average outcome change over all agents and rendered days. */
  meanDelta: number;
  latencyMs: number;
  svg: string;
}

function toSeries(agents: readonly string[], matrix: number[][]): Series[] {
  return agents.map((agent, i) => ({ agent, values: [...matrix[i]!] }));
}

function mean(matrix: number[][]): number {
  let total = 0;
  let count = 0;
  for (const row of matrix) {
    for (const v of row) {
      total += v;
      count += 1;
    }
  }
  return count === 0 ? 0 : total / count;
}

export class ScenarioApp {
  status: AppStatus = "idle";
  /** Set while meta cannot be loaded; cleared by a successful retry. */
  banner: string | null = null;
  /** Set when a submission fails; the view keeps its previous content. */
  inlineError: string | null = null;
  view: ScenarioView | null = null;
  meta: Meta | null = null;
  editor: TimelineEditor | null = null;

  private submitSeq = 0;

  constructor(
    private readonly client: ServiceClient,
    private readonly clock: () => number = Date.now,
  ) {}

  /** Load /meta and the factual baseline; populates pickers and the initial view. */
  async start(): Promise<void> {
    this.status = "loading-meta";
    this.banner = null;
    try {
      const meta = await this.client.getMeta();
      const began = this.clock();
      const baseline = await this.client.postScenario(meta.max_horizon, [], meta.agents.length);
      this.meta = meta;
      this.editor = new TimelineEditor(meta, baseline.edited_schedule);
      this.view = this.buildView(meta, baseline, this.clock() - began);
      this.status = "ready";
    } catch (failure) {
      this.status = "meta-error";
      this.banner = `service unavailable: ${(failure as Error).message}`;
    }
  }

  /** Re-attempt the initial load after a banner. */
  async retry(): Promise<void> {
    await this.start();
  }

  /**
   * Submit the pending script at the chosen horizon. Resolves to the new
   * view, or null when the response was superseded or the service
   * rejected the request (the old view stays either way).
   */
  async submit(): Promise<ScenarioView | null> {
    if (this.meta === null || this.editor === null) {
      throw new Error("submit before start");
    }
    const token = ++this.submitSeq;
    this.status = "submitting";
    this.inlineError = null;
    const began = this.clock();
    try {
      const response = await this.client.postScenario(
        this.editor.horizon,
        this.editor.pendingScript(),
        this.meta.agents.length,
      );
      if (token !== this.submitSeq) return null;
      this.view = this.buildView(this.meta, response, this.clock() - began);
      this.status = "ready";
      return this.view;
    } catch (failure) {
      if (token !== this.submitSeq) return null;
      this.status = "ready";
      this.inlineError =
        failure instanceof ServiceError
          ? `${failure.body.code}: ${failure.body.message}`
          : `request failed: ${(failure as Error).message}`;
      return null;
    }
  }

  private buildView(meta: Meta, response: ScenarioResponse, latencyMs: number): ScenarioView {
    const factual = toSeries(meta.agents, response.factual);
    const counterfactual = toSeries(meta.agents, response.counterfactual);
    const delta = toSeries(meta.agents, response.delta);
    return {
      factual,
      counterfactual,
      delta,
      meanDelta: mean(response.delta),
      latencyMs,
      svg: renderChart({ factual, counterfactual, delta }),
    };
  }
}
