import { describe, expect, it } from "vitest";

import { ScenarioApp } from "../src/app.js";
import { ServiceClient, type Transport, type TransportResponse } from "../src/client.js";
import { pointCounts } from "../src/chart.js";

const META = {
  agents: ["north", "south"],
  treatments: ["chemo", "radio"],
  n_steps: 36,
  obs_len: 6,
  max_horizon: 30,
};

function scenarioBodyFor(horizon: number, fill: number): string {
  const row = Array.from({ length: horizon }, (_, i) => fill + i);
  return JSON.stringify({
    factual: [row, row],
    counterfactual: [row.map((v) => v + 1), row.map((v) => v + 1)],
    delta: [row.map(() => 1), row.map(() => 1)],
    edited_schedule: Array.from({ length: horizon }, () => [
      [0, 0],
      [0, 0],
    ]),
  });
}

function emptyScenarioBody(horizon: number): string {
  const row = Array.from({ length: horizon }, (_, i) => 2 * i);
  return JSON.stringify({
    factual: [row, row],
    counterfactual: [row, row],
    delta: [row.map(() => 0), row.map(() => 0)],
    edited_schedule: Array.from({ length: horizon }, () => [
      [0, 0],
      [0, 0],
    ]),
  });
}

function simpleService(): Transport {
  return async ({ method, path, body }) => {
    if (method === "GET" && path === "/meta") return { status: 200, body: JSON.stringify(META) };
    if (method === "POST" && path === "/scenario") {
      const request = JSON.parse(body!) as { horizon: number; script: unknown[] };
      const payload =
        request.script.length === 0
          ? emptyScenarioBody(request.horizon)
          : scenarioBodyFor(request.horizon, 5);
      return { status: 200, body: payload };
    }
    return { status: 404, body: JSON.stringify({ code: "not_found", message: path, location: null }) };
  };
}

describe("start", () => {
  it("loads meta, populates the editor, and renders a zero-delta baseline", async () => {
    const app = new ScenarioApp(new ServiceClient(simpleService()));
    await app.start();
    expect(app.status).toBe("ready");
    expect(app.meta?.agents).toEqual(["north", "south"]);
    expect(app.editor?.selectedAgents()).toEqual(["north", "south"]);
    expect(app.view?.meanDelta).toBe(0);
    expect(app.view?.delta.every((s) => s.values.every((v) => v === 0))).toBe(true);
    for (const [, count] of pointCounts(app.view!.svg)) expect(count).toBe(30);
  });

  it("shows a banner on failure and recovers on retry", async () => {
    let up = false;
    const flaky: Transport = async (request) => {
      if (!up) throw new Error("connection refused");
      return simpleService()(request);
    };
    const app = new ScenarioApp(new ServiceClient(flaky));
    await app.start();
    expect(app.status).toBe("meta-error");
    expect(app.banner).toMatch(/service unavailable/);
    expect(app.view).toBeNull();
    up = true;
    await app.retry();
    expect(app.status).toBe("ready");
    expect(app.banner).toBeNull();
  });
});

describe("submit", () => {
  it("replaces the view and computes the headline delta", async () => {
    const app = new ScenarioApp(new ServiceClient(simpleService()));
    await app.start();
    app.editor!.setHorizon(14);
    app.editor!.dragShift("chemo", 0);
    const view = await app.submit();
    expect(view).not.toBeNull();
    expect(app.view).toBe(view);
    expect(view!.factual[0]!.values).toHaveLength(14);
    expect(view!.meanDelta).toBe(0);
  });

  it("returns identical renders for identical submissions", async () => {
    const app = new ScenarioApp(new ServiceClient(simpleService()), () => 0);
    await app.start();
    const first = await app.submit();
    const second = await app.submit();
    expect(second!.svg).toBe(first!.svg);
  });

  it("keeps the previous view and reports inline on service errors", async () => {
    let fail = false;
    const transport: Transport = async (request) => {
      if (fail && request.path === "/scenario") {
        return {
          status: 400,
          body: JSON.stringify({ code: "bad_request", message: "horizon out of range", location: null }),
        };
      }
      return simpleService()(request);
    };
    const app = new ScenarioApp(new ServiceClient(transport));
    await app.start();
    const good = await app.submit();
    fail = true;
    const bad = await app.submit();
    expect(bad).toBeNull();
    expect(app.view).toBe(good);
    expect(app.inlineError).toBe("bad_request: horizon out of range");
    expect(app.status).toBe("ready");
  });

  it("drops stale responses when a newer submission exists", async () => {
    const pending: Array<(r: TransportResponse) => void> = [];
    const gate: Transport = async (request) => {
      if (request.method === "POST" && request.path === "/scenario") {
        const parsed = JSON.parse(request.body!) as { script: unknown[] };
        if (parsed.script.length > 0) {
          return new Promise<TransportResponse>((resolve) => pending.push(resolve));
        }
      }
      return simpleService()(request);
    };
    const app = new ScenarioApp(new ServiceClient(gate));
    await app.start();
    app.editor!.dragShift("chemo", -2);
    const first = app.submit();
    const second = app.submit();
    expect(pending).toHaveLength(2);
    // Resolve in reverse order: the older response arrives last.
    pending[1]!({ status: 200, body: scenarioBodyFor(30, 100) });
    const secondView = await second;
    pending[0]!({ status: 200, body: scenarioBodyFor(30, 5) });
    const firstView = await first;
    expect(firstView).toBeNull();
    expect(secondView).not.toBeNull();
    expect(app.view).toBe(secondView);
    expect(app.view!.factual[0]!.values[0]).toBe(100);
  });

  it("throws when called before start", async () => {
    const app = new ScenarioApp(new ServiceClient(simpleService()));
    await expect(app.submit()).rejects.toThrowError(/before start/);
  });
});
