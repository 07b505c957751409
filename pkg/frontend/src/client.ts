/**
 * Typed client for the scenario service.
 *
 * The transport is injectable so tests (and the contract suite) can run
 * against an in-process mock; the default transport wraps global fetch.
 * Every response is structurally validated before it reaches the UI: the
 * UI never renders a number the service did not send.
 */

import type { Edit, FactualResponse, Meta, ScenarioResponse, ServiceErrorBody } from "./protocol.js";
import { scenarioBody } from "./protocol.js";

export interface TransportRequest {
  method: "GET" | "POST";
  path: string;
  body?: string;
}

export interface TransportResponse {
  status: number;
  body: string;
}

/** Minimal HTTP abstraction: resolve with any status, reject only on transport failure. */
export type Transport = (request: TransportRequest) => Promise<TransportResponse>;

/** The service answered with a non-2xx status and an error body. */
export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly body: ServiceErrorBody,
  ) {
    super(body.message);
    this.name = "ServiceError";
  }
}

/** The service could not be reached or answered with an unreadable body. */
export class UnreachableError extends Error {
  constructor(
    message: string,
    override readonly cause?: unknown,
  ) {
    super(message);
    this.name = "UnreachableError";
  }
}

export function fetchTransport(baseUrl: string): Transport {
  const root = baseUrl.replace(/\/+$/, "");
  return async ({ method, path, body }) => {
    const response = await fetch(root + path, {
      method,
      body,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
    });
    return { status: response.status, body: await response.text() };
  };
}

function isNumberMatrix(value: unknown, rows: number, cols: number): value is number[][] {
  return (
    Array.isArray(value) &&
    value.length === rows &&
    value.every((row) => Array.isArray(row) && row.length === cols && row.every((v) => typeof v === "number"))
  );
}

function decode(raw: TransportResponse): unknown {
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw.body);
  } catch (cause) {
    throw new UnreachableError(`service sent unparseable JSON (status ${raw.status})`, cause);
  }
  if (raw.status < 200 || raw.status >= 300) {
    const body = parsed as Partial<ServiceErrorBody>;
    if (typeof body?.code !== "string" || typeof body?.message !== "string") {
      throw new UnreachableError(`service sent status ${raw.status} without an error body`);
    }
    throw new ServiceError(raw.status, body as ServiceErrorBody);
  }
  return parsed;
}

export class ServiceClient {
  private readonly transport: Transport;

  constructor(transportOrBaseUrl: Transport | string) {
    this.transport =
      typeof transportOrBaseUrl === "string" ? fetchTransport(transportOrBaseUrl) : transportOrBaseUrl;
  }

  private async request(req: TransportRequest): Promise<unknown> {
    let raw: TransportResponse;
    try {
      raw = await this.transport(req);
    } catch (cause) {
      throw new UnreachableError("service unreachable", cause);
    }
    return decode(raw);
  }

  async getMeta(): Promise<Meta> {
    const body = (await this.request({ method: "GET", path: "/meta" })) as Partial<Meta>;
    if (
      !Array.isArray(body.agents) ||
      !Array.isArray(body.treatments) ||
      !Number.isInteger(body.n_steps) ||
      !Number.isInteger(body.obs_len) ||
      !Number.isInteger(body.max_horizon)
    ) {
      throw new UnreachableError("malformed /meta response");
    }
    return body as Meta;
  }

  async getFactual(horizon: number, agentCount: number): Promise<FactualResponse> {
    const body = (await this.request({
      method: "GET",
      path: `/factual?horizon=${horizon}`,
    })) as Partial<FactualResponse>;
    if (!isNumberMatrix(body.series, agentCount, horizon)) {
      throw new UnreachableError("malformed /factual response");
    }
    return body as FactualResponse;
  }

  async postScenario(horizon: number, edits: readonly Edit[], agentCount: number): Promise<ScenarioResponse> {
    const body = (await this.request({
      method: "POST",
      path: "/scenario",
      body: scenarioBody(horizon, edits),
    })) as Partial<ScenarioResponse>;
    if (
      !isNumberMatrix(body.factual, agentCount, horizon) ||
      !isNumberMatrix(body.counterfactual, agentCount, horizon) ||
      !isNumberMatrix(body.delta, agentCount, horizon) ||
      !Array.isArray(body.edited_schedule) ||
      body.edited_schedule.length !== horizon
    ) {
      throw new UnreachableError("malformed /scenario response");
    }
    return body as ScenarioResponse;
  }
}
