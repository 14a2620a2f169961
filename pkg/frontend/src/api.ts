// Typed client for the gateway HTTP API. Every method maps 1:1 onto a
// documented endpoint; the portal must never talk to anything else, and a
// recorded request log is the proof (see tests).

import type {
  BlueprintDoc,
  CatalogEntry,
  Deployment,
  EventFeed,
  TrustRecord,
} from "./types";

export interface RecordedRequest {
  method: string;
  path: string;
  body?: unknown;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    detail: string,
  ) {
    super(detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class GatewayClient {
  readonly log: RecordedRequest[] = [];

  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    this.log.push(body === undefined ? { method, path } : { method, path, body });
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.base + path, init);
    const text = await resp.text();
    const payload = text ? JSON.parse(text) : null;
    if (!resp.ok) {
      const code = payload && typeof payload === "object" ? (payload as any).error : "error";
      const detail = payload && typeof payload === "object" ? (payload as any).detail : text;
      throw new ApiError(resp.status, code ?? "error", detail ?? `HTTP ${resp.status}`);
    }
    return payload as T;
  }

  private async requestText(path: string): Promise<string> {
    this.log.push({ method: "GET", path });
    const resp = await this.fetchImpl(this.base + path, { method: "GET" });
    if (!resp.ok) {
      throw new ApiError(resp.status, "error", await resp.text());
    }
    return resp.text();
  }

  registerBlueprint(doc: BlueprintDoc): Promise<{ id: string; version: number }> {
    return this.request("POST", "/blueprints", doc);
  }

  createDeployment(blueprintId: string): Promise<Deployment> {
    return this.request("POST", "/deployments", { blueprint_id: blueprintId });
  }

  getDeployment(id: string): Promise<Deployment> {
    return this.request("GET", `/deployments/${id}`);
  }

  rechain(id: string, chainId: string, order: string[]): Promise<Deployment> {
    return this.request("POST", `/deployments/${id}/rechain`, {
      chain_id: chainId,
      order,
    });
  }

  teardown(id: string): Promise<Deployment> {
    return this.request("DELETE", `/deployments/${id}`);
  }

  rulesText(id: string): Promise<string> {
    return this.requestText(`/deployments/${id}/rules`);
  }

  catalogue(serviceType?: string): Promise<CatalogEntry[]> {
    const query = serviceType ? `?service_type=${encodeURIComponent(serviceType)}` : "";
    return this.request("GET", `/catalogue${query}`);
  }

  trustStatus(a: string, b: string): Promise<TrustRecord> {
    return this.request("GET", `/trust/${a}/${b}`);
  }

  events(since: number): Promise<EventFeed> {
    return this.request("GET", `/events?since=${since}`);
  }

  tick(now: number): Promise<{ events: unknown[] }> {
    return this.request("POST", "/tick", { now });
  }
}
