/** Thin fetch client for the serve API.
 *
 * Every call is cancellable through an AbortSignal so a view change can
 * drop in-flight requests; errors surface as thrown ApiError with the
 * server's message, never as a blank screen.
 */

import type {
  Finding,
  Flow,
  FlowIndexEntry,
  SeriesResponse,
  SpansResponse,
  StatesResponse,
  TreeResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async get<T>(path: string, params: Record<string, string | number>, signal?: AbortSignal): Promise<T> {
    const query = Object.entries(params)
      .map(([k, v]) => `${encodeURIComponent(k)}=${encodeURIComponent(String(v))}`)
      .join("&");
    const url = `${this.baseUrl}${path}${query ? "?" + query : ""}`;
    const resp = await fetch(url, { signal });
    const body = await resp.json();
    if (!resp.ok) {
      throw new ApiError(String((body as { error?: string }).error ?? resp.statusText), resp.status);
    }
    return body as T;
  }

  tree(signal?: AbortSignal): Promise<TreeResponse> {
    return this.get("/api/tree", {}, signal);
  }

  states(
    path: string,
    t0: number,
    t1: number,
    resolution = 0,
    signal?: AbortSignal,
  ): Promise<StatesResponse> {
    const params: Record<string, string | number> = { path, t0, t1 };
    if (resolution > 0) params.resolution = resolution;
    return this.get("/api/states", params, signal);
  }

  series(metric: string, bucketNs: number, signal?: AbortSignal): Promise<SeriesResponse> {
    return this.get("/api/series", { metric, bucket_ns: bucketNs }, signal);
  }

  findings(signal?: AbortSignal): Promise<Finding[]> {
    return this.get("/api/findings", {}, signal);
  }

  flowIndex(signal?: AbortSignal): Promise<{ flows: FlowIndexEntry[] }> {
    return this.get("/api/flows", {}, signal);
  }

  flow(id: string, signal?: AbortSignal): Promise<Flow> {
    return this.get("/api/flows", { id }, signal);
  }

  spans(t0?: number, t1?: number, signal?: AbortSignal): Promise<SpansResponse> {
    const params: Record<string, string | number> = {};
    if (t0 !== undefined) params.t0 = t0;
    if (t1 !== undefined) params.t1 = t1;
    return this.get("/api/spans", params, signal);
  }
}
