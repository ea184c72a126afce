// Typed client over the service's JSON API.
//
// Every call resolves to an envelope rather than throwing: `ok` carries the
// parsed body plus the raw response text (the metrics panel renders raw
// tokens, never reformatted numbers); failures carry the structured
// {code, message, details} error. A network-level failure maps to status 0
// with code "unreachable" so the app can show its retry banner.

import type {
  ApiErrorBody,
  DecisionRecord,
  EvaluateResponse,
  JobRecord,
  RefineContext,
  ScenarioJson,
  SimulateResponse,
  TwinRecord,
} from "./types";

export type ApiResult<T> =
  | { ok: true; status: number; body: T; raw: string }
  | { ok: false; status: number; error: ApiErrorBody; raw: string };

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const UNREACHABLE: ApiErrorBody = {
  code: "unreachable",
  message: "service unreachable",
  details: [],
};

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<ApiResult<T>> {
    let response: Response;
    try {
      response = await this.fetchFn(this.base + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch {
      return { ok: false, status: 0, error: UNREACHABLE, raw: "" };
    }
    const raw = await response.text();
    let parsed: unknown = null;
    try {
      parsed = JSON.parse(raw);
    } catch {
      return {
        ok: false,
        status: response.status,
        error: { code: "bad-response", message: "response was not JSON", details: [] },
        raw,
      };
    }
    if (!response.ok) {
      const err = parsed as Partial<ApiErrorBody>;
      return {
        ok: false,
        status: response.status,
        error: {
          code: err.code ?? "error",
          message: err.message ?? `HTTP ${response.status}`,
          details: err.details ?? [],
        },
        raw,
      };
    }
    return { ok: true, status: response.status, body: parsed as T, raw };
  }

  listTwins(): Promise<ApiResult<{ twins: TwinRecord[] }>> {
    return this.request("GET", "/twins");
  }

  getTwin(id: string): Promise<ApiResult<TwinRecord>> {
    return this.request("GET", `/twins/${encodeURIComponent(id)}`);
  }

  simulate(req: {
    twin_id: string;
    plan: string;
    scenario: ScenarioJson;
    glucose?: number;
    dt?: number;
  }): Promise<ApiResult<SimulateResponse>> {
    return this.request("POST", "/simulate", req);
  }

  evaluate(req: {
    twin_id: string;
    plan: string;
    scenario: ScenarioJson;
    spec: string;
    glucose?: number;
    dt?: number;
  }): Promise<ApiResult<EvaluateResponse>> {
    return this.request("POST", "/evaluate", req);
  }

  refine(req: {
    twin_id: string;
    context: RefineContext;
    planner: "local" | "llm";
    budget: number;
    seed?: number;
  }): Promise<ApiResult<{ job_id: string }>> {
    return this.request("POST", "/refine", req);
  }

  job(id: string): Promise<ApiResult<JobRecord>> {
    return this.request("GET", `/jobs/${encodeURIComponent(id)}`);
  }

  decide(req: {
    twin_id: string;
    plan: string;
    verdict: "approved" | "rejected";
    note: string;
  }): Promise<ApiResult<DecisionRecord>> {
    return this.request("POST", "/decisions", req);
  }

  decisions(twinId: string): Promise<ApiResult<{ decisions: DecisionRecord[] }>> {
    return this.request("GET", `/decisions?twin_id=${encodeURIComponent(twinId)}`);
  }
}
