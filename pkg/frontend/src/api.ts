/**
 * Thin typed wrapper over the gateway's JSON endpoints.
 *
 * postDecision never throws on a 409: losing the decision race is an
 * expected outcome the view must render ("decision window closed"),
 * not an exception.
 */

import type {
  CreateSessionRequest,
  CreateSessionResponse,
  HealthResponse,
  SessionSnapshot,
} from "./types.js";

export interface DecisionOutcome {
  ok: boolean;
  status: number;
  detail: string | null;
}

async function readDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    // non-JSON error body
  }
  return `HTTP ${response.status}`;
}

export class GatewayApi {
  readonly baseUrl: string;
  private readonly fetchImpl: typeof fetch;

  constructor(baseUrl: string, fetchImpl: typeof fetch = fetch) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl;
  }

  eventsUrl(sessionId: string): string {
    return `${this.baseUrl}/v1/sessions/${sessionId}/events`;
  }

  async createSession(request: CreateSessionRequest): Promise<CreateSessionResponse> {
    const response = await this.fetchImpl(`${this.baseUrl}/v1/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!response.ok) {
      throw new Error(`create session failed: ${await readDetail(response)}`);
    }
    return (await response.json()) as CreateSessionResponse;
  }

  async getSession(sessionId: string): Promise<SessionSnapshot> {
    const response = await this.fetchImpl(`${this.baseUrl}/v1/sessions/${sessionId}`);
    if (!response.ok) {
      throw new Error(`get session failed: ${await readDetail(response)}`);
    }
    return (await response.json()) as SessionSnapshot;
  }

  async postDecision(sessionId: string, action: "continue" | "halt"): Promise<DecisionOutcome> {
    const response = await this.fetchImpl(`${this.baseUrl}/v1/sessions/${sessionId}/decision`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ action }),
    });
    if (response.ok) {
      return { ok: true, status: response.status, detail: null };
    }
    return { ok: false, status: response.status, detail: await readDetail(response) };
  }

  async health(): Promise<HealthResponse> {
    const response = await this.fetchImpl(`${this.baseUrl}/healthz`);
    if (!response.ok) {
      throw new Error(`health check failed: ${await readDetail(response)}`);
    }
    return (await response.json()) as HealthResponse;
  }
}
