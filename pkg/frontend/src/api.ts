/** Thin typed client over the gate endpoints.
 *
 * The bearer token lives only on this object for the browser session; it is
 * never written to storage. All calls resolve to a discriminated result so
 * callers surface errors as banners instead of exceptions.
 */

import type {
  ErrorDoc,
  HistoryDoc,
  ReleasesDoc,
  StatusDoc,
  SubmitResponse,
  Ticket,
  TicketsDoc,
} from "./types.js";

export type ApiFailure = { status: number; error: string; message: string; body: ErrorDoc };
export type ApiResult<T> = { ok: true; body: T } | { ok: false; failure: ApiFailure };

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class GateClient {
  token: string | null = null;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<ApiResult<T>> {
    const headers: Record<string, string> = {};
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
    }
    if (this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        method,
        headers,
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      return {
        ok: false,
        failure: {
          status: 0,
          error: "network_error",
          message: String(err),
          body: { error: "network_error" },
        },
      };
    }
    let parsed: unknown = null;
    try {
      parsed = await response.json();
    } catch {
      parsed = { error: "bad_payload", message: "response was not JSON" };
    }
    if (!response.ok) {
      const doc = parsed as ErrorDoc;
      return {
        ok: false,
        failure: {
          status: response.status,
          error: doc.error ?? "error",
          message: doc.message ?? "request failed",
          body: doc,
        },
      };
    }
    return { ok: true, body: parsed as T };
  }

  getStatus(): Promise<ApiResult<StatusDoc>> {
    return this.request("GET", "/status");
  }

  getReleases(): Promise<ApiResult<ReleasesDoc>> {
    return this.request("GET", "/releases");
  }

  getTickets(): Promise<ApiResult<TicketsDoc>> {
    return this.request("GET", "/tickets");
  }

  getHistory(site: string, last = 20): Promise<ApiResult<HistoryDoc>> {
    return this.request("GET", `/sites/${encodeURIComponent(site)}/history?last=${last}`);
  }

  submitInstall(site: string, project: string, version: string): Promise<ApiResult<SubmitResponse>> {
    return this.request("POST", "/jobs", { site, project, version, action: "install" });
  }

  closeTicket(ticketId: string): Promise<ApiResult<{ seq: number; ticket: Ticket }>> {
    return this.request("POST", `/tickets/${encodeURIComponent(ticketId)}/close`);
  }
}
