/** Typed client for the rating service's JSON API.
 *
 * The service is the source of truth: this client adds no state beyond the
 * base URL. Service errors carry structured bodies {code, message}, which are
 * preserved verbatim on ApiError so the UI can surface them unchanged.
 * Transport failures (server unreachable, connection reset) become ApiError
 * with status 0 and code "network_error" so callers can tell them apart from
 * the service rejecting a request.
 */

export interface ChatTurn {
  role: string;
  content: string;
}

export interface ScaleDescriptor {
  min: number;
  max: number;
  min_label: string;
  max_label: string;
}

export interface WireItem {
  item_id: string;
  chat_history: ChatTurn[];
  query: string;
  response: string;
  scale: ScaleDescriptor;
}

export interface SessionSummary {
  session_id: string;
  rater_id: string;
  rated: number;
  total: number;
  status: "open" | "complete";
}

export type NextResult =
  | { done: false; progress: SessionSummary; item: WireItem }
  | ({ done: true } & SessionSummary);

export class ApiError extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }

  /** Transport problems and server-side faults are worth retrying; a 4xx
   * verdict about this specific request is not. */
  get retryable(): boolean {
    return this.status === 0 || this.status >= 500;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class RatingApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async createSession(pool: string, raterId: string, seed: number): Promise<SessionSummary> {
    return this.request("POST", "/sessions", { pool, rater_id: raterId, seed });
  }

  async next(sessionId: string): Promise<NextResult> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}/next`);
  }

  async submitRating(sessionId: string, itemId: string, value: number): Promise<SessionSummary> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/ratings`, {
      item_id: itemId,
      value,
    });
  }

  async summary(sessionId: string): Promise<SessionSummary> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}/summary`);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (error) {
      throw new ApiError("network_error", String(error), 0);
    }
    if (!response.ok) {
      let code = "unknown_error";
      let message = `HTTP ${response.status}`;
      try {
        const parsed = (await response.json()) as { code?: string; message?: string };
        if (parsed && typeof parsed.code === "string") code = parsed.code;
        if (parsed && typeof parsed.message === "string") message = parsed.message;
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(code, message, response.status);
    }
    return (await response.json()) as T;
  }
}
