// Typed client for the session API. The server owns all state; this module
// only shuttles JSON.

export type OptionKind = "ask" | "rec";

export interface ChoiceCard {
  id: number;
  kind: "attribute" | "item";
  label: string;
  type_id?: number;
  type_label?: string;
}

export interface Question {
  option: OptionKind;
  turn: number;
  choices: ChoiceCard[];
  candidate_count: number;
}

export interface TurnRecord {
  option: OptionKind;
  choices: number[];
  accepted: boolean[];
}

export interface CreateResponse {
  api_version: number;
  session_id: string;
  question: Question | null;
}

export interface RespondResponse {
  api_version: number;
  status: "active" | "success" | "timeout";
  turn: number;
  rank?: number | null;
  question?: Question | null;
}

export interface SessionSummary {
  api_version: number;
  session_id: string;
  status: "active" | "success" | "timeout" | "closed";
  turn: number;
  accepted_attributes: number[];
  rejected_attributes: number[];
  rejected_items: number[];
  candidate_count: number;
  turns: TurnRecord[];
  pending: Question | null;
  success_turn: number | null;
  success_rank: number | null;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{ status: number; json(): Promise<unknown> }>;

async function request<T>(fetchImpl: FetchLike, url: string, method: string,
                          body?: unknown): Promise<T> {
  const init: Parameters<FetchLike>[1] = { method };
  if (body !== undefined) {
    init.headers = { "Content-Type": "application/json" };
    init.body = JSON.stringify(body);
  }
  const response = await fetchImpl(url, init);
  const payload = (await response.json()) as Record<string, unknown>;
  if (response.status >= 400) {
    const message = typeof payload?.error === "string"
      ? payload.error : `request failed with status ${response.status}`;
    throw new ApiError(response.status, message);
  }
  return payload as T;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike =
      (globalThis.fetch as unknown as FetchLike),
  ) {}

  createSession(initialAttributeId: number, userId?: number): Promise<CreateResponse> {
    const body: Record<string, number> = { initial_attribute_id: initialAttributeId };
    if (userId !== undefined) body.user_id = userId;
    return request(this.fetchImpl, `${this.baseUrl}/api/sessions`, "POST", body);
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return request(this.fetchImpl,
                   `${this.baseUrl}/api/sessions/${sessionId}`, "GET");
  }

  submitResponses(sessionId: string, accepted: boolean[]): Promise<RespondResponse> {
    return request(this.fetchImpl,
                   `${this.baseUrl}/api/sessions/${sessionId}/responses`,
                   "POST", { accepted });
  }

  deleteSession(sessionId: string): Promise<{ closed: string }> {
    return request(this.fetchImpl,
                   `${this.baseUrl}/api/sessions/${sessionId}`, "DELETE");
  }
}
