// In-memory stand-in for the session API, faithful to its contract:
// same payload shapes, same status codes, same transcript semantics.

import type { FetchLike, Question, TurnRecord } from "../src/api.js";

export interface ScriptedTurn {
  question: Question;
}

const fixtureScript: Question[] = [
  {
    option: "ask", turn: 1, candidate_count: 24,
    choices: [
      { id: 3, kind: "attribute", label: "instrumental", type_id: 0, type_label: "style" },
      { id: 7, kind: "attribute", label: "live recording", type_id: 1, type_label: "format" },
      { id: 5, kind: "attribute", label: "acoustic", type_id: 0, type_label: "style" },
    ],
  },
  {
    option: "ask", turn: 2, candidate_count: 9,
    choices: [
      { id: 11, kind: "attribute", label: "piano", type_id: 2, type_label: "instrument" },
      { id: 12, kind: "attribute", label: "strings", type_id: 2, type_label: "instrument" },
    ],
  },
  {
    option: "rec", turn: 3, candidate_count: 3,
    choices: [
      { id: 40, kind: "item", label: "Night Sessions" },
      { id: 41, kind: "item", label: "Quiet Hours" },
    ],
  },
];

interface FixtureSession {
  id: string;
  cursor: number;
  turns: TurnRecord[];
  status: "active" | "success" | "timeout";
  successTurn: number | null;
  successRank: number | null;
  pending: Question | null;
}

export class FixtureServer {
  sessions = new Map<string, FixtureSession>();
  requestLog: { method: string; path: string; body: unknown }[] = [];
  private counter = 0;

  handle(method: string, path: string, body: unknown): { status: number; payload: unknown } {
    this.requestLog.push({ method, path, body });
    const parts = path.split("/").filter(Boolean);
    if (parts[0] !== "api" || parts[1] !== "sessions") {
      return { status: 404, payload: { error: `no route for ${method} ${path}` } };
    }
    if (parts.length === 2 && method === "POST") {
      return this.create(body);
    }
    const session = this.sessions.get(parts[2] ?? "");
    if (!session) return { status: 404, payload: { error: "unknown session" } };
    if (parts.length === 3 && method === "GET") {
      return { status: 200, payload: this.summary(session) };
    }
    if (parts.length === 4 && parts[3] === "responses" && method === "POST") {
      return this.respond(session, body);
    }
    return { status: 404, payload: { error: `no route for ${method} ${path}` } };
  }

  private create(body: unknown): { status: number; payload: unknown } {
    const record = body as { initial_attribute_id?: unknown };
    if (typeof record?.initial_attribute_id !== "number") {
      return { status: 400, payload: { error: "body must carry initial_attribute_id" } };
    }
    const id = `fixture-${this.counter++}`;
    const session: FixtureSession = {
      id, cursor: 0, turns: [], status: "active",
      successTurn: null, successRank: null,
      pending: fixtureScript[0] ?? null,
    };
    this.sessions.set(id, session);
    return { status: 200, payload: { api_version: 1, session_id: id,
                                     question: session.pending } };
  }

  private respond(session: FixtureSession, body: unknown): { status: number; payload: unknown } {
    if (session.status !== "active" || !session.pending) {
      return { status: 409, payload: { error: `session is ${session.status}` } };
    }
    const record = body as { accepted?: unknown };
    if (!Array.isArray(record?.accepted)
        || !record.accepted.every((x) => typeof x === "boolean")) {
      return { status: 400, payload: { error: "body must carry accepted: [bool, ...]" } };
    }
    const accepted = record.accepted as boolean[];
    const question = session.pending;
    if (accepted.length !== question.choices.length) {
      return { status: 409, payload: {
        error: `expected ${question.choices.length} responses, got ${accepted.length}` } };
    }
    let kept = accepted.length;
    let rank: number | null = null;
    if (question.option === "rec") {
      const hit = accepted.indexOf(true);
      if (hit >= 0) { kept = hit + 1; rank = hit + 1; }
    }
    session.turns.push({
      option: question.option,
      choices: question.choices.slice(0, kept).map((c) => c.id),
      accepted: accepted.slice(0, kept),
    });
    session.cursor += 1;
    if (question.option === "rec" && rank !== null) {
      session.status = "success";
      session.successTurn = question.turn;
      session.successRank = rank;
      session.pending = null;
      return { status: 200, payload: { api_version: 1, status: "success",
                                       turn: question.turn, rank } };
    }
    const next = fixtureScript[session.cursor] ?? null;
    session.pending = next;
    if (!next) {
      session.status = "timeout";
      return { status: 200, payload: { api_version: 1, status: "timeout",
                                       turn: question.turn } };
    }
    return { status: 200, payload: { api_version: 1, status: "active",
                                     turn: question.turn, question: next } };
  }

  summary(session: FixtureSession): unknown {
    return {
      api_version: 1,
      session_id: session.id,
      status: session.status,
      turn: session.turns.length,
      accepted_attributes: [],
      rejected_attributes: [],
      rejected_items: [],
      candidate_count: session.pending?.candidate_count ?? 0,
      turns: session.turns,
      pending: session.pending,
      success_turn: session.successTurn,
      success_rank: session.successRank,
    };
  }

  canonicalLog(sessionId: string): TurnRecord[] {
    return this.sessions.get(sessionId)?.turns ?? [];
  }
}

/** Adapt the fixture to the client's fetch-shaped interface. */
export function fixtureFetch(server: FixtureServer): FetchLike {
  return async (url, init) => {
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const body = init?.body ? JSON.parse(init.body) : undefined;
    const { status, payload } = server.handle(init?.method ?? "GET", path, body);
    return { status, json: async () => payload };
  };
}
