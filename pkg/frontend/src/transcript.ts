// Transcript model: what the user has seen and answered so far, derived
// purely from API payloads so a reload rebuilds the identical view.

import type { Question, SessionSummary, TurnRecord } from "./api.js";

export interface AnsweredTurn {
  turn: number;
  option: "ask" | "rec";
  choices: { id: number; label: string }[];
  accepted: boolean[];
}

export interface Transcript {
  sessionId: string;
  answered: AnsweredTurn[];
  pending: Question | null;
  status: "active" | "success" | "timeout" | "closed";
  successTurn: number | null;
  successRank: number | null;
}

export function emptyTranscript(sessionId: string): Transcript {
  return { sessionId, answered: [], pending: null, status: "active",
           successTurn: null, successRank: null };
}

/** Record an answered question; labels come from the question the user saw. */
export function recordAnswers(t: Transcript, question: Question,
                              accepted: boolean[]): Transcript {
  if (accepted.length !== question.choices.length) {
    throw new Error(`need ${question.choices.length} answers, got ${accepted.length}`);
  }
  // a winning recommendation truncates the record at the accepted item,
  // mirroring the server's episode log
  let kept = accepted.length;
  if (question.option === "rec") {
    const hit = accepted.indexOf(true);
    if (hit >= 0) kept = hit + 1;
  }
  const entry: AnsweredTurn = {
    turn: question.turn,
    option: question.option,
    choices: question.choices.slice(0, kept)
      .map((c) => ({ id: c.id, label: c.label })),
    accepted: accepted.slice(0, kept),
  };
  return { ...t, answered: [...t.answered, entry], pending: null };
}

export function setPending(t: Transcript, question: Question | null): Transcript {
  return { ...t, pending: question };
}

export function finish(t: Transcript, status: "success" | "timeout",
                       turn: number, rank?: number | null): Transcript {
  return { ...t, status, pending: null, successTurn: status === "success" ? turn : null,
           successRank: rank ?? null };
}

/** Rebuild the transcript from a GET payload (page reload path). */
export function fromSummary(summary: SessionSummary,
                            labels: Map<number, string> = new Map()): Transcript {
  const answered = summary.turns.map((turn: TurnRecord, i: number) => ({
    turn: i + 1,
    option: turn.option,
    choices: turn.choices.map((id) => ({ id, label: labels.get(id) ?? `#${id}` })),
    accepted: turn.accepted.map(Boolean),
  }));
  return {
    sessionId: summary.session_id,
    answered,
    pending: summary.pending,
    status: summary.status,
    successTurn: summary.success_turn,
    successRank: summary.success_rank,
  };
}

/** Canonical comparison form: option/choices/accepted per answered turn,
 * matching the server's episode-log schema exactly. */
export function toLog(t: Transcript): TurnRecord[] {
  return t.answered.map((turn) => ({
    option: turn.option,
    choices: turn.choices.map((c) => c.id),
    accepted: [...turn.accepted],
  }));
}
