// Bootstrap: wire the API client, transcript model and renderer together.
// The only client-side state is the session id (kept in the URL hash).

import { ApiClient, ApiError, Question } from "./api.js";
import { freshSelection, renderError, renderQuestion, renderTranscript } from "./render.js";
import { Transcript, emptyTranscript, finish, fromSummary, recordAnswers,
         setPending } from "./transcript.js";

export interface AppHandles {
  submitAnswers: (accepted: boolean[]) => Promise<void>;
  transcript: () => Transcript;
}

export async function startApp(doc: Document, client: ApiClient): Promise<AppHandles> {
  const transcriptBox = doc.getElementById("transcript") as HTMLElement;
  const questionBox = doc.getElementById("question") as HTMLElement;
  const errorBox = doc.getElementById("errors") as HTMLElement;
  const form = doc.getElementById("start-form") as HTMLFormElement | null;

  let transcript: Transcript = emptyTranscript("");
  let pendingQuestion: Question | null = null;

  const redraw = () => {
    renderTranscript(doc, transcriptBox, transcript);
    if (pendingQuestion && transcript.status === "active") {
      renderQuestion(doc, questionBox, pendingQuestion,
                     freshSelection(pendingQuestion), submitAnswers);
    } else {
      questionBox.replaceChildren();
    }
  };

  const submitAnswers = async (accepted: boolean[]): Promise<void> => {
    if (!pendingQuestion) return;
    const question = pendingQuestion;
    try {
      const reply = await client.submitResponses(transcript.sessionId, accepted);
      transcript = recordAnswers(transcript, question, accepted);
      if (reply.status === "active" && reply.question) {
        pendingQuestion = reply.question;
        transcript = setPending(transcript, reply.question);
      } else if (reply.status === "success" || reply.status === "timeout") {
        pendingQuestion = null;
        transcript = finish(transcript, reply.status, reply.turn, reply.rank);
      }
      redraw();
    } catch (err) {
      const message = err instanceof ApiError
        ? `${err.status}: ${err.message}` : String(err);
      renderError(doc, errorBox, message, () => redraw(),
                  () => void submitAnswers(accepted));
    }
  };

  const begin = async (attributeId: number) => {
    const created = await client.createSession(attributeId);
    transcript = emptyTranscript(created.session_id);
    doc.defaultView?.history.replaceState(null, "", `#${created.session_id}`);
    pendingQuestion = created.question;
    transcript = setPending(transcript, created.question);
    if (!created.question) {
      transcript = finish(transcript, "timeout", 0);
    }
    redraw();
  };

  const resume = async (sessionId: string) => {
    try {
      const summary = await client.getSession(sessionId);
      transcript = fromSummary(summary);
      pendingQuestion = summary.pending;
      redraw();
    } catch (err) {
      const message = err instanceof ApiError
        ? `${err.status}: ${err.message}` : String(err);
      renderError(doc, errorBox, message, () => undefined);
    }
  };

  form?.addEventListener("submit", (event) => {
    event.preventDefault();
    const input = doc.getElementById("initial-attribute") as HTMLInputElement;
    const value = Number.parseInt(input.value, 10);
    if (Number.isFinite(value)) void begin(value);
  });

  const fromHash = doc.defaultView?.location.hash.replace(/^#/, "");
  if (fromHash) await resume(fromHash);

  return { submitAnswers, transcript: () => transcript };
}

declare global {
  interface Window { chainrecApiBase?: string }
}

if (typeof window !== "undefined" && window.document.getElementById("transcript")
    && !("vitest" in globalThis)) {
  const base = window.chainrecApiBase ?? "http://127.0.0.1:8080";
  void startApp(window.document, new ApiClient(base));
}
