// DOM rendering. No framework: the server is the source of truth and the
// view is rebuilt from the transcript on every change.

import type { ChoiceCard, Question } from "./api.js";
import type { Transcript } from "./transcript.js";

export interface PendingSelection {
  /** answer per card index; undefined until the user decides */
  answers: (boolean | undefined)[];
}

export function freshSelection(question: Question): PendingSelection {
  return { answers: question.choices.map(() => undefined) };
}

export function selectionComplete(sel: PendingSelection): boolean {
  return sel.answers.every((a) => a !== undefined);
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document, tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderCard(doc: Document, card: ChoiceCard, index: number,
                    sel: PendingSelection, onToggle: () => void): HTMLElement {
  const wrap = el(doc, "div", "card");
  wrap.dataset.choiceId = String(card.id);
  wrap.appendChild(el(doc, "span", "card-label", card.label));
  for (const [value, text] of [[true, "accept"], [false, "reject"]] as const) {
    const button = el(doc, "button", value ? "accept" : "reject", text);
    button.type = "button";
    button.addEventListener("click", () => {
      sel.answers[index] = value;
      wrap.dataset.answer = String(value);
      onToggle();
    });
    wrap.appendChild(button);
  }
  return wrap;
}

export function renderQuestion(
  doc: Document, container: HTMLElement, question: Question,
  sel: PendingSelection, onSubmit: (accepted: boolean[]) => void,
): void {
  container.replaceChildren();
  const box = el(doc, "section", "question");
  const badge = `${question.candidate_count} matching items`;
  box.appendChild(el(doc, "h2", "question-title",
                     `Turn ${question.turn}: ${question.option === "ask"
                       ? "which of these fit?" : "any of these?"}`));
  box.appendChild(el(doc, "span", "candidate-badge", badge));

  const refresh = () => {
    submit.disabled = !selectionComplete(sel);
  };

  if (question.option === "ask") {
    // group attribute cards under their type labels so mixed-type turns
    // are visible at a glance
    const groups = new Map<string, ChoiceCard[]>();
    question.choices.forEach((card) => {
      const key = card.type_label ?? "attributes";
      if (!groups.has(key)) groups.set(key, []);
      groups.get(key)!.push(card);
    });
    for (const [label, cards] of groups) {
      const group = el(doc, "div", "type-group");
      group.appendChild(el(doc, "h3", "type-label", label));
      for (const card of cards) {
        const index = question.choices.indexOf(card);
        group.appendChild(renderCard(doc, card, index, sel, refresh));
      }
      box.appendChild(group);
    }
  } else {
    for (const [index, card] of question.choices.entries()) {
      box.appendChild(renderCard(doc, card, index, sel, refresh));
    }
  }

  const submit = el(doc, "button", "submit", "send answers");
  submit.type = "button";
  submit.disabled = true;
  submit.addEventListener("click", () => {
    if (!selectionComplete(sel)) return;
    submit.disabled = true; // one in-flight request per session
    onSubmit(sel.answers.map((a) => a === true));
  });
  box.appendChild(submit);
  container.appendChild(box);
}

export function renderTranscript(doc: Document, container: HTMLElement,
                                 transcript: Transcript): void {
  container.replaceChildren();
  for (const turn of transcript.answered) {
    const row = el(doc, "div", `turn turn-${turn.option}`);
    row.appendChild(el(doc, "h3", "turn-title",
                       `Turn ${turn.turn} (${turn.option})`));
    turn.choices.forEach((choice, i) => {
      const verdict = turn.accepted[i] ? "accepted" : "rejected";
      const item = el(doc, "div", `answered ${verdict}`,
                      `${choice.label}: ${verdict}`);
      item.dataset.choiceId = String(choice.id);
      row.appendChild(item);
    });
    container.appendChild(row);
  }
  if (transcript.status === "success") {
    container.appendChild(el(doc, "div", "banner success",
      `Recommended successfully at turn ${transcript.successTurn}` +
      (transcript.successRank ? ` (rank ${transcript.successRank})` : "")));
  } else if (transcript.status === "timeout") {
    container.appendChild(el(doc, "div", "banner timeout",
                             "Out of turns without a match."));
  }
}

export function renderError(doc: Document, container: HTMLElement,
                            message: string, onDismiss: () => void,
                            onRetry?: () => void): void {
  const banner = el(doc, "div", "banner error", message);
  const dismiss = el(doc, "button", "dismiss", "dismiss");
  dismiss.type = "button";
  dismiss.addEventListener("click", () => {
    banner.remove();
    onDismiss();
  });
  banner.appendChild(dismiss);
  if (onRetry) {
    const retry = el(doc, "button", "retry", "retry");
    retry.type = "button";
    retry.addEventListener("click", () => {
      banner.remove();
      onRetry();
    });
    banner.appendChild(retry);
  }
  container.appendChild(banner);
}
