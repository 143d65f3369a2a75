// @vitest-environment jsdom
//
// Scripted browser session against the fixture server: drive the real DOM,
// then check every submitted payload and the rendered transcript against
// the server's canonical log, byte for byte.

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { startApp } from "../src/main.js";
import { toLog } from "../src/transcript.js";
import { FixtureServer, fixtureFetch } from "./fixture-server.js";

const PAGE = `
  <form id="start-form">
    <input id="initial-attribute" type="number" value="3">
    <button type="submit">start</button>
  </form>
  <div id="errors"></div>
  <div id="transcript"></div>
  <div id="question"></div>
`;

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

function clickAnswers(doc: Document, answers: boolean[]): void {
  const cards = [...doc.querySelectorAll<HTMLElement>("#question .card")];
  expect(cards.length).toBe(answers.length);
  cards.forEach((card, i) => {
    const btn = card.querySelector<HTMLButtonElement>(
      answers[i] ? "button.accept" : "button.reject")!;
    btn.click();
  });
  const submit = doc.querySelector<HTMLButtonElement>("#question button.submit")!;
  expect(submit.disabled).toBe(false);
  submit.click();
}

describe("scripted conversation", () => {
  beforeEach(() => {
    document.body.innerHTML = PAGE;
    window.history.replaceState(null, "", "#");
  });

  it("completes a three-turn conversation matching the server log", async () => {
    const server = new FixtureServer();
    const app = await startApp(document,
                               new ApiClient("http://fixture", fixtureFetch(server)));

    (document.getElementById("initial-attribute") as HTMLInputElement).value = "3";
    (document.getElementById("start-form") as HTMLFormElement)
      .dispatchEvent(new window.Event("submit", { bubbles: true, cancelable: true }));
    await flush();

    const script: boolean[][] = [
      [true, false, true],   // turn 1: ask, three attribute cards
      [false, true],         // turn 2: ask, two attribute cards
      [false, true],         // turn 3: rec, accept the second item
    ];
    for (const answers of script) {
      clickAnswers(document, answers);
      await flush();
    }

    // every submitted payload, in order, byte for byte
    const submitted = server.requestLog
      .filter((r) => r.path.endsWith("/responses"))
      .map((r) => JSON.stringify(r.body));
    expect(submitted).toEqual(script.map((a) => JSON.stringify({ accepted: a })));

    // the rendered transcript equals the server's canonical episode log
    const sessionId = app.transcript().sessionId;
    expect(JSON.stringify(toLog(app.transcript())))
      .toBe(JSON.stringify(server.canonicalLog(sessionId)));

    // success banner with turn and rank
    const banner = document.querySelector(".banner.success");
    expect(banner?.textContent).toContain("turn 3");
    expect(banner?.textContent).toContain("rank 2");

    // submit button never allows partial answers: the next question is gone
    expect(document.querySelectorAll("#question .card").length).toBe(0);
  });

  it("disables submit until every card has a response", async () => {
    const server = new FixtureServer();
    await startApp(document,
                   new ApiClient("http://fixture", fixtureFetch(server)));
    (document.getElementById("start-form") as HTMLFormElement)
      .dispatchEvent(new window.Event("submit", { bubbles: true, cancelable: true }));
    await flush();

    const submit = document.querySelector<HTMLButtonElement>("#question button.submit")!;
    expect(submit.disabled).toBe(true);
    const cards = [...document.querySelectorAll<HTMLElement>("#question .card")];
    cards.slice(0, 2).forEach((card) =>
      card.querySelector<HTMLButtonElement>("button.accept")!.click());
    expect(submit.disabled).toBe(true);  // one card still unanswered
    cards[2]!.querySelector<HTMLButtonElement>("button.reject")!.click();
    expect(submit.disabled).toBe(false);
  });

  it("groups ask cards by attribute type", async () => {
    const server = new FixtureServer();
    await startApp(document,
                   new ApiClient("http://fixture", fixtureFetch(server)));
    (document.getElementById("start-form") as HTMLFormElement)
      .dispatchEvent(new window.Event("submit", { bubbles: true, cancelable: true }));
    await flush();
    const labels = [...document.querySelectorAll("#question .type-label")]
      .map((n) => n.textContent);
    expect(labels).toEqual(["style", "format"]);  // two distinct type headers
  });

  it("reload reconstructs the identical transcript from GET", async () => {
    const server = new FixtureServer();
    const app = await startApp(document,
                               new ApiClient("http://fixture", fixtureFetch(server)));
    (document.getElementById("start-form") as HTMLFormElement)
      .dispatchEvent(new window.Event("submit", { bubbles: true, cancelable: true }));
    await flush();
    clickAnswers(document, [true, false, true]);
    await flush();
    clickAnswers(document, [false, true]);
    await flush();
    const beforeReload = JSON.stringify(toLog(app.transcript()));
    const sessionId = app.transcript().sessionId;
    const renderedBefore = document.getElementById("transcript")!.innerHTML;

    // fresh page, same session id in the hash
    document.body.innerHTML = PAGE;
    window.history.replaceState(null, "", `#${sessionId}`);
    const reloaded = await startApp(
      document, new ApiClient("http://fixture", fixtureFetch(server)));
    await flush();
    expect(JSON.stringify(toLog(reloaded.transcript()))).toBe(beforeReload);
    // the pending question is back on screen after the reload
    expect(document.querySelectorAll("#question .card").length).toBe(2);
    expect(document.getElementById("transcript")!.innerHTML.length)
      .toBeGreaterThan(0);
  });

  it("shows a dismissible error with retry on conflict", async () => {
    const server = new FixtureServer();
    const app = await startApp(document,
                               new ApiClient("http://fixture", fixtureFetch(server)));
    (document.getElementById("start-form") as HTMLFormElement)
      .dispatchEvent(new window.Event("submit", { bubbles: true, cancelable: true }));
    await flush();
    // sabotage: answer count mismatch via the app handle
    await app.submitAnswers([true]);
    await flush();
    const banner = document.querySelector("#errors .banner.error");
    expect(banner?.textContent).toContain("409");
    banner!.querySelector<HTMLButtonElement>("button.dismiss")!.click();
    expect(document.querySelector("#errors .banner.error")).toBeNull();
    // the pending question survived untouched
    expect(document.querySelectorAll("#question .card").length).toBe(3);
  });
});
