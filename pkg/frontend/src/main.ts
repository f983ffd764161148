// Hash-routed entry point: #/rank/<session>/<participant>,
// #/test/<session>/<participant>, #/progress/<session>.

import { ApiClient } from "./api.js";
import { ProgressView } from "./progress.js";
import { RankingScreen } from "./ranking.js";
import { TrialScreen } from "./turing.js";

const POLL_MS = 4000;

function landing(container: HTMLElement): void {
  container.textContent = "";
  const heading = document.createElement("h2");
  heading.textContent = "Join a session";
  container.appendChild(heading);
  const form = document.createElement("form");
  form.innerHTML = `
    <label>Session id <input name="session" required></label>
    <label>Your name <input name="participant" required></label>
    <label>Task
      <select name="task">
        <option value="rank">rank lineups</option>
        <option value="test">spot the real photo</option>
        <option value="progress">watch progress</option>
      </select>
    </label>
    <button type="submit">Go</button>`;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    const session = String(data.get("session") ?? "").trim();
    const participant = encodeURIComponent(String(data.get("participant") ?? "").trim());
    const task = String(data.get("task"));
    window.location.hash =
      task === "progress" ? `#/progress/${session}` : `#/${task}/${session}/${participant}`;
  });
  container.appendChild(form);
}

export function route(container: HTMLElement, api: ApiClient, hash: string): { stop: () => void } {
  const parts = hash.replace(/^#\/?/, "").split("/").filter(Boolean);
  let timer: ReturnType<typeof setInterval> | undefined;
  if (parts[0] === "rank" && parts.length >= 3) {
    const progressPane = document.createElement("div");
    const rankPane = document.createElement("div");
    container.textContent = "";
    container.append(rankPane, progressPane);
    const progress = new ProgressView({ api, sessionId: parts[1], container: progressPane });
    const screen = new RankingScreen({
      api,
      sessionId: parts[1],
      participantId: decodeURIComponent(parts[2]),
      container: rankPane,
      onRoundAdvanced: () => void progress.load(),
    });
    void screen.load();
    void progress.load();
    timer = setInterval(() => void progress.load(), POLL_MS);
  } else if (parts[0] === "test" && parts.length >= 3) {
    const screen = new TrialScreen({
      api,
      sessionId: parts[1],
      participantId: decodeURIComponent(parts[2]),
      container,
    });
    void screen.load();
  } else if (parts[0] === "progress" && parts.length >= 2) {
    const view = new ProgressView({ api, sessionId: parts[1], container });
    void view.load();
    timer = setInterval(() => void view.load(), POLL_MS);
  } else {
    landing(container);
  }
  return { stop: () => timer !== undefined && clearInterval(timer) };
}

export function start(): void {
  const container = document.getElementById("app");
  if (!container) throw new Error("missing #app container");
  const api = new ApiClient("");
  let active = route(container, api, window.location.hash);
  window.addEventListener("hashchange", () => {
    active.stop();
    active = route(container, api, window.location.hash);
  });
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  start();
}
