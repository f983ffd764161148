// Session progress: the decoded seed after each completed round, laid out
// as a horizontal strip, plus the prompt the panel is searching for.

import { ApiClient, SearchResults } from "./api.js";

export interface ProgressViewOptions {
  api: ApiClient;
  sessionId: string;
  container: HTMLElement;
}

export class ProgressView {
  private results: SearchResults | null = null;
  private notice = "";

  constructor(private readonly options: ProgressViewOptions) {}

  async load(): Promise<void> {
    try {
      const results = await this.options.api.getResults(this.options.sessionId);
      if (results.kind !== "search") {
        this.notice = "Progress strips only apply to search sessions.";
        this.results = null;
      } else {
        this.results = results;
        this.notice = "";
      }
    } catch (error) {
      this.notice = error instanceof Error ? error.message : String(error);
      this.results = null;
    }
    this.render();
  }

  render(): void {
    const root = this.options.container;
    root.textContent = "";
    const heading = document.createElement("h2");
    heading.textContent = "Search progress";
    root.appendChild(heading);
    if (this.notice) {
      const note = document.createElement("p");
      note.className = "notice";
      note.textContent = this.notice;
      root.appendChild(note);
      return;
    }
    const results = this.results;
    if (results === null) return;
    if (results.prompt) {
      const prompt = document.createElement("p");
      prompt.className = "prompt";
      prompt.textContent = `Target: ${results.prompt}`;
      root.appendChild(prompt);
    }
    if (results.status === "aborted") {
      const note = document.createElement("p");
      note.className = "notice";
      note.textContent = "This search was aborted; showing the rounds it completed.";
      root.appendChild(note);
    }
    if (results.rounds.length === 0) {
      const placeholder = document.createElement("p");
      placeholder.className = "placeholder";
      placeholder.textContent = "No rounds completed yet.";
      root.appendChild(placeholder);
      return;
    }
    const strip = document.createElement("div");
    strip.className = "seed-strip";
    for (const round of results.rounds) {
      const cell = document.createElement("figure");
      cell.className = "seed";
      const img = document.createElement("img");
      img.src = round.seed_image_url;
      img.alt = `seed after round ${round.round + 1}`;
      img.width = 96;
      img.height = 96;
      const caption = document.createElement("figcaption");
      caption.textContent = `round ${round.round + 1}`;
      cell.append(img, caption);
      strip.appendChild(cell);
    }
    root.appendChild(strip);
  }
}
