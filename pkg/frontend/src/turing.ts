// 2AFC trial screen. Stimuli carry exactly their trial-size pixels:
// magnification is integer-factor nearest-neighbor only, so a 16x16
// stimulus stays 16x16 worth of information however large it appears.

import { ApiClient, TrialPayload, withRetry } from "./api.js";

export const MAX_DISPLAY_CSS_PX = 256;

export function integerScale(size: number, maxDisplay: number = MAX_DISPLAY_CSS_PX): number {
  if (!Number.isInteger(size) || size < 1) {
    throw new Error(`stimulus size must be a positive integer, got ${size}`);
  }
  return Math.max(1, Math.floor(maxDisplay / size));
}

export interface TrialScreenOptions {
  api: ApiClient;
  sessionId: string;
  participantId: string;
  container: HTMLElement;
  question?: string; // configurable instruction text
}

type Status = "loading" | "choosing" | "complete" | "error";

export class TrialScreen {
  private trial: TrialPayload | null = null;
  private status: Status = "loading";
  private notice = "";
  private submitting = false;

  constructor(private readonly options: TrialScreenOptions) {}

  async load(): Promise<void> {
    this.status = "loading";
    this.render();
    try {
      // idempotent fetch: a refresh resumes at the same unanswered trial
      const trial = await withRetry(() =>
        this.options.api.nextTrial(this.options.sessionId, this.options.participantId),
      );
      this.trial = trial;
      this.status = trial.complete ? "complete" : "choosing";
    } catch (error) {
      this.notice = error instanceof Error ? error.message : String(error);
      this.status = "error";
    }
    this.render();
  }

  async choose(left: boolean): Promise<void> {
    const trial = this.trial;
    if (this.status !== "choosing" || trial === null || !trial.trial_id || this.submitting) return;
    this.submitting = true;
    try {
      await this.options.api.submitResponse(
        this.options.sessionId,
        this.options.participantId,
        trial.trial_id,
        left,
      );
    } catch {
      // stale responses mean the server already has this trial; just refetch
    } finally {
      this.submitting = false;
    }
    await this.load();
  }

  render(): void {
    const root = this.options.container;
    root.textContent = "";
    if (this.status === "loading") {
      root.appendChild(document.createTextNode("Loading trial..."));
      return;
    }
    if (this.status === "error") {
      const note = document.createElement("p");
      note.className = "notice";
      note.textContent = this.notice;
      root.appendChild(note);
      return;
    }
    if (this.status === "complete") {
      // completion screen: no scores or results are shown to participants
      const done = document.createElement("p");
      done.className = "complete";
      done.textContent = "All trials complete. Thank you!";
      root.appendChild(done);
      return;
    }
    const trial = this.trial!;
    const progress = document.createElement("p");
    progress.className = "progress";
    progress.textContent = `Trial ${trial.index + 1} of ${trial.total}`;
    root.appendChild(progress);
    const question = document.createElement("h2");
    question.textContent = this.options.question ?? "Which image is the real photograph?";
    root.appendChild(question);

    const pair = document.createElement("div");
    pair.className = "pair";
    const size = trial.size!;
    const factor = integerScale(size);
    for (const side of ["left", "right"] as const) {
      const button = document.createElement("button");
      button.className = `choice choice-${side}`;
      button.addEventListener("click", () => void this.choose(side === "left"));
      const img = document.createElement("img");
      img.src = side === "left" ? trial.left_url! : trial.right_url!;
      img.alt = `${side} image`;
      // pixel-exact contract: css size is an integer multiple of the
      // stimulus size, with nearest-neighbor upscaling only
      img.width = size * factor;
      img.height = size * factor;
      img.style.width = `${size * factor}px`;
      img.style.height = `${size * factor}px`;
      img.style.imageRendering = "pixelated";
      img.dataset.stimulusSize = String(size);
      img.dataset.scaleFactor = String(factor);
      button.appendChild(img);
      pair.appendChild(button);
    }
    root.appendChild(pair);
  }
}
