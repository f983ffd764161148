// Drag-to-rank lineup screen. The display order runs best resemblance
// first; the wire format ranks every portrait with rank n = strongest,
// so the tile at display position j carries rank n - j.

import { ApiClient, ApiError, LineupPayload } from "./api.js";

export function toWireRanking(displayOrder: number[]): number[] {
  const n = displayOrder.length;
  const seen = new Set(displayOrder);
  if (seen.size !== n || displayOrder.some((i) => i < 0 || i >= n || !Number.isInteger(i))) {
    throw new Error(`display order is not a permutation of 0..${n - 1}: ${displayOrder}`);
  }
  const ranking = new Array<number>(n);
  displayOrder.forEach((lineupIndex, position) => {
    ranking[lineupIndex] = n - position;
  });
  return ranking;
}

export function moveItem<T>(items: readonly T[], from: number, to: number): T[] {
  const next = items.slice();
  if (from < 0 || from >= items.length || to < 0 || to >= items.length) return next;
  const [moved] = next.splice(from, 1);
  next.splice(to, 0, moved);
  return next;
}

export interface RankingScreenOptions {
  api: ApiClient;
  sessionId: string;
  participantId: string;
  container: HTMLElement;
  confirmDialog?: (message: string) => boolean;
  onRoundAdvanced?: () => void;
}

type Status = "loading" | "ranking" | "submitted" | "already-voted" | "complete" | "error";

export class RankingScreen {
  private lineup: LineupPayload | null = null;
  private displayOrder: number[] = [];
  private interacted = false;
  private status: Status = "loading";
  private notice = "";
  private readonly confirmDialog: (message: string) => boolean;

  constructor(private readonly options: RankingScreenOptions) {
    this.confirmDialog =
      options.confirmDialog ?? ((message) => window.confirm(message));
  }

  async load(): Promise<void> {
    this.status = "loading";
    this.render();
    try {
      const lineup = await this.options.api.getLineup(this.options.sessionId);
      const sameRound = this.lineup !== null && this.lineup.round === lineup.round;
      this.lineup = lineup;
      if (!sameRound) {
        this.displayOrder = lineup.portraits.map((_, i) => i);
        this.interacted = false;
      }
      this.status = lineup.complete ? "complete" : "ranking";
    } catch (error) {
      this.notice = error instanceof Error ? error.message : String(error);
      this.status = "error";
    }
    this.render();
  }

  get currentOrder(): readonly number[] {
    return this.displayOrder;
  }

  moveTile(from: number, to: number): void {
    if (this.status !== "ranking") return;
    this.displayOrder = moveItem(this.displayOrder, from, to);
    this.interacted = true;
    this.render();
  }

  async submit(): Promise<void> {
    if (this.status !== "ranking" || this.lineup === null || !this.interacted) return;
    const untouched = this.displayOrder.every((v, i) => v === i);
    if (untouched && !this.confirmDialog("Submit the lineup in its original order?")) {
      return;
    }
    const ranking = toWireRanking(this.displayOrder);
    try {
      const receipt = await this.options.api.submitBallot(
        this.options.sessionId,
        this.options.participantId,
        this.lineup.round,
        ranking,
      );
      this.status = "submitted";
      this.notice = receipt.round_advanced
        ? "Quorum reached; the next lineup is ready."
        : `Ballot recorded (${receipt.ballots_so_far} so far this round).`;
      this.render();
      if (receipt.round_advanced) {
        this.options.onRoundAdvanced?.();
        await this.load();
      }
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        if (/already voted/i.test(error.message)) {
          this.status = "already-voted";
          this.notice = "You already ranked this lineup.";
          this.render();
        } else {
          // the round moved while ranking: refresh to the new lineup
          this.notice = "This lineup closed while you were ranking; here is the current one.";
          this.lineup = null;
          await this.load();
        }
      } else {
        this.notice = error instanceof Error ? error.message : String(error);
        this.status = "error";
        this.render();
      }
    }
  }

  render(): void {
    const root = this.options.container;
    root.textContent = "";
    const lineup = this.lineup;
    const heading = document.createElement("h2");
    heading.textContent = lineup ? `Round ${lineup.round + 1}` : "Lineup";
    root.appendChild(heading);
    if (lineup && lineup.prompt) {
      const prompt = document.createElement("p");
      prompt.className = "prompt";
      prompt.textContent = `Target: ${lineup.prompt}`;
      root.appendChild(prompt);
    }
    if (this.notice) {
      const note = document.createElement("p");
      note.className = "notice";
      note.textContent = this.notice;
      root.appendChild(note);
    }
    if (this.status === "loading") {
      root.appendChild(document.createTextNode("Loading lineup..."));
      return;
    }
    if (this.status === "complete") {
      const done = document.createElement("p");
      done.className = "complete";
      done.textContent = "This search has finished. Thanks for taking part!";
      root.appendChild(done);
      return;
    }
    if (this.status === "already-voted" || this.status === "submitted") {
      const wait = document.createElement("p");
      wait.className = "waiting";
      wait.textContent =
        this.status === "already-voted"
          ? "Waiting for the rest of the panel..."
          : "Ballot submitted. Waiting for the round to close...";
      root.appendChild(wait);
      return;
    }
    if (this.status === "error" || lineup === null) return;

    const hint = document.createElement("p");
    hint.textContent = "Order the portraits, best resemblance first.";
    root.appendChild(hint);
    const list = document.createElement("ol");
    list.className = "lineup";
    this.displayOrder.forEach((lineupIndex, position) => {
      const portrait = lineup.portraits[lineupIndex];
      const item = document.createElement("li");
      item.className = "tile";
      item.dataset.lineupIndex = String(lineupIndex);
      item.draggable = true;
      item.addEventListener("dragstart", (event) => {
        (event as DragEvent).dataTransfer?.setData("text/plain", String(position));
      });
      item.addEventListener("dragover", (event) => event.preventDefault());
      item.addEventListener("drop", (event) => {
        event.preventDefault();
        const from = Number((event as DragEvent).dataTransfer?.getData("text/plain"));
        if (Number.isInteger(from)) this.moveTile(from, position);
      });
      const img = document.createElement("img");
      img.src = portrait.url;
      img.alt = `portrait ${position + 1}`;
      img.width = 128;
      img.height = 128;
      item.appendChild(img);
      const controls = document.createElement("span");
      controls.className = "controls";
      const up = document.createElement("button");
      up.textContent = "↑";
      up.className = "move-up";
      up.disabled = position === 0;
      up.addEventListener("click", () => this.moveTile(position, position - 1));
      const down = document.createElement("button");
      down.textContent = "↓";
      down.className = "move-down";
      down.disabled = position === this.displayOrder.length - 1;
      down.addEventListener("click", () => this.moveTile(position, position + 1));
      controls.append(up, down);
      item.appendChild(controls);
      list.appendChild(item);
    });
    root.appendChild(list);
    const submit = document.createElement("button");
    submit.className = "submit";
    submit.textContent = "Submit ranking";
    submit.disabled = !this.interacted; // no low-effort ballots
    submit.addEventListener("click", () => void this.submit());
    root.appendChild(submit);
  }
}
