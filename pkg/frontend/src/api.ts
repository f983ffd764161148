// Typed client for the session service. The UI talks to these endpoints
// exclusively; all optimization math stays server-side.

export interface SessionSummary {
  session_id: string;
  kind: "search" | "turing";
  status: "active" | "complete" | "aborted";
  created_at: number;
  config: Record<string, unknown>;
}

export interface LineupPortrait {
  portrait_id: string;
  url: string;
}

export interface LineupPayload {
  session_id: string;
  round: number;
  complete: boolean;
  prompt: string;
  quorum?: number;
  ballots_so_far?: number;
  portraits: LineupPortrait[];
}

export interface BallotReceipt {
  accepted: boolean;
  ballots_so_far: number;
  round_advanced: boolean;
  round: number;
}

export interface TrialPayload {
  session_id: string;
  complete: boolean;
  trial_id?: string;
  index: number;
  total: number;
  size?: number;
  left_url?: string;
  right_url?: string;
}

export interface ResponseReceipt {
  accepted: boolean;
  remaining: number;
}

export interface SearchRound {
  round: number;
  theta: number[];
  portrait_ids: string[];
  portrait_urls: string[];
  seed_image_url: string;
}

export interface SearchResults {
  kind: "search";
  session_id: string;
  status: string;
  prompt: string;
  rounds: SearchRound[];
}

export interface TuringResults {
  kind: "turing";
  session_id: string;
  status: string;
  curves: Record<string, unknown[]>;
}

export type SessionResults = SearchResults | TuringResults;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    const detail = typeof body?.detail === "string" ? body.detail : response.statusText;
    throw new ApiError(response.status, detail);
  }
  return body as T;
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return request(this.url(`/api/sessions/${sessionId}`));
  }

  createSession(kind: string, config: Record<string, unknown>): Promise<SessionSummary> {
    return request(this.url("/api/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ kind, config }),
    });
  }

  getLineup(sessionId: string): Promise<LineupPayload> {
    return request(this.url(`/api/sessions/${sessionId}/lineup`));
  }

  submitBallot(
    sessionId: string,
    participantId: string,
    round: number,
    ranking: number[],
  ): Promise<BallotReceipt> {
    return request(this.url(`/api/sessions/${sessionId}/ballots`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ participant_id: participantId, round, ranking }),
    });
  }

  nextTrial(sessionId: string, participantId: string): Promise<TrialPayload> {
    const participant = encodeURIComponent(participantId);
    return request(this.url(`/api/sessions/${sessionId}/trial?participant=${participant}`));
  }

  submitResponse(
    sessionId: string,
    participantId: string,
    trialId: string,
    choseLeft: boolean,
  ): Promise<ResponseReceipt> {
    return request(this.url(`/api/sessions/${sessionId}/responses`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ participant_id: participantId, trial_id: trialId, chose_left: choseLeft }),
    });
  }

  getResults(sessionId: string): Promise<SessionResults> {
    return request(this.url(`/api/sessions/${sessionId}/results`));
  }
}

// Trial fetches are idempotent server-side, so transient network failures
// are safe to retry.
export async function withRetry<T>(
  attempt: () => Promise<T>,
  retries = 3,
  delayMs = 250,
): Promise<T> {
  let lastError: unknown;
  for (let tryNo = 0; tryNo <= retries; tryNo++) {
    try {
      return await attempt();
    } catch (error) {
      if (error instanceof ApiError) throw error; // server verdicts are final
      lastError = error;
      if (tryNo < retries) {
        await new Promise((resolve) => setTimeout(resolve, delayMs * (tryNo + 1)));
      }
    }
  }
  throw lastError;
}
