/** Typed client for the play service's JSON endpoints. */

export interface GridStateWire {
  width: number;
  height: number;
  human: number;
  goal: number;
  blocks: number[];
  steps: number;
  done: boolean;
  last_robot_action: number | null;
  diagnostics: { esr_reward_per_action?: number[] };
}

export interface SessionResponse {
  session_id: string;
  state: GridStateWire;
}

export interface StepResponse extends SessionResponse {
  robot_action: number | null;
  done: boolean;
}

export interface SessionRequest {
  width?: number;
  height?: number;
  num_blocks?: number;
  goal_cell?: number;
  horizon?: number;
  seed?: number;
  assistant?: string;
  checkpoint?: string;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, public code: string) {
    super(`${status}: ${code}`);
  }
}

async function parse<T>(res: Response): Promise<T> {
  const body = await res.json();
  if (!res.ok) {
    throw new ApiError(res.status, body?.error ?? "unknown_error");
  }
  return body as T;
}

export class PlayClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch.bind(globalThis),
  ) {}

  createSession(req: SessionRequest): Promise<SessionResponse> {
    return this.fetchImpl(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    }).then((r) => parse<SessionResponse>(r));
  }

  getSession(id: string): Promise<SessionResponse> {
    return this.fetchImpl(`${this.baseUrl}/sessions/${id}`).then((r) =>
      parse<SessionResponse>(r),
    );
  }

  step(id: string, humanAction: number): Promise<StepResponse> {
    return this.fetchImpl(`${this.baseUrl}/sessions/${id}/step`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ human_action: humanAction }),
    }).then((r) => parse<StepResponse>(r));
  }

  deleteSession(id: string): Promise<void> {
    return this.fetchImpl(`${this.baseUrl}/sessions/${id}`, {
      method: "DELETE",
    }).then(() => undefined);
  }
}
