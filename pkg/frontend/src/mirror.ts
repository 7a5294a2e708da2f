/** Client-side view of a session.
 *
 * The mirror never simulates: every field is copied from the most recent
 * server response, so rendered frames correspond one-to-one to server
 * states. A step log is kept so tests can assert against the server's.
 */

import type { GridStateWire } from "./api";

export interface StepLogEntry {
  humanAction: number;
  robotAction: number | null;
  state: GridStateWire;
}

export class SessionMirror {
  sessionId: string | null = null;
  state: GridStateWire | null = null;
  assistant = "none";
  stepLog: StepLogEntry[] = [];

  begin(sessionId: string, state: GridStateWire, assistant: string): void {
    this.sessionId = sessionId;
    this.state = state;
    this.assistant = assistant;
    this.stepLog = [];
  }

  /** Record a step response; humanAction is the action that produced it. */
  applyStep(
    humanAction: number,
    robotAction: number | null,
    state: GridStateWire,
  ): void {
    this.state = state;
    this.stepLog.push({ humanAction, robotAction, state });
  }

  /** Refresh from a GET poll (authoritative overwrite, no log entry). */
  applyPoll(state: GridStateWire): void {
    this.state = state;
  }

  get done(): boolean {
    return this.state?.done ?? false;
  }

  get steps(): number {
    return this.state?.steps ?? 0;
  }

  get success(): boolean {
    return this.state !== null && this.state.human === this.state.goal;
  }

  get diagnosticBars(): number[] {
    return this.state?.diagnostics?.esr_reward_per_action ?? [];
  }
}
