/** Keyboard mapping and the depth-1 input queue.
 *
 * Human action indices: 0=up, 1=down, 2=left, 3=right, 4=stay.
 * At most one step request is in flight; a key pressed during flight is
 * queued, and a newer key replaces the queued one (newest wins).
 */

export const KEY_TO_ACTION: Record<string, number> = {
  ArrowUp: 0,
  ArrowDown: 1,
  ArrowLeft: 2,
  ArrowRight: 3,
  " ": 4,
};

export class InputQueue {
  private pending: number | null = null;
  private inFlight = false;

  /** Returns the action to send now, or null if it was queued/ignored. */
  press(action: number): number | null {
    if (this.inFlight) {
      this.pending = action;
      return null;
    }
    this.inFlight = true;
    return action;
  }

  /** Call when a step response lands; returns the queued action to send
   * next (already marked in-flight), or null when idle. */
  settle(): number | null {
    if (this.pending !== null) {
      const next = this.pending;
      this.pending = null;
      return next;
    }
    this.inFlight = false;
    return null;
  }

  reset(): void {
    this.pending = null;
    this.inFlight = false;
  }

  get busy(): boolean {
    return this.inFlight;
  }
}
