/** Browser entry point: session lifecycle, keyboard loop, polling, render. */

import { PlayClient, type SessionRequest } from "./api";
import { SessionMirror } from "./mirror";
import { InputQueue, KEY_TO_ACTION } from "./input";
import { drawState, drawDiagnostics, robotActionLabel } from "./render";

const CELL_SIZE = 64;
const POLL_MS = 250;

function serverUrl(): string {
  const param = new URLSearchParams(window.location.search).get("server");
  return (param ?? "http://127.0.0.1:8000").replace(/\/$/, "");
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const client = new PlayClient(serverUrl());
const mirror = new SessionMirror();
const queue = new InputQueue();

const canvas = el<HTMLCanvasElement>("grid");
const diagCanvas = el<HTMLCanvasElement>("diagnostics");
const statusLine = el<HTMLDivElement>("status");
const banner = el<HTMLDivElement>("banner");
const overlay = el<HTMLDivElement>("overlay");
const assistantSelect = el<HTMLSelectElement>("assistant");
const seedInput = el<HTMLInputElement>("seed");
const blocksInput = el<HTMLInputElement>("blocks");
const newEpisodeBtn = el<HTMLButtonElement>("new-episode");

function render(): void {
  const state = mirror.state;
  if (!state) return;
  canvas.width = state.width * CELL_SIZE;
  canvas.height = state.height * CELL_SIZE;
  const ctx = canvas.getContext("2d");
  if (ctx) drawState(ctx, state, CELL_SIZE);
  const dctx = diagCanvas.getContext("2d");
  if (dctx) drawDiagnostics(dctx, mirror.diagnosticBars, diagCanvas.width, 18);
  statusLine.textContent =
    `steps ${mirror.steps}` +
    ` | assistant ${mirror.assistant}` +
    ` | last robot move: ${robotActionLabel(state.last_robot_action)}`;
  if (mirror.done) {
    overlay.textContent = mirror.success
      ? `goal reached in ${mirror.steps} steps - press New episode`
      : `out of time after ${mirror.steps} steps - press New episode`;
    overlay.style.display = "block";
  } else {
    overlay.style.display = "none";
  }
}

function showError(message: string): void {
  banner.textContent = `${message} (retry with New episode)`;
  banner.style.display = "block";
}

async function newEpisode(): Promise<void> {
  banner.style.display = "none";
  queue.reset();
  const req: SessionRequest = {
    width: 5,
    height: 5,
    goal_cell: 24,
    horizon: 40,
    seed: parseInt(seedInput.value, 10) || 0,
    num_blocks: parseInt(blocksInput.value, 10) || 2,
    assistant: assistantSelect.value,
  };
  if (assistantSelect.value === "esr") {
    const ckpt = new URLSearchParams(window.location.search).get("checkpoint");
    if (ckpt) req.checkpoint = ckpt;
  }
  try {
    if (mirror.sessionId) {
      client.deleteSession(mirror.sessionId).catch(() => undefined);
    }
    const res = await client.createSession(req);
    mirror.begin(res.session_id, res.state, assistantSelect.value);
    render();
  } catch (err) {
    showError(`could not create session: ${err}`);
  }
}

async function sendStep(action: number): Promise<void> {
  if (!mirror.sessionId) return;
  try {
    const res = await client.step(mirror.sessionId, action);
    mirror.applyStep(action, res.robot_action, res.state);
    render();
  } catch (err) {
    showError(`step failed: ${err}`);
  } finally {
    const next = queue.settle();
    if (next !== null && !mirror.done) void sendStep(next);
  }
}

window.addEventListener("keydown", (ev) => {
  const action = KEY_TO_ACTION[ev.key];
  if (action === undefined || mirror.done || !mirror.sessionId) return;
  ev.preventDefault();
  const toSend = queue.press(action);
  if (toSend !== null) void sendStep(toSend);
});

newEpisodeBtn.addEventListener("click", () => void newEpisode());

setInterval(() => {
  if (!mirror.sessionId || queue.busy) return;
  client
    .getSession(mirror.sessionId)
    .then((res) => {
      mirror.applyPoll(res.state);
      render();
    })
    .catch(() => undefined);
}, POLL_MS);

void newEpisode();
