/** Canvas renderer: grid, pieces, and the per-action diagnostic bars.
 *
 * Colors follow the benchmark's convention: human orange, goal green,
 * blocks purple.
 */

import type { GridStateWire } from "./api";

export const COLORS = {
  background: "#ffffff",
  gridLine: "#d0d0d0",
  human: "#e8841a",
  goal: "#3cab54",
  block: "#7d4fa8",
  barPositive: "#4a7fd4",
  barNegative: "#c25555",
};

export function cellRect(
  cell: number,
  width: number,
  size: number,
): { x: number; y: number } {
  return { x: (cell % width) * size, y: Math.floor(cell / width) * size };
}

export function drawState(
  ctx: CanvasRenderingContext2D,
  state: GridStateWire,
  cellSize: number,
): void {
  const w = state.width * cellSize;
  const h = state.height * cellSize;
  ctx.fillStyle = COLORS.background;
  ctx.fillRect(0, 0, w, h);

  ctx.strokeStyle = COLORS.gridLine;
  ctx.lineWidth = 1;
  for (let i = 0; i <= state.width; i++) {
    ctx.beginPath();
    ctx.moveTo(i * cellSize + 0.5, 0);
    ctx.lineTo(i * cellSize + 0.5, h);
    ctx.stroke();
  }
  for (let j = 0; j <= state.height; j++) {
    ctx.beginPath();
    ctx.moveTo(0, j * cellSize + 0.5);
    ctx.lineTo(w, j * cellSize + 0.5);
    ctx.stroke();
  }

  const goal = cellRect(state.goal, state.width, cellSize);
  ctx.fillStyle = COLORS.goal;
  ctx.fillRect(goal.x + 2, goal.y + 2, cellSize - 4, cellSize - 4);

  ctx.fillStyle = COLORS.block;
  for (const b of state.blocks) {
    const r = cellRect(b, state.width, cellSize);
    ctx.fillRect(r.x + 4, r.y + 4, cellSize - 8, cellSize - 8);
  }

  const hum = cellRect(state.human, state.width, cellSize);
  ctx.fillStyle = COLORS.human;
  ctx.beginPath();
  ctx.arc(
    hum.x + cellSize / 2,
    hum.y + cellSize / 2,
    cellSize / 2 - 5,
    0,
    2 * Math.PI,
  );
  ctx.fill();
}

/** Horizontal bar chart of the assistant's per-action reward estimates. */
export function drawDiagnostics(
  ctx: CanvasRenderingContext2D,
  bars: number[],
  width: number,
  rowHeight: number,
): void {
  ctx.clearRect(0, 0, width, bars.length * rowHeight);
  if (bars.length === 0) return;
  const maxAbs = Math.max(...bars.map(Math.abs), 1e-9);
  const mid = width / 2;
  bars.forEach((v, i) => {
    const len = (Math.abs(v) / maxAbs) * (width / 2 - 4);
    ctx.fillStyle = v >= 0 ? COLORS.barPositive : COLORS.barNegative;
    const x = v >= 0 ? mid : mid - len;
    ctx.fillRect(x, i * rowHeight + 2, len, rowHeight - 4);
    ctx.strokeStyle = COLORS.gridLine;
    ctx.beginPath();
    ctx.moveTo(mid, i * rowHeight);
    ctx.lineTo(mid, (i + 1) * rowHeight);
    ctx.stroke();
  });
}

/** Label for a robot action index: 0 is no-op, then (block, direction). */
export function robotActionLabel(action: number | null): string {
  if (action === null) return "-";
  if (action === 0) return "no-op";
  const dir = ["up", "down", "left", "right"][(action - 1) % 4];
  const block = Math.floor((action - 1) / 4);
  return `block ${block} ${dir}`;
}
