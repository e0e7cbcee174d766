/** Timeline row geometry and canvas painting.
 *
 * Layout is pure math (testable without a DOM); interval merging for
 * sub-pixel runs already happened server-side via the resolution
 * parameter, so a row never receives more intervals than ~one per pixel.
 */

import { labelColor } from "./color.js";
import type { StateInterval } from "./types.js";

export interface Rect {
  x: number;
  w: number;
  label: string;
  color: string;
}

export interface RowLayout {
  path: string;
  rects: Rect[];
}

export function timeToX(t: number, t0: number, t1: number, width: number): number {
  return ((t - t0) / (t1 - t0)) * width;
}

export function xToTime(x: number, t0: number, t1: number, width: number): number {
  return Math.round(t0 + (x / width) * (t1 - t0));
}

export function layoutRow(
  path: string,
  intervals: StateInterval[],
  t0: number,
  t1: number,
  width: number,
): RowLayout {
  const rects: Rect[] = [];
  for (const iv of intervals) {
    if (iv.value === null) continue;
    const x0 = Math.max(0, timeToX(iv.t0, t0, t1, width));
    const x1 = Math.min(width, timeToX(Math.max(iv.t1, iv.t0 + 1), t0, t1, width));
    if (x1 <= 0 || x0 >= width) continue;
    rects.push({
      x: x0,
      w: Math.max(x1 - x0, 0.5),
      label: String(iv.value),
      color: labelColor(iv.value),
    });
  }
  return { path, rects };
}

/** Total drawn time inside the window; invariant under zoom re-fetches. */
export function visibleDuration(intervals: StateInterval[], t0: number, t1: number): number {
  let total = 0;
  for (const iv of intervals) {
    if (iv.value === null) continue;
    total += Math.max(0, Math.min(iv.t1, t1) - Math.max(iv.t0, t0));
  }
  return total;
}

export const ROW_HEIGHT = 26;
export const ROW_GAP = 6;
export const LABEL_GUTTER = 230;

export function drawRows(
  ctx: CanvasRenderingContext2D,
  rows: RowLayout[],
  width: number,
): void {
  ctx.clearRect(0, 0, width + LABEL_GUTTER, rows.length * (ROW_HEIGHT + ROW_GAP) + 10);
  ctx.font = "12px system-ui, sans-serif";
  rows.forEach((row, i) => {
    const y = 4 + i * (ROW_HEIGHT + ROW_GAP);
    ctx.fillStyle = "#444";
    ctx.fillText(shortenPath(row.path), 4, y + ROW_HEIGHT / 2 + 4, LABEL_GUTTER - 10);
    ctx.fillStyle = "#f2f2f2";
    ctx.fillRect(LABEL_GUTTER, y, width, ROW_HEIGHT);
    for (const rect of row.rects) {
      ctx.fillStyle = rect.color;
      ctx.fillRect(LABEL_GUTTER + rect.x, y, rect.w, ROW_HEIGHT);
      if (rect.w > 40) {
        ctx.fillStyle = "#fff";
        ctx.fillText(rect.label, LABEL_GUTTER + rect.x + 3, y + ROW_HEIGHT / 2 + 4, rect.w - 6);
      }
    }
  });
}

export function shortenPath(path: string): string {
  return path.length > 34 ? "…" + path.slice(-33) : path;
}
