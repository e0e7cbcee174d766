/** Flow view: group one flow's segments into per-thread rows so the
 * cross-node path reads top to bottom in host order. */

import type { Flow, FlowSegment, StateInterval } from "./types.js";

export interface FlowRow {
  key: string; // "<host> tid <tid>"
  intervals: StateInterval[];
}

export function flowRows(flow: Flow): FlowRow[] {
  const byThread = new Map<string, FlowSegment[]>();
  for (const seg of flow.segments) {
    const key = `${seg.host} tid ${seg.tid}`;
    const list = byThread.get(key);
    if (list) list.push(seg);
    else byThread.set(key, [seg]);
  }
  return [...byThread.entries()]
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([key, segs]) => ({
      key,
      intervals: segs
        .slice()
        .sort((a, b) => a.t0 - b.t0 || a.t1 - b.t1)
        .map((s) => ({ t0: s.t0, t1: s.t1, value: s.label })),
    }));
}

export function flowBounds(flow: Flow): { start: number; end: number } {
  const start = Math.min(...flow.segments.map((s) => s.t0));
  const end = Math.max(...flow.segments.map((s) => s.t1));
  return { start, end: Math.max(end, start + 1) };
}
