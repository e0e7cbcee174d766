/** View state: the visible time window, selected rows, and selection.
 *
 * The UI is stateless with respect to the model - every pixel is derived
 * from API responses for the current ViewState, so replaying a ViewState
 * against the same model reproduces the same screen.
 */

import type { Finding } from "./types.js";

export interface ViewState {
  t0: number;
  t1: number;
  selectedPaths: string[];
  selectedFinding: number | null;
  selectedFlow: string | null;
  resolutionPx: number;
}

export interface Bounds {
  start: number;
  end: number;
}

export function initialView(bounds: Bounds, resolutionPx: number): ViewState {
  return {
    t0: bounds.start,
    t1: Math.max(bounds.end, bounds.start + 1),
    selectedPaths: [],
    selectedFinding: null,
    selectedFlow: null,
    resolutionPx,
  };
}

/** Keep t0 < t1 and both inside the experiment bounds. */
export function clampWindow(view: ViewState, bounds: Bounds): ViewState {
  const span = Math.max(1, Math.min(view.t1 - view.t0, bounds.end - bounds.start));
  let t0 = Math.max(bounds.start, Math.min(view.t0, bounds.end - span));
  return { ...view, t0, t1: t0 + span };
}

/** Zoom by `factor` keeping the time under `anchorFrac` (0..1) fixed. */
export function zoomAround(
  view: ViewState,
  bounds: Bounds,
  factor: number,
  anchorFrac = 0.5,
): ViewState {
  const span = view.t1 - view.t0;
  const newSpan = Math.max(1, Math.round(span / factor));
  const anchor = view.t0 + span * anchorFrac;
  const t0 = Math.round(anchor - newSpan * anchorFrac);
  return clampWindow({ ...view, t0, t1: t0 + newSpan }, bounds);
}

/** Shift the window by a fraction of its span (negative = left). */
export function pan(view: ViewState, bounds: Bounds, frac: number): ViewState {
  const delta = Math.round((view.t1 - view.t0) * frac);
  return clampWindow({ ...view, t0: view.t0 + delta, t1: view.t1 + delta }, bounds);
}

export const JUMP_PAD_FRAC = 0.2;

/** Window for a finding: its time range padded 20% on each side, with the
 * involved attribute rows auto-selected. */
export function jumpToFinding(
  view: ViewState,
  bounds: Bounds,
  finding: Finding,
  index: number,
): ViewState {
  const span = Math.max(finding.t1 - finding.t0, 1);
  const pad = Math.round(span * JUMP_PAD_FRAC);
  const next: ViewState = {
    ...view,
    t0: finding.t0 - pad,
    t1: finding.t1 + pad,
    selectedFinding: index,
    selectedPaths: dedupe([...finding.paths.filter(isRowPath), ...view.selectedPaths]),
  };
  return clampWindow(next, bounds);
}

function isRowPath(p: string): boolean {
  // findings may reference entity prefixes; rows are leaf attributes
  return p.includes("/");
}

function dedupe(items: string[]): string[] {
  return [...new Set(items)];
}

/** Sub-pixel merge threshold handed to the server as `resolution`. */
export function fetchResolution(view: ViewState): number {
  return Math.max(view.resolutionPx, 1);
}
