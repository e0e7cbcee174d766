import { describe, expect, it } from "vitest";

import {
  JUMP_PAD_FRAC,
  clampWindow,
  initialView,
  jumpToFinding,
  pan,
  zoomAround,
} from "../src/state.js";
import type { Finding } from "../src/types.js";

const bounds = { start: 1000, end: 101000 };

function finding(t0: number, t1: number, paths: string[] = []): Finding {
  return {
    kind: "DoubleFree",
    severity: "critical",
    t0,
    t1,
    paths,
    evidence: {},
    narrative: "x",
  };
}

describe("view window", () => {
  it("starts at the experiment bounds", () => {
    const view = initialView(bounds, 800);
    expect(view.t0).toBe(1000);
    expect(view.t1).toBe(101000);
  });

  it("clamps panning at the edges", () => {
    let view = { ...initialView(bounds, 800), t0: 1000, t1: 11000 };
    view = pan(view, bounds, -1);
    expect(view.t0).toBe(1000);
    expect(view.t1 - view.t0).toBe(10000);
    view = pan(view, bounds, 1000);
    expect(view.t1).toBe(101000);
  });

  it("zoom keeps the anchor point fixed and preserves span arithmetic", () => {
    const view = { ...initialView(bounds, 800), t0: 20000, t1: 40000 };
    const zoomed = zoomAround(view, bounds, 2, 0.5);
    expect(zoomed.t1 - zoomed.t0).toBe(10000);
    const anchorBefore = view.t0 + (view.t1 - view.t0) / 2;
    const anchorAfter = zoomed.t0 + (zoomed.t1 - zoomed.t0) / 2;
    expect(Math.abs(anchorAfter - anchorBefore)).toBeLessThanOrEqual(1);
  });

  it("zoom out re-clamps to bounds", () => {
    const view = { ...initialView(bounds, 800), t0: 1000, t1: 3000 };
    const out = zoomAround(view, bounds, 1 / 1e6);
    expect(out.t0).toBeGreaterThanOrEqual(bounds.start);
    expect(out.t1).toBeLessThanOrEqual(bounds.end);
  });

  it("never lets the window invert", () => {
    const clamped = clampWindow(
      { ...initialView(bounds, 800), t0: 5000, t1: 5000 },
      bounds,
    );
    expect(clamped.t1).toBeGreaterThan(clamped.t0);
  });
});

describe("jump to finding", () => {
  it("pads the finding range by 20% on each side", () => {
    const view = initialView(bounds, 800);
    const f = finding(50000, 60000, ["Threads/n1:11/Operation"]);
    const next = jumpToFinding(view, bounds, f, 0);
    const pad = (f.t1 - f.t0) * JUMP_PAD_FRAC;
    expect(next.t0).toBe(f.t0 - pad);
    expect(next.t1).toBe(f.t1 + pad);
    expect(next.selectedFinding).toBe(0);
  });

  it("auto-selects the involved attribute rows", () => {
    const view = initialView(bounds, 800);
    const f = finding(50000, 60000, [
      "Threads/n1:11/Operation",
      "Threads/n1:12/Operation",
    ]);
    const next = jumpToFinding(view, bounds, f, 3);
    expect(next.selectedPaths).toContain("Threads/n1:11/Operation");
    expect(next.selectedPaths).toContain("Threads/n1:12/Operation");
  });

  it("clamps the padded window to experiment bounds", () => {
    const view = initialView(bounds, 800);
    const f = finding(1000, 101000);
    const next = jumpToFinding(view, bounds, f, 0);
    expect(next.t0).toBeGreaterThanOrEqual(bounds.start);
    expect(next.t1).toBeLessThanOrEqual(bounds.end);
  });

  it("gives zero-length findings a visible window", () => {
    const view = initialView(bounds, 800);
    const next = jumpToFinding(view, bounds, finding(50000, 50000), 0);
    expect(next.t1).toBeGreaterThan(next.t0);
  });
});
