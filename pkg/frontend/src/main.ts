/** Explorer wiring: pan/zoom state timelines, flow view, bus chart, and a
 * findings list with click-to-jump. Everything on screen derives from the
 * serve API for the current ViewState; nothing is recomputed client-side. */

import { ApiClient } from "./api.js";
import { drawSeries } from "./chart.js";
import { severityColor } from "./color.js";
import { flowBounds, flowRows } from "./flows.js";
import {
  Bounds,
  ViewState,
  fetchResolution,
  initialView,
  jumpToFinding,
  pan,
  zoomAround,
} from "./state.js";
import { LABEL_GUTTER, ROW_GAP, ROW_HEIGHT, drawRows, layoutRow } from "./timeline.js";
import type { Finding, TreeResponse } from "./types.js";

// same-origin by default; override with ?api=http://host:port when the
// static files are served separately from the model API
const api = new ApiClient(new URLSearchParams(location.search).get("api") ?? "");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

class Explorer {
  private view!: ViewState;
  private bounds!: Bounds;
  private tree!: TreeResponse;
  private findings: Finding[] = [];
  private inflight: AbortController | null = null;

  private canvas = el<HTMLCanvasElement>("timeline");
  private chart = el<HTMLCanvasElement>("buschart");
  private flowCanvas = el<HTMLCanvasElement>("flowview");
  private status = el<HTMLDivElement>("status");

  async start(): Promise<void> {
    this.tree = await api.tree();
    this.bounds = { start: this.tree.tree_start, end: this.tree.tree_end };
    this.view = initialView(this.bounds, this.timelineWidth());
    this.populatePathPicker();
    await this.populateFindings();
    await this.populateFlows();
    this.bindControls();
    await this.refresh();
  }

  private timelineWidth(): number {
    return Math.max(this.canvas.width - LABEL_GUTTER, 100);
  }

  private populatePathPicker(): void {
    const picker = el<HTMLSelectElement>("paths");
    const leaves = this.tree.paths.filter((p) => p.split("/").length >= 2);
    for (const path of leaves) {
      const option = document.createElement("option");
      option.value = path;
      option.textContent = path;
      picker.appendChild(option);
    }
    picker.addEventListener("change", () => {
      this.view.selectedPaths = [...picker.selectedOptions].map((o) => o.value);
      void this.refresh();
    });
  }

  private async populateFindings(): Promise<void> {
    this.findings = await api.findings();
    const list = el<HTMLUListElement>("findings");
    list.innerHTML = "";
    if (!this.findings.length) {
      const li = document.createElement("li");
      li.textContent = "no findings";
      list.appendChild(li);
      return;
    }
    this.findings.forEach((finding, index) => {
      const li = document.createElement("li");
      const badge = document.createElement("span");
      badge.textContent = finding.severity;
      badge.style.color = severityColor(finding.severity);
      li.appendChild(badge);
      li.appendChild(document.createTextNode(` ${finding.kind}: ${finding.narrative}`));
      li.addEventListener("click", () => {
        this.view = jumpToFinding(this.view, this.bounds, finding, index);
        this.syncPicker();
        void this.refresh();
      });
      list.appendChild(li);
    });
  }

  private async populateFlows(): Promise<void> {
    const index = await api.flowIndex();
    const picker = el<HTMLSelectElement>("flowpick");
    for (const entry of index.flows.slice(0, 500)) {
      const option = document.createElement("option");
      option.value = entry.id;
      option.textContent = `${entry.id} (${entry.command}${entry.complete ? "" : ", incomplete"})`;
      picker.appendChild(option);
    }
    picker.addEventListener("change", () => void this.showFlow(picker.value));
  }

  private syncPicker(): void {
    const picker = el<HTMLSelectElement>("paths");
    for (const option of picker.options) {
      option.selected = this.view.selectedPaths.includes(option.value);
    }
  }

  private bindControls(): void {
    el<HTMLButtonElement>("zoomin").addEventListener("click", () => {
      this.view = zoomAround(this.view, this.bounds, 2);
      void this.refresh();
    });
    el<HTMLButtonElement>("zoomout").addEventListener("click", () => {
      this.view = zoomAround(this.view, this.bounds, 0.5);
      void this.refresh();
    });
    el<HTMLButtonElement>("left").addEventListener("click", () => {
      this.view = pan(this.view, this.bounds, -0.25);
      void this.refresh();
    });
    el<HTMLButtonElement>("right").addEventListener("click", () => {
      this.view = pan(this.view, this.bounds, 0.25);
      void this.refresh();
    });
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const frac = (ev.offsetX - LABEL_GUTTER) / this.timelineWidth();
      this.view = zoomAround(this.view, this.bounds, ev.deltaY < 0 ? 1.5 : 1 / 1.5, frac);
      void this.refresh();
    });
  }

  private async refresh(): Promise<void> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const { t0, t1 } = this.view;
    this.status.textContent = `window ${t0} .. ${t1} ns (${((t1 - t0) / 1e6).toFixed(3)} ms)`;
    try {
      const width = this.timelineWidth();
      const rows = await Promise.all(
        this.view.selectedPaths.map(async (path) => {
          const states = await api.states(path, t0, t1, fetchResolution(this.view), controller.signal);
          return layoutRow(path, states.intervals, t0, t1, width);
        }),
      );
      this.canvas.height = Math.max(rows.length, 1) * (ROW_HEIGHT + ROW_GAP) + 12;
      const ctx = this.canvas.getContext("2d");
      if (ctx) {
        drawRows(ctx, rows, width);
        if (!rows.length) {
          ctx.fillStyle = "#888";
          ctx.fillText("select attribute rows above to see their timelines", 8, 18);
        }
      }
      const [seriesOut, seriesIn] = await Promise.all([
        api.series("bus_volume_out", 1_000_000, controller.signal),
        api.series("bus_volume_in", 1_000_000, controller.signal),
      ]);
      const chartCtx = this.chart.getContext("2d");
      if (chartCtx) {
        drawSeries(
          chartCtx,
          [
            { series: seriesIn, color: "#3a6fd0" },
            { series: seriesOut, color: "#d03030" },
          ],
          t0,
          t1,
          this.chart.width,
          this.chart.height,
        );
      }
    } catch (err) {
      if ((err as Error).name !== "AbortError") {
        this.status.textContent = `error: ${(err as Error).message}`;
      }
    }
  }

  private async showFlow(id: string): Promise<void> {
    try {
      const flow = await api.flow(id);
      const rows = flowRows(flow);
      const { start, end } = flowBounds(flow);
      const width = this.flowCanvas.width - LABEL_GUTTER;
      const layouts = rows.map((row) => layoutRow(row.key, row.intervals, start, end, width));
      this.flowCanvas.height = rows.length * (ROW_HEIGHT + ROW_GAP) + 12;
      const ctx = this.flowCanvas.getContext("2d");
      if (ctx) drawRows(ctx, layouts, width);
    } catch (err) {
      this.status.textContent = `error: ${(err as Error).message}`;
    }
  }
}

new Explorer().start().catch((err) => {
  el<HTMLDivElement>("status").textContent = `failed to load: ${err.message}`;
});
