/** Bus volume chart: series -> polyline points, plus canvas painting. */

import type { SeriesResponse } from "./types.js";

export interface Point {
  x: number;
  y: number;
}

export function seriesToPolyline(
  series: SeriesResponse,
  t0: number,
  t1: number,
  width: number,
  height: number,
  yMax?: number,
): Point[] {
  const points: Point[] = [];
  const top = yMax ?? Math.max(...series.values, 1);
  for (let i = 0; i < series.values.length; i++) {
    const t = series.origin + i * series.bucket_ns;
    if (t + series.bucket_ns < t0 || t > t1) continue;
    const x = ((t - t0) / (t1 - t0)) * width;
    const y = height - (series.values[i] / top) * height;
    points.push({ x, y });
  }
  return points;
}

export function drawSeries(
  ctx: CanvasRenderingContext2D,
  layers: { series: SeriesResponse; color: string }[],
  t0: number,
  t1: number,
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#fafafa";
  ctx.fillRect(0, 0, width, height);
  const yMax = Math.max(1, ...layers.flatMap((l) => l.series.values));
  for (const { series, color } of layers) {
    const points = seriesToPolyline(series, t0, t1, width, height, yMax);
    if (!points.length) continue;
    ctx.strokeStyle = color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(points[0].x, points[0].y);
    for (const p of points.slice(1)) ctx.lineTo(p.x, p.y);
    ctx.stroke();
  }
}
