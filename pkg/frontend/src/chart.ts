/** Pure layout computation for the accuracy-vs-round chart: domains,
 * tick positions, legend entries, and the pixel coordinates of every
 * plotted point. Rendering consumes this; tests assert on it directly. */

import type { Curve, CurvePoint, CurveSet } from "./csv.js";
import { textWidth } from "./font.js";
import type { Color } from "./raster.js";

export const PALETTE: readonly Color[] = [
  [214, 39, 40], // red
  [31, 119, 180], // blue
  [44, 160, 44], // green
  [255, 127, 14], // orange
  [148, 103, 189], // purple
  [140, 86, 75], // brown
];

export interface Tick {
  readonly value: number;
  readonly position: number; // pixel along the axis
  readonly label: string;
}

export interface PixelPoint {
  readonly x: number;
  readonly y: number;
}

export interface SeriesLayout {
  readonly label: string;
  readonly color: Color;
  /** The untouched input points, in input order. */
  readonly points: readonly CurvePoint[];
  /** One pixel location per input point, same order. */
  readonly pixels: readonly PixelPoint[];
}

export interface LegendEntry {
  readonly label: string;
  readonly color: Color;
}

export interface PlotRect {
  readonly left: number;
  readonly top: number;
  readonly right: number;
  readonly bottom: number;
}

export interface Layout {
  readonly width: number;
  readonly height: number;
  readonly title: string;
  readonly plot: PlotRect;
  readonly xDomain: readonly [number, number];
  readonly yDomain: readonly [number, number];
  readonly xTicks: readonly Tick[];
  readonly yTicks: readonly Tick[];
  readonly series: readonly SeriesLayout[];
  /** One entry per input curve, in input order. */
  readonly legend: readonly LegendEntry[];
}

export interface LayoutOptions {
  readonly width?: number;
  readonly height?: number;
  readonly title?: string;
}

export class ChartError extends Error {
  override readonly name = "ChartError";
}

function niceStep(rough: number): number {
  const magnitude = 10 ** Math.floor(Math.log10(rough));
  for (const multiple of [1, 2, 5, 10]) {
    if (rough <= multiple * magnitude) return multiple * magnitude;
  }
  return 10 * magnitude;
}

function formatTick(value: number): string {
  return Number.isInteger(value) ? String(value) : value.toFixed(2);
}

function xDomainOf(curves: readonly Curve[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const curve of curves) {
    for (const point of curve.points) {
      if (point.round < lo) lo = point.round;
      if (point.round > hi) hi = point.round;
    }
  }
  if (!Number.isFinite(lo)) {
    throw new ChartError("nothing to plot: every curve is empty");
  }
  if (lo === hi) {
    return [lo - 1, hi + 1]; // a single column of points still needs width
  }
  return [lo, hi];
}

export function computeLayout(curveSet: CurveSet, options: LayoutOptions = {}): Layout {
  const width = options.width ?? 640;
  const height = options.height ?? 400;
  const title = options.title ?? "";
  if (width < 160 || height < 120) {
    throw new ChartError(`canvas ${width}x${height} is too small to chart on`);
  }

  const [xLo, xHi] = xDomainOf(curveSet.curves);
  const yLo = 0;
  const yHi = 1;

  const plot: PlotRect = {
    left: 46,
    top: title ? 26 : 12,
    right: width - 14,
    bottom: height - 30,
  };

  const sx = (value: number): number =>
    plot.left + Math.round(((value - xLo) / (xHi - xLo)) * (plot.right - plot.left));
  const sy = (value: number): number =>
    plot.bottom - Math.round(((value - yLo) / (yHi - yLo)) * (plot.bottom - plot.top));

  const step = niceStep((xHi - xLo) / 6);
  const xValues: number[] = [xLo];
  for (let v = Math.ceil(xLo / step) * step; v < xHi; v += step) {
    if (v > xLo) xValues.push(v);
  }
  xValues.push(xHi);
  const xTicks = xValues.map((value) => ({
    value,
    position: sx(value),
    label: formatTick(value),
  }));

  const yTicks: Tick[] = [];
  for (let i = 0; i <= 5; i++) {
    const value = i / 5;
    yTicks.push({ value, position: sy(value), label: value.toFixed(1) });
  }

  const series = curveSet.curves.map((curve, index) => ({
    label: curve.label,
    color: PALETTE[index % PALETTE.length],
    points: curve.points,
    pixels: curve.points.map((p) => ({ x: sx(p.round), y: sy(p.accuracy) })),
  }));

  const legend = series.map(({ label, color }) => ({ label, color }));

  return {
    width,
    height,
    title,
    plot,
    xDomain: [xLo, xHi],
    yDomain: [yLo, yHi],
    xTicks,
    yTicks,
    series,
    legend,
  };
}

/** Pixel footprint of the legend box for a layout (render draws it at the
 * plot's top-right corner, inset by a small margin). */
export function legendBox(layout: Layout): { x: number; y: number; w: number; h: number } {
  const rowHeight = 12;
  const swatch = 14;
  const pad = 5;
  const textW = Math.max(0, ...layout.legend.map((e) => textWidth(e.label)));
  const w = pad + swatch + 4 + textW + pad;
  const h = pad * 2 + layout.legend.length * rowHeight - (layout.legend.length ? 4 : 0);
  return {
    x: layout.plot.right - w - 6,
    y: layout.plot.top + 6,
    w,
    h,
  };
}
