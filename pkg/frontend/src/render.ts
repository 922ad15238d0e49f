/** Turn a curve set into a finished PNG: axes, gridlines, tick labels,
 * polylines, legend, optional title. Everything is integer pixel work on
 * a fixed palette, so the same input always yields the same bytes. */

import {
  ChartError,
  Layout,
  LayoutOptions,
  computeLayout,
  legendBox,
} from "./chart.js";
import type { CurveSet } from "./csv.js";
import { textWidth } from "./font.js";
import { encodePng } from "./png.js";
import { Canvas, Color } from "./raster.js";

const BACKGROUND: Color = [255, 255, 255];
const AXIS: Color = [30, 30, 30];
const GRID: Color = [225, 225, 225];
const TEXT: Color = [30, 30, 30];

export interface Rendered {
  readonly png: Buffer;
  readonly layout: Layout;
}

export function render(curveSet: CurveSet, options: LayoutOptions = {}): Rendered {
  const layout = computeLayout(curveSet, options);
  const { plot } = layout;
  const canvas = new Canvas(layout.width, layout.height, BACKGROUND);

  // gridlines behind everything else
  for (const tick of layout.yTicks) {
    if (tick.value > 0) {
      canvas.hline(plot.left + 1, plot.right, tick.position, GRID);
    }
  }

  // axes
  canvas.vline(plot.left, plot.top, plot.bottom, AXIS);
  canvas.hline(plot.left, plot.right, plot.bottom, AXIS);

  // y ticks and labels
  for (const tick of layout.yTicks) {
    canvas.hline(plot.left - 3, plot.left, tick.position, AXIS);
    canvas.text(
      plot.left - 6 - textWidth(tick.label),
      tick.position - 3,
      tick.label,
      TEXT,
    );
  }

  // x ticks and labels, skipping labels that would collide with a neighbor
  let lastLabelEnd = -Infinity;
  for (const tick of layout.xTicks) {
    canvas.vline(tick.position, plot.bottom, plot.bottom + 3, AXIS);
    const w = textWidth(tick.label);
    const x = tick.position - Math.floor(w / 2);
    if (x > lastLabelEnd + 4) {
      canvas.text(x, plot.bottom + 6, tick.label, TEXT);
      lastLabelEnd = x + w;
    }
  }

  // axis names
  canvas.text(
    plot.left + Math.floor((plot.right - plot.left) / 2) - Math.floor(textWidth("ROUND") / 2),
    layout.height - 10,
    "ROUND",
    TEXT,
  );
  canvas.text(2, plot.top - 2, "ACC", TEXT);

  if (layout.title) {
    canvas.text(
      Math.max(2, Math.floor((layout.width - textWidth(layout.title)) / 2)),
      4,
      layout.title,
      TEXT,
    );
  }

  // the curves themselves, in input order
  for (const series of layout.series) {
    const px = series.pixels;
    if (px.length === 1) {
      canvas.fillRect(px[0].x - 1, px[0].y - 1, 3, 3, series.color);
      continue;
    }
    for (let i = 1; i < px.length; i++) {
      canvas.line(px[i - 1].x, px[i - 1].y, px[i].x, px[i].y, series.color, 2);
    }
  }

  // legend last so it stays legible over dense charts
  if (layout.legend.length > 0) {
    const box = legendBox(layout);
    canvas.fillRect(box.x, box.y, box.w, box.h, BACKGROUND);
    canvas.strokeRect(box.x, box.y, box.w, box.h, AXIS);
    layout.legend.forEach((entry, i) => {
      const rowY = box.y + 5 + i * 12;
      canvas.hline(box.x + 5, box.x + 5 + 13, rowY + 3, entry.color);
      canvas.hline(box.x + 5, box.x + 5 + 13, rowY + 4, entry.color);
      canvas.text(box.x + 5 + 14 + 4, rowY, entry.label, TEXT);
    });
  }

  return { png: encodePng(layout.width, layout.height, canvas.pixels), layout };
}

export { ChartError };
