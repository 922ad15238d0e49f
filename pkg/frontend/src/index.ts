export {
  CsvSchemaError,
  EXPECTED_HEADER,
  loadCurves,
  parseRoundLog,
} from "./csv.js";
export type { Curve, CurvePoint, CurveSet, ParsedLog } from "./csv.js";
export {
  ChartError,
  PALETTE,
  computeLayout,
  legendBox,
} from "./chart.js";
export type {
  Layout,
  LayoutOptions,
  LegendEntry,
  SeriesLayout,
  Tick,
} from "./chart.js";
export { Canvas } from "./raster.js";
export type { Color } from "./raster.js";
export { crc32, decodePng, encodePng } from "./png.js";
export { render } from "./render.js";
export type { Rendered } from "./render.js";
export { main, parseArgs } from "./cli.js";
