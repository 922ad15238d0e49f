/** Round-log CSV ingestion.
 *
 * The on-disk contract: UTF-8, LF line endings, a fixed eight-column header
 *
 *   round,mode,global_accuracy,avg_accuracy,mean_divergence,max_divergence,selected_clients,wallclock_ms
 *
 * and one data row per communication round. This module reads the two
 * columns the charts need (round, global_accuracy) plus the mode label,
 * rejecting anything that deviates from the schema with the offending
 * line number.
 */

import { readFileSync } from "node:fs";
import { basename, extname } from "node:path";

export const EXPECTED_HEADER = [
  "round",
  "mode",
  "global_accuracy",
  "avg_accuracy",
  "mean_divergence",
  "max_divergence",
  "selected_clients",
  "wallclock_ms",
] as const;

/** A malformed file: wrong columns, wrong field counts, non-numeric cells. */
export class CsvSchemaError extends Error {
  override readonly name = "CsvSchemaError";
}

export interface CurvePoint {
  readonly round: number;
  readonly accuracy: number;
}

export interface Curve {
  /** Legend label: the mode column, or the file stem for header-only files. */
  readonly label: string;
  readonly source: string;
  readonly points: readonly CurvePoint[];
}

export interface CurveSet {
  readonly curves: readonly Curve[];
  readonly warnings: readonly string[];
}

function fail(origin: string, message: string, line?: number): never {
  const where = line === undefined ? origin : `${origin} line ${line}`;
  throw new CsvSchemaError(`${where}: ${message}`);
}

function parseNumber(
  origin: string,
  line: number,
  column: string,
  text: string,
  integer: boolean,
): number {
  const value = Number(text);
  if (text.trim() === "" || !Number.isFinite(value)) {
    fail(origin, `bad ${column} ${JSON.stringify(text)}`, line);
  }
  if (integer && !Number.isInteger(value)) {
    fail(origin, `bad ${column} ${JSON.stringify(text)}: expected an integer`, line);
  }
  return value;
}

export interface ParsedLog {
  /** null when the file holds a header but no data rows. */
  readonly mode: string | null;
  readonly points: readonly CurvePoint[];
}

/** Parse one round-log file's text. Throws CsvSchemaError with the line
 * number on the first deviation from the schema. */
export function parseRoundLog(text: string, origin: string): ParsedLog {
  if (text.includes("\r")) {
    fail(origin, "carriage returns found; the log contract is LF-only");
  }
  if (text === "") {
    fail(origin, "empty file");
  }
  const lines = text.split("\n");
  if (lines[lines.length - 1] === "") {
    lines.pop(); // the contract ends the file with a single trailing LF
  }
  const header = lines[0].split(",");
  const expected: readonly string[] = EXPECTED_HEADER;
  const missing = expected.filter((c) => !header.includes(c));
  const surprise = header.filter((c) => !expected.includes(c));
  if (missing.length > 0 || surprise.length > 0) {
    const parts: string[] = [];
    if (missing.length > 0) parts.push(`missing columns: ${missing.join(", ")}`);
    if (surprise.length > 0) parts.push(`unexpected columns: ${surprise.join(", ")}`);
    fail(origin, parts.join("; "), 1);
  }
  if (header.join(",") !== expected.join(",")) {
    fail(origin, `columns out of order: got ${header.join(",")}`, 1);
  }

  const roundCol = 0;
  const modeCol = 1;
  const accCol = 2;
  let mode: string | null = null;
  const points: CurvePoint[] = [];
  for (let i = 1; i < lines.length; i++) {
    const lineNo = i + 1;
    const fields = lines[i].split(",");
    if (fields.length !== expected.length) {
      fail(origin, `has ${fields.length} fields, expected ${expected.length}`, lineNo);
    }
    const round = parseNumber(origin, lineNo, "round", fields[roundCol], true);
    const accuracy = parseNumber(
      origin, lineNo, "global_accuracy", fields[accCol], false,
    );
    if (mode === null) {
      mode = fields[modeCol];
    } else if (fields[modeCol] !== mode) {
      fail(origin, `mode changed from ${mode} to ${fields[modeCol]}`, lineNo);
    }
    points.push({ round, accuracy });
  }
  return { mode, points };
}

function checkCurveInvariants(curve: Curve): void {
  let previous = -Infinity;
  for (let i = 0; i < curve.points.length; i++) {
    const { round, accuracy } = curve.points[i];
    if (round <= previous) {
      throw new CsvSchemaError(
        `${curve.source}: rounds must be strictly increasing, ` +
          `got ${round} after ${previous}`,
      );
    }
    previous = round;
    if (!(accuracy >= 0 && accuracy <= 1)) {
      throw new CsvSchemaError(
        `${curve.source}: accuracy ${accuracy} at round ${round} ` +
          "is outside [0, 1]",
      );
    }
  }
}

/** Load one curve per file, keyed by the mode column, preserving file
 * order. Header-only files produce an empty curve plus a warning. */
export function loadCurves(paths: readonly string[]): CurveSet {
  const curves: Curve[] = [];
  const warnings: string[] = [];
  for (const path of paths) {
    let text: string;
    try {
      text = readFileSync(path, "utf-8");
    } catch (err) {
      const detail = err instanceof Error ? err.message : String(err);
      throw new CsvSchemaError(`cannot read ${path}: ${detail}`);
    }
    const parsed = parseRoundLog(text, path);
    const stem = basename(path, extname(path));
    if (parsed.mode === null) {
      warnings.push(`${path}: header-only file, plotting an empty curve`);
    }
    const curve: Curve = {
      label: parsed.mode ?? stem,
      source: path,
      points: parsed.points,
    };
    checkCurveInvariants(curve);
    curves.push(curve);
  }
  return { curves, warnings };
}
