#!/usr/bin/env node
/** plotkit <out.png> <csv...> [--title T]
 *
 * Reads round-log CSV files and writes one accuracy-vs-round chart.
 * Exit codes: 0 success, 1 bad input (file or schema), 2 bad usage.
 */

import { writeFileSync } from "node:fs";

import { ChartError } from "./chart.js";
import { CsvSchemaError, loadCurves } from "./csv.js";
import { render } from "./render.js";

export const USAGE = "usage: plotkit <out.png> <csv...> [--title T]";

export interface CliArgs {
  readonly outPath: string;
  readonly csvPaths: readonly string[];
  readonly title: string;
}

export class UsageError extends Error {
  override readonly name = "UsageError";
}

export function parseArgs(argv: readonly string[]): CliArgs {
  const positional: string[] = [];
  let title = "";
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--title") {
      if (i + 1 >= argv.length) throw new UsageError("--title needs a value");
      title = argv[++i];
    } else if (arg.startsWith("--title=")) {
      title = arg.slice("--title=".length);
    } else if (arg.startsWith("--")) {
      throw new UsageError(`unknown option ${arg}`);
    } else {
      positional.push(arg);
    }
  }
  if (positional.length < 2) {
    throw new UsageError("need an output image and at least one CSV");
  }
  const [outPath, ...csvPaths] = positional;
  return { outPath, csvPaths, title };
}

export function main(argv: readonly string[]): number {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`error: ${err.message}`);
      console.error(USAGE);
      return 2;
    }
    throw err;
  }
  try {
    const curveSet = loadCurves(args.csvPaths);
    for (const warning of curveSet.warnings) {
      console.warn(`warning: ${warning}`);
    }
    const { png, layout } = render(curveSet, { title: args.title });
    writeFileSync(args.outPath, png);
    const points = layout.series.reduce((n, s) => n + s.points.length, 0);
    console.log(
      `wrote ${args.outPath} (${layout.width}x${layout.height}, ` +
        `${layout.series.length} curves, ${points} points)`,
    );
    return 0;
  } catch (err) {
    if (err instanceof CsvSchemaError || err instanceof ChartError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    if (err instanceof Error && "code" in err) {
      console.error(`error: ${err.message}`); // filesystem problems
      return 1;
    }
    throw err;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
