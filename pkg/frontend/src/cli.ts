#!/usr/bin/env node
/**
 * Usage: plot <figure-kind> --runs DIR[,DIR...] --out PATH [--labels A,B]
 *
 * Exit codes mirror the harness: 0 success, 2 bad arguments or inputs,
 * 3 unexpected failure.
 */

import { MissingInput, SchemaMismatch } from "./csv.js";
import { FIGURE_KINDS, type FigureKind, type FigureSpec } from "./figures.js";
import { render } from "./render.js";

function usage(): string {
  return `usage: plot <figure-kind> --runs DIR[,DIR...] --out PATH [--labels A,B]\n  figure kinds: ${FIGURE_KINDS.join(", ")}`;
}

export function parseArgs(argv: string[]): FigureSpec {
  const args = [...argv];
  if (args[0] === "plot") args.shift(); // tolerate the bin name repeated
  const kind = args.shift();
  if (kind === undefined || !FIGURE_KINDS.includes(kind as FigureKind)) {
    throw new Error(`unknown figure kind: ${kind ?? "(none)"}\n${usage()}`);
  }
  let runs: string[] | undefined;
  let out: string | undefined;
  let labels: string[] | undefined;
  while (args.length > 0) {
    const flag = args.shift();
    const value = args.shift();
    if (value === undefined) {
      throw new Error(`flag ${flag} needs a value\n${usage()}`);
    }
    if (flag === "--runs") runs = value.split(",").filter((s) => s.length > 0);
    else if (flag === "--out") out = value;
    else if (flag === "--labels") labels = value.split(",");
    else throw new Error(`unknown flag: ${flag}\n${usage()}`);
  }
  if (runs === undefined || runs.length === 0 || out === undefined) {
    throw new Error(`--runs and --out are required\n${usage()}`);
  }
  return { kind: kind as FigureKind, runs, labels, out };
}

export function main(argv: string[]): number {
  let spec: FigureSpec;
  try {
    spec = parseArgs(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
  try {
    const { svgPath, dataPath } = render(spec);
    console.log(`wrote ${svgPath}`);
    console.log(`wrote ${dataPath}`);
    return 0;
  } catch (err) {
    if (err instanceof MissingInput || err instanceof SchemaMismatch) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    console.error(`error: ${(err as Error).message}`);
    return 3;
  }
}

import { pathToFileURL } from "node:url";

if (process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
