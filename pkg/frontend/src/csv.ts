/**
 * Strict readers for the run directory layout.
 *
 * Figures are regenerated from the delimited files only, so the headers
 * are pinned here and any drift fails loudly instead of plotting garbage.
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";

export class MissingInput extends Error {
  readonly path: string;

  constructor(path: string) {
    super(`missing input file: ${path}`);
    this.name = "MissingInput";
    this.path = path;
  }
}

export class SchemaMismatch extends Error {
  readonly path: string;

  constructor(path: string, expected: readonly string[], actual: readonly string[]) {
    super(
      `unexpected header in ${path}: expected "${expected.join(",")}", got "${actual.join(",")}"`,
    );
    this.name = "SchemaMismatch";
    this.path = path;
  }
}

export const PER_MINUTE_HEADER = ["minute", "cfps", "offers", "confirms"] as const;
export const PER_AGENT_HEADER = ["agent", "offers", "mean_ms"] as const;
export const PER_ROUND_HEADER = ["round_id", "ts", "offers", "expected", "complete", "mean_ms"] as const;
export const LATENCY_HEADER = ["n", "mean_ms", "p50_ms", "p95_ms"] as const;

export interface MinuteRow {
  minute: number;
  cfps: number;
  offers: number;
  confirms: number;
}

export interface AgentRow {
  agent: string;
  offers: number;
  meanMs: number;
}

export interface RoundRow {
  roundId: string;
  ts: string;
  offers: number;
  expected: number;
  complete: boolean;
  meanMs: number | null; // null for rounds that collected nothing
}

function readRows(path: string, expected: readonly string[]): string[][] {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch {
    throw new MissingInput(path);
  }
  const lines = text.split("\n").filter((l) => l.length > 0);
  const header = (lines[0] ?? "").split(",");
  if (header.length !== expected.length || expected.some((h, i) => header[i] !== h)) {
    throw new SchemaMismatch(path, expected, header);
  }
  return lines.slice(1).map((l) => l.split(","));
}

function num(field: string, path: string): number {
  const v = Number(field);
  if (!Number.isFinite(v)) {
    throw new SchemaMismatch(path, ["<numeric field>"], [field]);
  }
  return v;
}

export function readPerMinute(dir: string): MinuteRow[] {
  const path = join(dir, "per_minute.csv");
  return readRows(path, PER_MINUTE_HEADER).map((r) => ({
    minute: num(r[0], path),
    cfps: num(r[1], path),
    offers: num(r[2], path),
    confirms: num(r[3], path),
  }));
}

export function readPerAgent(dir: string): AgentRow[] {
  const path = join(dir, "per_agent.csv");
  return readRows(path, PER_AGENT_HEADER).map((r) => ({
    agent: r[0],
    offers: num(r[1], path),
    meanMs: num(r[2], path),
  }));
}

export function readPerRound(dir: string): RoundRow[] {
  const path = join(dir, "per_round.csv");
  return readRows(path, PER_ROUND_HEADER).map((r) => ({
    roundId: r[0],
    ts: r[1],
    offers: num(r[2], path),
    expected: num(r[3], path),
    complete: r[4] === "true",
    meanMs: r[5] === "" ? null : num(r[5], path),
  }));
}
