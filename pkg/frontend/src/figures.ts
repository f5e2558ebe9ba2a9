/**
 * Figure data models: what each chart plots, extracted from the CSVs
 * with no resampling. The renderer scales coordinates; the numbers in
 * these structures are the file values verbatim.
 */

import { basename } from "node:path";
import { readPerAgent, readPerMinute, readPerRound } from "./csv.js";

export const FIGURE_KINDS = [
  "events-bar",
  "latency-per-round",
  "latency-per-agent",
  "latency-timeseries",
  "per-minute-volumes",
] as const;

export type FigureKind = (typeof FIGURE_KINDS)[number];

export interface FigureSpec {
  kind: FigureKind;
  runs: string[]; // run directories holding the delimited reports
  labels?: string[]; // display names, parallel to runs; defaults to basenames
  out: string; // output image path
}

export interface BarSeries {
  name: string;
  heights: number[];
}

export interface Point {
  x: number;
  y: number;
}

export interface LineSeries {
  name: string;
  points: Point[];
}

export type FigureData =
  | { kind: "events-bar"; groups: string[]; series: BarSeries[] }
  | { kind: "latency-per-agent"; groups: string[]; series: BarSeries[] }
  | {
      kind: "latency-per-round" | "latency-timeseries" | "per-minute-volumes";
      xLabel: string;
      yLabel: string;
      series: LineSeries[];
    };

export function runLabels(spec: FigureSpec): string[] {
  if (spec.labels !== undefined) {
    if (spec.labels.length !== spec.runs.length) {
      throw new Error(
        `labels count ${spec.labels.length} does not match runs count ${spec.runs.length}`,
      );
    }
    return spec.labels;
  }
  return spec.runs.map((r) => basename(r));
}

function eventsBar(spec: FigureSpec): FigureData {
  const labels = runLabels(spec);
  const totals = spec.runs.map((dir) => {
    const rows = readPerMinute(dir);
    return {
      cfps: rows.reduce((a, r) => a + r.cfps, 0),
      offers: rows.reduce((a, r) => a + r.offers, 0),
      confirms: rows.reduce((a, r) => a + r.confirms, 0),
    };
  });
  return {
    kind: "events-bar",
    groups: labels,
    series: [
      { name: "cfps", heights: totals.map((t) => t.cfps) },
      { name: "offers", heights: totals.map((t) => t.offers) },
      { name: "confirms", heights: totals.map((t) => t.confirms) },
    ],
  };
}

function latencyPerAgent(spec: FigureSpec): FigureData {
  const labels = runLabels(spec);
  const perRun = spec.runs.map((dir) => readPerAgent(dir));
  const agents: string[] = [];
  for (const rows of perRun) {
    for (const row of rows) {
      if (!agents.includes(row.agent)) agents.push(row.agent);
    }
  }
  const series = perRun.map((rows, i) => {
    const byAgent = new Map(rows.map((r) => [r.agent, r.meanMs]));
    return { name: labels[i], heights: agents.map((a) => byAgent.get(a) ?? 0) };
  });
  return { kind: "latency-per-agent", groups: agents, series };
}

function latencyPerRound(spec: FigureSpec): FigureData {
  const labels = runLabels(spec);
  const series = spec.runs.map((dir, i) => {
    const points = readPerRound(dir)
      .filter((r) => r.meanMs !== null)
      .map((r, idx) => ({ x: idx + 1, y: r.meanMs as number }));
    return { name: labels[i], points };
  });
  return {
    kind: "latency-per-round",
    xLabel: "effective round",
    yLabel: "mean latency (ms)",
    series,
  };
}

function latencyTimeseries(spec: FigureSpec): FigureData {
  const labels = runLabels(spec);
  const series = spec.runs.map((dir, i) => {
    const rows = readPerRound(dir).filter((r) => r.meanMs !== null);
    const t0 = rows.length > 0 ? Date.parse(rows[0].ts) : 0;
    const points = rows.map((r) => ({
      x: (Date.parse(r.ts) - t0) / 60_000,
      y: r.meanMs as number,
    }));
    return { name: labels[i], points };
  });
  return {
    kind: "latency-timeseries",
    xLabel: "minutes since first round",
    yLabel: "mean latency (ms)",
    series,
  };
}

function perMinuteVolumes(spec: FigureSpec): FigureData {
  const labels = runLabels(spec);
  const series: LineSeries[] = [];
  spec.runs.forEach((dir, i) => {
    const rows = readPerMinute(dir);
    const prefix = spec.runs.length > 1 ? `${labels[i]} ` : "";
    for (const key of ["cfps", "offers", "confirms"] as const) {
      series.push({
        name: `${prefix}${key}`,
        points: rows.map((r) => ({ x: r.minute, y: r[key] })),
      });
    }
  });
  return {
    kind: "per-minute-volumes",
    xLabel: "minute",
    yLabel: "events",
    series,
  };
}

export function extract(spec: FigureSpec): FigureData {
  if (spec.runs.length === 0) {
    throw new Error("at least one run directory is required");
  }
  switch (spec.kind) {
    case "events-bar":
      return eventsBar(spec);
    case "latency-per-agent":
      return latencyPerAgent(spec);
    case "latency-per-round":
      return latencyPerRound(spec);
    case "latency-timeseries":
      return latencyTimeseries(spec);
    case "per-minute-volumes":
      return perMinuteVolumes(spec);
  }
}
