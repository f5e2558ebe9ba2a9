/**
 * Turn a FigureSpec into an SVG file plus a sidecar JSON dump of the
 * exact numbers plotted. The sidecar is the machine-checkable record:
 * tests and downstream tooling read it instead of parsing the SVG.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";
import { extract, type FigureData, type FigureSpec } from "./figures.js";
import { barChart, lineChart } from "./svg.js";

export function sidecarPath(out: string): string {
  return `${out}.data.json`;
}

export function renderToString(data: FigureData): string {
  switch (data.kind) {
    case "events-bar":
      return barChart("event totals per run", data.groups, data.series, "events");
    case "latency-per-agent":
      return barChart("mean offer latency per agent", data.groups, data.series, "mean latency (ms)");
    case "latency-per-round":
    case "latency-timeseries":
    case "per-minute-volumes":
      return lineChart(data.kind, data.series, data.xLabel, data.yLabel);
  }
}

export function render(spec: FigureSpec): { svgPath: string; dataPath: string } {
  const data = extract(spec);
  const svg = renderToString(data);
  mkdirSync(dirname(spec.out), { recursive: true });
  writeFileSync(spec.out, svg, "utf-8");
  const dataPath = sidecarPath(spec.out);
  writeFileSync(dataPath, JSON.stringify(data, null, 2) + "\n", "utf-8");
  return { svgPath: spec.out, dataPath };
}
