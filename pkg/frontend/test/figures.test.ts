import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { extract, runLabels, type FigureSpec } from "../src/figures.js";

const FIXTURES = join(__dirname, "fixtures");

function lowRuns(): string[] {
  return ["low-5", "low-9", "low-12"].map((n) => join(FIXTURES, n));
}

describe("figure data extraction", () => {
  it("events-bar sums the per-minute columns per run", () => {
    const data = extract({ kind: "events-bar", runs: lowRuns(), out: "x.svg" });
    if (data.kind !== "events-bar") throw new Error("wrong kind");
    expect(data.groups).toEqual(["low-5", "low-9", "low-12"]);
    const byName = new Map(data.series.map((s) => [s.name, s.heights]));
    expect(byName.get("cfps")).toEqual([3, 3, 3]);
    expect(byName.get("offers")).toEqual([15, 27, 36]);
    expect(byName.get("confirms")).toEqual([0, 0, 0]);
  });

  it("latency-per-agent lines up agents across runs", () => {
    const data = extract({
      kind: "latency-per-agent",
      runs: [join(FIXTURES, "low-5")],
      out: "x.svg",
    });
    if (data.kind !== "latency-per-agent") throw new Error("wrong kind");
    expect(data.groups).toHaveLength(5);
    expect(data.series[0].heights.every((h) => h > 0)).toBe(true);
  });

  it("latency-timeseries over constant latency is a flat line", () => {
    const dir = mkdtempSync(join(tmpdir(), "plots-flat-"));
    const rows = ["round_id,ts,offers,expected,complete,mean_ms"];
    for (let i = 0; i < 20; i++) {
      const ts = new Date(Date.UTC(2025, 0, 1, 0, i)).toISOString().replace("+00:00", "Z");
      rows.push(`round-${i},${ts},3,3,true,2.500`);
    }
    writeFileSync(join(dir, "per_round.csv"), rows.join("\n") + "\n");
    const data = extract({ kind: "latency-timeseries", runs: [dir], out: "x.svg" });
    if (data.kind !== "latency-timeseries") throw new Error("wrong kind");
    const ys = data.series[0].points.map((p) => p.y);
    expect(ys).toHaveLength(20);
    expect(new Set(ys).size).toBe(1);
    expect(ys[0]).toBe(2.5);
  });

  it("per-minute-volumes plots exactly the csv values", () => {
    const dir = mkdtempSync(join(tmpdir(), "plots-vol-"));
    writeFileSync(
      join(dir, "per_minute.csv"),
      "minute,cfps,offers,confirms\n0,1,5,0\n1,2,10,1\n2,0,0,0\n",
    );
    const data = extract({ kind: "per-minute-volumes", runs: [dir], out: "x.svg" });
    if (data.kind !== "per-minute-volumes") throw new Error("wrong kind");
    expect(data.series.map((s) => s.name)).toEqual(["cfps", "offers", "confirms"]);
    for (const s of data.series) {
      expect(s.points).toHaveLength(3);
    }
    const offers = data.series.find((s) => s.name === "offers");
    expect(offers?.points).toEqual([
      { x: 0, y: 5 },
      { x: 1, y: 10 },
      { x: 2, y: 0 },
    ]);
  });

  it("latency-per-round keeps only rounds that saw offers", () => {
    const data = extract({
      kind: "latency-per-round",
      runs: [join(FIXTURES, "high-12-12h")],
      out: "x.svg",
    });
    if (data.kind !== "latency-per-round") throw new Error("wrong kind");
    const points = data.series[0].points;
    expect(points.length).toBeGreaterThan(700);
    expect(points.every((p) => p.y > 0)).toBe(true);
  });

  it("rejects a labels list that does not match runs", () => {
    const spec: FigureSpec = {
      kind: "events-bar",
      runs: lowRuns(),
      labels: ["just-one"],
      out: "x.svg",
    };
    expect(() => runLabels(spec)).toThrow(/labels count/);
  });

  it("rejects an empty runs list", () => {
    expect(() => extract({ kind: "events-bar", runs: [], out: "x.svg" })).toThrow(
      /at least one run/,
    );
  });
});
