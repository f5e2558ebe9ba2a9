import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import {
  MissingInput,
  SchemaMismatch,
  readPerAgent,
  readPerMinute,
  readPerRound,
} from "../src/csv.js";

const FIXTURES = join(__dirname, "fixtures");

describe("csv readers", () => {
  it("parses per_minute rows from a real run", () => {
    const rows = readPerMinute(join(FIXTURES, "low-5"));
    expect(rows.length).toBeGreaterThan(0);
    expect(rows[0].minute).toBe(0);
    expect(rows.reduce((a, r) => a + r.offers, 0)).toBe(15);
  });

  it("parses per_agent and per_round", () => {
    const agents = readPerAgent(join(FIXTURES, "low-9"));
    expect(agents.map((a) => a.agent)).toContain("bidder-00");
    expect(agents).toHaveLength(9);

    const rounds = readPerRound(join(FIXTURES, "low-9"));
    expect(rounds).toHaveLength(3);
    expect(rounds.every((r) => r.complete)).toBe(true);
    expect(rounds.every((r) => r.offers === 9)).toBe(true);
  });

  it("raises MissingInput with the path for an absent file", () => {
    const dir = join(FIXTURES, "no-such-run");
    try {
      readPerMinute(dir);
      expect.unreachable("should have thrown");
    } catch (err) {
      expect(err).toBeInstanceOf(MissingInput);
      expect((err as MissingInput).path).toContain("no-such-run");
    }
  });

  it("raises SchemaMismatch when the header drifts", () => {
    const dir = mkdtempSync(join(tmpdir(), "plots-csv-"));
    writeFileSync(join(dir, "per_minute.csv"), "minute,calls,offers,confirms\n0,1,2,3\n");
    expect(() => readPerMinute(dir)).toThrow(SchemaMismatch);
  });

  it("raises SchemaMismatch on non-numeric cells", () => {
    const dir = mkdtempSync(join(tmpdir(), "plots-csv-"));
    writeFileSync(join(dir, "per_agent.csv"), "agent,offers,mean_ms\nbidder-00,three,1.5\n");
    expect(() => readPerAgent(dir)).toThrow(SchemaMismatch);
  });

  it("keeps empty mean_ms as null for rounds without offers", () => {
    const dir = mkdtempSync(join(tmpdir(), "plots-csv-"));
    writeFileSync(
      join(dir, "per_round.csv"),
      "round_id,ts,offers,expected,complete,mean_ms\n" +
        "round-000001,2025-01-01T00:00:00.000Z,0,12,false,\n" +
        "round-000002,2025-01-01T00:01:00.000Z,12,12,true,4.2\n",
    );
    const rows = readPerRound(dir);
    expect(rows[0].meanMs).toBeNull();
    expect(rows[1].meanMs).toBe(4.2);
  });
});
