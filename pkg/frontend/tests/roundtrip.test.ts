/** Cross-language round trip: a scripted key sequence captured here must
 * ingest through the pipeline's alignment code into exactly the expected
 * per-timepoint labels. */

import { spawnSync } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { CaptureSession } from "../src/capture.js";
import { toJsonl } from "../src/export.js";

function pythonAvailable(): boolean {
  const probe = spawnSync("python3", ["-c", "import rym"], { encoding: "utf-8" });
  return probe.status === 0;
}

describe("ingestion round trip", () => {
  it.skipIf(!pythonAvailable())(
    "scripted key sequence aligns to the expected labels with zero mismatches",
    () => {
      // 10 Hz, 10 s: positive [2.0, 5.0), negative [6.0, 8.5), neutral elsewhere
      const s = new CaptureSession("recall", {
        subjectId: "rt01",
        startWallClock: "2026-02-03T04:05:06.000Z",
      });
      s.keyDown("1", 2.0);
      s.keyUp("1", 5.0);
      s.keyDown("3", 6.0);
      s.keyUp("3", 8.5);
      const log = s.finish(10.0);

      const dir = mkdtempSync(join(tmpdir(), "rym-rt-"));
      const logPath = join(dir, "events.jsonl");
      writeFileSync(logPath, toJsonl(log), "utf-8");

      const out = spawnSync(
        "python3",
        ["-m", "rym.events_tool", "--events", logPath, "--rate", "10", "--timepoints", "100"],
        { encoding: "utf-8" }
      );
      expect(out.status, out.stderr).toBe(0);
      const got: number[] = JSON.parse(out.stdout);

      const expected: number[] = new Array(100).fill(0);
      for (let i = 20; i < 50; i++) expected[i] = 1; // [2.0, 5.0) at 10 Hz
      for (let i = 60; i < 85; i++) expected[i] = -1; // [6.0, 8.5)
      expect(got).toHaveLength(100);
      const mismatches = got.filter((v, i) => v !== expected[i]).length;
      expect(mismatches).toBe(0);
    }
  );

  it.skipIf(!pythonAvailable())("opposite-key handover survives ingestion", () => {
    const s = new CaptureSession("recall", { subjectId: "rt02" });
    s.keyDown("1", 1.0);
    s.keyDown("3", 4.0); // positive ends here, negative begins
    s.keyUp("3", 6.0);
    const log = s.finish(8.0);

    const dir = mkdtempSync(join(tmpdir(), "rym-rt-"));
    const logPath = join(dir, "events.jsonl");
    writeFileSync(logPath, toJsonl(log), "utf-8");
    const out = spawnSync(
      "python3",
      ["-m", "rym.events_tool", "--events", logPath, "--rate", "10", "--timepoints", "80"],
      { encoding: "utf-8" }
    );
    expect(out.status, out.stderr).toBe(0);
    const got: number[] = JSON.parse(out.stdout);
    expect(got.slice(10, 40).every((v) => v === 1)).toBe(true);
    expect(got.slice(40, 60).every((v) => v === -1)).toBe(true);
    expect(got.slice(60).every((v) => v === 0)).toBe(true);
  });
});
