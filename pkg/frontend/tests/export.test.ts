import { describe, expect, it } from "vitest";

import { CaptureSession } from "../src/capture.js";
import { exportFileName, fromJsonl, toJsonl } from "../src/export.js";
import { rateSession } from "../src/rating.js";

function sampleLog() {
  const s = new CaptureSession("recall", {
    subjectId: "s07",
    startWallClock: "2026-02-03T04:05:06.000Z",
  });
  s.keyDown("1", 2.0);
  s.keyUp("1", 5.0);
  s.keyDown("3", 6.25);
  s.keyUp("3", 8.5);
  return s.finish(10.0);
}

describe("jsonl export", () => {
  it("puts a versioned header on the first line and one event per line", () => {
    const text = toJsonl(sampleLog());
    const lines = text.trim().split("\n");
    expect(lines).toHaveLength(3);
    const header = JSON.parse(lines[0]);
    expect(header.version).toBe(1);
    expect(header.kind).toBe("recall");
    expect(header.subject_id).toBe("s07");
    const first = JSON.parse(lines[1]);
    expect(first).toEqual({ t_start_s: 2.0, t_end_s: 5.0, state: 1 });
  });

  it("round-trips through fromJsonl", () => {
    const log = rateSession(sampleLog(), { confidence: 6 });
    const { header, intervals } = fromJsonl(toJsonl(log));
    expect(header.confidence).toBe(6);
    expect(intervals).toEqual(log.intervals);
  });

  it("includes focus-loss flags in the header", () => {
    const s = new CaptureSession("recall", { subjectId: "s01" });
    s.blur(1.0);
    s.focus(3.0);
    const { header } = fromJsonl(toJsonl(s.finish(5.0)));
    expect(header.flags).toEqual([{ t_start_s: 1.0, t_end_s: 3.0, reason: "focus-loss" }]);
  });

  it("rejects headerless text", () => {
    expect(() => fromJsonl('{"t_start_s": 1}\n')).toThrow(/version/);
    expect(() => fromJsonl("")).toThrow(/empty/);
  });

  it("builds a filesystem-safe file name", () => {
    const name = exportFileName(sampleLog());
    expect(name).toBe("s07_recall_2026-02-03T04-05-06-000Z.jsonl");
    expect(name).not.toMatch(/[:]/);
  });
});
