/** JSONL export matching the pipeline's keypress-event schema: a header
 * object on line one, one event object per following line. */

import { CaptureLog, KeyInterval, ValenceCode } from "./types.js";

export function toJsonl(log: CaptureLog): string {
  const header: Record<string, unknown> = {
    version: log.version,
    kind: log.kind,
    subject_id: log.subject_id,
    start_wall_clock: log.start_wall_clock,
  };
  if (log.media_duration_s !== undefined) header.media_duration_s = log.media_duration_s;
  if (log.confidence !== undefined) header.confidence = log.confidence;
  if (log.preference !== undefined) header.preference = log.preference;
  if (log.flags.length > 0) header.flags = log.flags;
  const lines = [JSON.stringify(sortKeys(header))];
  for (const iv of log.intervals) {
    lines.push(
      JSON.stringify({ state: iv.state, t_end_s: iv.t_end_s, t_start_s: iv.t_start_s })
    );
  }
  return lines.join("\n") + "\n";
}

export function fromJsonl(text: string): { header: Record<string, unknown>; intervals: KeyInterval[] } {
  const lines = text.split("\n").filter((ln) => ln.trim().length > 0);
  if (lines.length === 0) throw new Error("empty log");
  const header = JSON.parse(lines[0]) as Record<string, unknown>;
  if (typeof header.version !== "number") {
    throw new Error("first line must be a header object with a numeric 'version'");
  }
  const intervals: KeyInterval[] = lines.slice(1).map((ln) => {
    const rec = JSON.parse(ln) as { t_start_s: number; t_end_s: number; state: number };
    return { t_start_s: rec.t_start_s, t_end_s: rec.t_end_s, state: rec.state as ValenceCode };
  });
  return { header, intervals };
}

function sortKeys(obj: Record<string, unknown>): Record<string, unknown> {
  return Object.fromEntries(Object.entries(obj).sort(([a], [b]) => (a < b ? -1 : 1)));
}

export function exportFileName(log: CaptureLog): string {
  const stamp = log.start_wall_clock.replace(/[:.]/g, "-");
  return `${log.subject_id}_${log.kind}_${stamp}.jsonl`;
}
