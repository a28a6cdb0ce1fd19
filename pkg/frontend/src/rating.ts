/** Post-capture ratings: a 1-7 confidence for recall sessions, a
 * Both/Real/Fake/Neither preference for video evaluation. A rated log is
 * sealed and can't be modified again. */

import { CaptureLog, Preference } from "./types.js";

const PREFERENCES: readonly Preference[] = ["Both", "Real", "Fake", "Neither"];

export type Rating = { confidence: number } | { preference: Preference };

export function rateSession(log: CaptureLog, rating: Rating): CaptureLog {
  if (log.sealed) {
    throw new Error("log is sealed; it was already rated");
  }
  if ("confidence" in rating) {
    if (log.kind !== "recall") {
      throw new Error("confidence ratings apply to recall sessions only");
    }
    const c = rating.confidence;
    if (!Number.isInteger(c) || c < 1 || c > 7) {
      throw new Error(`confidence must be an integer in [1, 7], got ${c}`);
    }
    return { ...log, confidence: c, sealed: true };
  }
  if (log.kind !== "video-eval") {
    throw new Error("preference ratings apply to video-eval sessions only");
  }
  if (!PREFERENCES.includes(rating.preference)) {
    throw new Error(`preference must be one of ${PREFERENCES.join("/")}`);
  }
  return { ...log, preference: rating.preference, sealed: true };
}
