/** Shared data model for capture logs. The export schema (JSON lines) is the
 * same one the pipeline's ingestion reads: a header object on the first line,
 * then one event object per line. */

export const LOG_VERSION = 1;

/** Numeric valence codes; shared with the decoding pipeline. */
export type ValenceCode = -1 | 0 | 1;

export type SessionKind = "recall" | "video-eval";

export type Preference = "Both" | "Real" | "Fake" | "Neither";

export interface KeyInterval {
  /** seconds relative to capture start, half-open [start, end) */
  t_start_s: number;
  t_end_s: number;
  state: ValenceCode;
}

export interface FocusLossFlag {
  t_start_s: number;
  t_end_s: number;
  reason: "focus-loss";
}

export interface CaptureLog {
  version: typeof LOG_VERSION;
  kind: SessionKind;
  subject_id: string;
  /** wall clock at capture start, ISO 8601; interval times are relative */
  start_wall_clock: string;
  intervals: KeyInterval[];
  flags: FocusLossFlag[];
  /** media duration for video-eval captures; interval times never exceed it */
  media_duration_s?: number;
  confidence?: number;
  preference?: Preference;
  sealed: boolean;
}

/** Keyboard mapping is fixed: '1' = positive, '3' = negative. */
export const KEY_TO_STATE: Readonly<Record<string, ValenceCode>> = {
  "1": 1,
  "3": -1,
};

export const FOCUS_LOSS_FLAG_THRESHOLD_S = 1.0;
