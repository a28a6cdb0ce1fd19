/** Keypress capture state machine.
 *
 * Key-down on '1'/'3' opens an interval of the mapped state; key-up closes
 * it. A key-down of the opposite key while an interval is open closes the
 * open interval at that instant and opens the new one, so intervals never
 * overlap. Auto-repeat key-downs of the held key are coalesced. Focus losses
 * longer than one second are flagged in the log.
 */

import {
  CaptureLog,
  FOCUS_LOSS_FLAG_THRESHOLD_S,
  FocusLossFlag,
  KEY_TO_STATE,
  KeyInterval,
  LOG_VERSION,
  SessionKind,
  ValenceCode,
} from "./types.js";

export interface CaptureOptions {
  subjectId: string;
  /** required for video-eval; interval times are clamped to it */
  mediaDurationS?: number;
  startWallClock?: string;
}

interface OpenInterval {
  state: ValenceCode;
  startS: number;
}

export class CaptureSession {
  readonly kind: SessionKind;
  readonly subjectId: string;
  readonly startWallClock: string;
  readonly mediaDurationS?: number;

  private intervals: KeyInterval[] = [];
  private flags: FocusLossFlag[] = [];
  private open: OpenInterval | null = null;
  private blurAtS: number | null = null;
  private finished = false;

  constructor(kind: SessionKind, options: CaptureOptions) {
    if (kind === "video-eval" && options.mediaDurationS === undefined) {
      throw new Error("video-eval capture needs mediaDurationS (media must have loaded)");
    }
    if (options.mediaDurationS !== undefined && !(options.mediaDurationS > 0)) {
      throw new Error(`mediaDurationS must be positive, got ${options.mediaDurationS}`);
    }
    this.kind = kind;
    this.subjectId = options.subjectId;
    this.mediaDurationS = options.mediaDurationS;
    this.startWallClock = options.startWallClock ?? new Date().toISOString();
  }

  /** state of the currently held key, or 0 when none */
  currentState(): ValenceCode {
    return this.open ? this.open.state : 0;
  }

  keyDown(key: string, tS: number): void {
    this.assertLive(tS);
    const state = KEY_TO_STATE[key];
    if (state === undefined) return;
    if (this.open) {
      if (this.open.state === state) return; // key auto-repeat
      this.closeOpen(tS); // opposite key pressed: earlier interval ends now
    }
    this.open = { state, startS: tS };
  }

  keyUp(key: string, tS: number): void {
    this.assertLive(tS);
    const state = KEY_TO_STATE[key];
    if (state === undefined) return;
    if (this.open && this.open.state === state) {
      this.closeOpen(tS);
    }
  }

  /** window lost focus: key-ups can be missed, so the open interval ends here */
  blur(tS: number): void {
    this.assertLive(tS);
    if (this.open) this.closeOpen(tS);
    this.blurAtS = tS;
  }

  focus(tS: number): void {
    this.assertLive(tS);
    if (this.blurAtS !== null && tS - this.blurAtS > FOCUS_LOSS_FLAG_THRESHOLD_S) {
      this.flags.push({ t_start_s: this.blurAtS, t_end_s: tS, reason: "focus-loss" });
    }
    this.blurAtS = null;
  }

  /** Close the capture and produce the log (unsealed; ratings come after). */
  finish(tEndS: number): CaptureLog {
    this.assertLive(tEndS);
    if (this.open) this.closeOpen(tEndS);
    this.finished = true;
    let intervals = this.intervals;
    if (this.mediaDurationS !== undefined) {
      intervals = intervals
        .map((iv) => ({
          ...iv,
          t_start_s: Math.min(iv.t_start_s, this.mediaDurationS as number),
          t_end_s: Math.min(iv.t_end_s, this.mediaDurationS as number),
        }))
        .filter((iv) => iv.t_end_s > iv.t_start_s);
    }
    return {
      version: LOG_VERSION,
      kind: this.kind,
      subject_id: this.subjectId,
      start_wall_clock: this.startWallClock,
      intervals,
      flags: this.flags,
      ...(this.mediaDurationS !== undefined ? { media_duration_s: this.mediaDurationS } : {}),
      sealed: false,
    };
  }

  private closeOpen(tS: number): void {
    const open = this.open as OpenInterval;
    this.open = null;
    if (tS > open.startS) {
      this.intervals.push({ t_start_s: open.startS, t_end_s: tS, state: open.state });
    }
  }

  private lastTimestamp(): number {
    const last = this.intervals[this.intervals.length - 1];
    return Math.max(last ? last.t_end_s : 0, this.open ? this.open.startS : 0);
  }

  private assertLive(tS: number): void {
    if (this.finished) throw new Error("capture already finished");
    if (!(tS >= 0)) throw new Error(`timestamps must be >= 0, got ${tS}`);
    if (tS < this.lastTimestamp()) {
      throw new Error(`timestamps must be monotone, got ${tS} after ${this.lastTimestamp()}`);
    }
  }
}
