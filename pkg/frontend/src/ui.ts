/** Single-page wiring: one capture at a time, clock from performance.now()
 * relative to capture start, download via Blob, optional POST upload. */

import { CaptureSession } from "./capture.js";
import { exportFileName, toJsonl } from "./export.js";
import { Rating, rateSession } from "./rating.js";
import { CaptureLog, Preference, SessionKind } from "./types.js";

interface Elements {
  subject: HTMLInputElement;
  kind: HTMLSelectElement;
  video: HTMLVideoElement;
  videoFile: HTMLInputElement;
  start: HTMLButtonElement;
  stop: HTMLButtonElement;
  stateBadge: HTMLElement;
  confidence: HTMLInputElement;
  preference: HTMLSelectElement;
  rate: HTMLButtonElement;
  download: HTMLButtonElement;
  upload: HTMLButtonElement;
  uploadUrl: HTMLInputElement;
  status: HTMLElement;
}

let session: CaptureSession | null = null;
let startedAtMs = 0;
let log: CaptureLog | null = null;

function nowS(): number {
  return (performance.now() - startedAtMs) / 1000;
}

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function collectElements(): Elements {
  return {
    subject: byId("subject"),
    kind: byId("kind"),
    video: byId("video"),
    videoFile: byId("video-file"),
    start: byId("start"),
    stop: byId("stop"),
    stateBadge: byId("state-badge"),
    confidence: byId("confidence"),
    preference: byId("preference"),
    rate: byId("rate"),
    download: byId("download"),
    upload: byId("upload"),
    uploadUrl: byId("upload-url"),
    status: byId("status"),
  };
}

function setStatus(els: Elements, text: string): void {
  els.status.textContent = text;
}

function renderState(els: Elements): void {
  const state = session ? session.currentState() : 0;
  els.stateBadge.textContent = state === 1 ? "positive" : state === -1 ? "negative" : "neutral";
  els.stateBadge.className = `badge s${state}`;
}

function startCapture(els: Elements): void {
  const kind = els.kind.value as SessionKind;
  const mediaDurationS =
    kind === "video-eval" && Number.isFinite(els.video.duration) && els.video.duration > 0
      ? els.video.duration
      : undefined;
  if (kind === "video-eval" && mediaDurationS === undefined) {
    setStatus(els, "load a video before starting a video-eval capture");
    return;
  }
  session = new CaptureSession(kind, {
    subjectId: els.subject.value || "anon",
    mediaDurationS,
  });
  startedAtMs = performance.now();
  log = null;
  if (kind === "video-eval") void els.video.play();
  setStatus(els, "capturing: hold 1 for positive, 3 for negative");
  renderState(els);
}

function stopCapture(els: Elements): void {
  if (!session) return;
  els.video.pause();
  log = session.finish(nowS());
  session = null;
  setStatus(els, `captured ${log.intervals.length} intervals; add a rating, then download`);
  renderState(els);
}

function applyRating(els: Elements): void {
  if (!log) {
    setStatus(els, "nothing captured yet");
    return;
  }
  const rating: Rating =
    log.kind === "recall"
      ? { confidence: Number(els.confidence.value) }
      : { preference: els.preference.value as Preference };
  try {
    log = rateSession(log, rating);
    setStatus(els, "rating stored; the log is now sealed");
  } catch (err) {
    setStatus(els, String(err));
  }
}

function downloadLog(els: Elements): void {
  if (!log) {
    setStatus(els, "nothing captured yet");
    return;
  }
  const blob = new Blob([toJsonl(log)], { type: "application/jsonl" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = exportFileName(log);
  a.click();
  URL.revokeObjectURL(a.href);
}

async function uploadLog(els: Elements): Promise<void> {
  if (!log) {
    setStatus(els, "nothing captured yet");
    return;
  }
  const url = els.uploadUrl.value;
  if (!url) {
    setStatus(els, "set an upload URL first");
    return;
  }
  try {
    const resp = await fetch(url, {
      method: "POST",
      headers: { "Content-Type": "application/jsonl" },
      body: toJsonl(log),
    });
    setStatus(els, resp.ok ? "uploaded" : `upload failed: HTTP ${resp.status}`);
  } catch (err) {
    setStatus(els, `upload failed: ${err}`);
  }
}

export function init(): void {
  const els = collectElements();
  window.addEventListener("keydown", (e) => {
    if (session && !e.repeat) {
      session.keyDown(e.key, nowS());
      renderState(els);
    }
  });
  window.addEventListener("keyup", (e) => {
    if (session) {
      session.keyUp(e.key, nowS());
      renderState(els);
    }
  });
  window.addEventListener("blur", () => session?.blur(nowS()));
  window.addEventListener("focus", () => session?.focus(nowS()));
  els.videoFile.addEventListener("change", () => {
    const file = els.videoFile.files?.[0];
    if (file) els.video.src = URL.createObjectURL(file);
  });
  els.start.addEventListener("click", () => startCapture(els));
  els.stop.addEventListener("click", () => stopCapture(els));
  els.rate.addEventListener("click", () => applyRating(els));
  els.download.addEventListener("click", () => downloadLog(els));
  els.upload.addEventListener("click", () => void uploadLog(els));
  renderState(els);
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  init();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", init);
}
