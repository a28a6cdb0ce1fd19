"""Core data model: EEG recordings, keypress valence events, label alignment.

On-disk formats:
  * recording:  ``<name>.csv`` (one row per timepoint, one column per channel,
    header row = channel names) plus a sidecar ``<name>.meta.json`` carrying
    ``sample_rate_hz`` and ``subject_id``.
  * keypress events: JSON-lines file; the first line is a header object
    (``version``, ``kind``, ``subject_id``, optional ratings) and every
    following line is one event ``{"t_start_s": .., "t_end_s": .., "state": ..}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EVENT_LOG_VERSION = 1


class ValenceState(IntEnum):
    """Three-state valence label. The numeric codes are load-bearing: they are
    used directly in correlation and cross-correlation computations."""

    NEGATIVE = -1
    NEUTRAL = 0
    POSITIVE = 1


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Recording:
    """Multichannel EEG recording, samples in microvolts.

    ``samples`` has shape [n_channels, n_timepoints]; channel order matches
    ``channels``.
    """

    subject_id: str
    sample_rate_hz: float
    channels: tuple[str, ...]
    samples: np.ndarray

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=float)
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D [channels, timepoints], got shape {samples.shape}")
        if len(self.channels) < 1 or samples.shape[0] != len(self.channels):
            raise ValueError(
                f"channel mismatch: {len(self.channels)} names vs {samples.shape[0]} sample rows"
            )
        if samples.shape[1] < 1:
            raise ValueError("no timepoints")
        if not np.all(np.isfinite(samples)):
            raise ValueError("non-finite sample in recording")
        object.__setattr__(self, "samples", _readonly(samples))
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_timepoints(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_timepoints / self.sample_rate_hz


@dataclass(frozen=True)
class ValenceEvent:
    """Half-open keypress interval [t_start_s, t_end_s) in seconds."""

    t_start_s: float
    t_end_s: float
    state: ValenceState

    def __post_init__(self) -> None:
        if not (0 <= self.t_start_s < self.t_end_s):
            raise ValueError(
                f"event interval must satisfy 0 <= start < end, got [{self.t_start_s}, {self.t_end_s})"
            )
        object.__setattr__(self, "state", ValenceState(self.state))


@dataclass(frozen=True)
class LabeledSeries:
    """Recording plus one valence label per timepoint."""

    recording: Recording
    labels: np.ndarray

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int8)
        if labels.shape != (self.recording.n_timepoints,):
            raise ValueError(
                f"labels length {labels.shape} does not match {self.recording.n_timepoints} timepoints"
            )
        valid = {int(s) for s in ValenceState}
        bad = set(np.unique(labels)) - valid
        if bad:
            raise ValueError(f"invalid label codes: {sorted(bad)}")
        object.__setattr__(self, "labels", _readonly(labels))

    @property
    def subject_id(self) -> str:
        return self.recording.subject_id


@dataclass(frozen=True)
class SessionBundle:
    """Everything one recall session contributes to generation."""

    labeled: LabeledSeries
    essay_text: str
    sketch_ref: Path
    melody_ref: Path
    confidence: int

    def __post_init__(self) -> None:
        if not 1 <= self.confidence <= 7:
            raise ValueError(f"confidence must be in [1, 7], got {self.confidence}")
        object.__setattr__(self, "sketch_ref", Path(self.sketch_ref))
        object.__setattr__(self, "melody_ref", Path(self.melody_ref))


@dataclass(frozen=True)
class CsvSchema:
    """Column selection for recording CSVs. ``channels=None`` keeps every
    column in file order; otherwise the named columns are selected in the
    given order."""

    channels: tuple[str, ...] | None = None
    delimiter: str = ","


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def load_recording(path: Path | str, schema: CsvSchema | None = None) -> Recording:
    """Load a CSV recording and its ``.meta.json`` sidecar.

    Raises ValueError on non-numeric cells, inconsistent row lengths, empty
    files, or a non-positive sample rate; FileNotFoundError when the CSV or
    sidecar is absent.
    """
    path = Path(path)
    schema = schema or CsvSchema()
    if not path.exists():
        raise FileNotFoundError(f"recording file not found: {path}")
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FileNotFoundError(f"sidecar metadata not found: {sidecar}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    rate = float(meta["sample_rate_hz"])
    if rate <= 0:
        raise ValueError(f"sample_rate_hz must be positive, got {rate}")
    subject_id = str(meta["subject_id"])

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"no timepoints in {path}") from None
        header = [h.strip() for h in header]
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in values):
                raise ValueError(f"{path}:{lineno}: non-finite sample")
            rows.append(values)
    if not rows:
        raise ValueError(f"no timepoints in {path}")

    matrix = np.asarray(rows, dtype=float).T  # -> [channels, timepoints]
    channels = tuple(header)
    if schema.channels is not None:
        missing = [c for c in schema.channels if c not in header]
        if missing:
            raise ValueError(f"columns not present in {path}: {missing}")
        idx = [header.index(c) for c in schema.channels]
        matrix = matrix[idx]
        channels = tuple(schema.channels)
    return Recording(subject_id=subject_id, sample_rate_hz=rate, channels=channels, samples=matrix)


def write_recording(path: Path | str, recording: Recording) -> None:
    """Inverse of :func:`load_recording`; writes the CSV and its sidecar."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(recording.channels)
        for row in recording.samples.T:
            writer.writerow([repr(float(v)) for v in row])
    sidecar = {
        "sample_rate_hz": recording.sample_rate_hz,
        "subject_id": recording.subject_id,
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def read_events(path: Path | str) -> tuple[dict, list[ValenceEvent]]:
    """Read a JSON-lines keypress log; returns (header, events)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"event log not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"empty event log: {path}")
    header = json.loads(lines[0])
    if "version" not in header:
        raise ValueError(f"{path}: first line must be a header object with a 'version' field")
    events = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        events.append(
            ValenceEvent(
                t_start_s=float(rec["t_start_s"]),
                t_end_s=float(rec["t_end_s"]),
                state=ValenceState(int(rec["state"])),
            )
        )
    return header, events


def write_events(path: Path | str, events: Sequence[ValenceEvent], **header_fields) -> None:
    header = {"version": EVENT_LOG_VERSION, **header_fields}
    lines = [json.dumps(header, sort_keys=True)]
    for ev in events:
        lines.append(
            json.dumps(
                {"t_start_s": ev.t_start_s, "t_end_s": ev.t_end_s, "state": int(ev.state)},
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _check_events(events: Sequence[ValenceEvent], duration_s: float) -> None:
    prev_end = 0.0
    prev: ValenceEvent | None = None
    for ev in events:
        if prev is not None and ev.t_start_s < prev_end:
            raise ValueError(f"overlapping events: {prev} and {ev}")
        if ev.t_end_s > duration_s + 1e-9:
            raise ValueError(
                f"event ends at {ev.t_end_s}s, beyond recording duration {duration_s}s"
            )
        prev, prev_end = ev, ev.t_end_s


def align_labels(recording: Recording, events: Sequence[ValenceEvent]) -> LabeledSeries:
    """Map keypress events onto per-timepoint labels.

    Timepoint i (at time i / sample_rate_hz) takes the state of the event
    whose half-open interval [t_start, t_end) covers it; uncovered timepoints
    are neutral. Events must be sorted and non-overlapping.
    """
    _check_events(events, recording.duration_s)
    times = np.arange(recording.n_timepoints) / recording.sample_rate_hz
    labels = np.full(recording.n_timepoints, int(ValenceState.NEUTRAL), dtype=np.int8)
    for ev in events:
        mask = (times >= ev.t_start_s) & (times < ev.t_end_s)
        labels[mask] = int(ev.state)
    return LabeledSeries(recording=recording, labels=labels)


def labels_to_events(labels: np.ndarray, sample_rate_hz: float) -> list[ValenceEvent]:
    """Inverse of :func:`align_labels` for the non-neutral runs: neutral
    stretches become gaps, everything else becomes an event."""
    labels = np.asarray(labels)
    events: list[ValenceEvent] = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            if labels[start] != int(ValenceState.NEUTRAL):
                events.append(
                    ValenceEvent(
                        t_start_s=start / sample_rate_hz,
                        t_end_s=i / sample_rate_hz,
                        state=ValenceState(int(labels[start])),
                    )
                )
            start = i
    return events


@dataclass(frozen=True)
class WindowedSeries:
    """Sliding windows over a labeled recording, one per valid center.

    ``windows`` has shape [n_windows, n_channels, receptive_field]; the label
    of window i is the series label at the window's center timepoint.
    """

    subject_id: str
    windows: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "windows", _readonly(self.windows))
        object.__setattr__(self, "labels", _readonly(self.labels))

    def __len__(self) -> int:
        return self.windows.shape[0]


def extract_windows(series: LabeledSeries, receptive_field: int) -> WindowedSeries:
    """Cut a labeled series into overlapping windows of ``receptive_field``
    timepoints. Window count is n_timepoints - receptive_field + 1; the label
    is taken at the window center (the earlier index when the field is even).
    """
    if receptive_field < 1:
        raise ValueError(f"receptive_field must be >= 1, got {receptive_field}")
    n = series.recording.n_timepoints
    if n < receptive_field:
        raise ValueError(
            f"recording has {n} timepoints, shorter than receptive field {receptive_field}"
        )
    samples = series.recording.samples
    n_windows = n - receptive_field + 1
    # stride trick over the time axis; copy so the result owns its memory
    windows = np.lib.stride_tricks.sliding_window_view(samples, receptive_field, axis=1)
    windows = np.ascontiguousarray(windows.transpose(1, 0, 2))
    center = (receptive_field - 1) // 2
    labels = series.labels[center : center + n_windows].copy()
    return WindowedSeries(subject_id=series.subject_id, windows=windows, labels=labels)
