"""Valence label sequences as contiguous segment timelines.

A timeline is an ordered list of (state, start_s, end_s) segments covering
[0, total_duration_s] with no gaps, no overlaps, and no two adjacent segments
sharing a state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from rym.data import ValenceState

TIMELINE_VERSION = 1


@dataclass(frozen=True)
class AffectSegment:
    state: ValenceState
    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if not self.start_s < self.end_s:
            raise ValueError(f"segment must have start < end, got [{self.start_s}, {self.end_s})")
        object.__setattr__(self, "state", ValenceState(self.state))

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class AffectTimeline:
    segments: tuple[AffectSegment, ...]

    def __post_init__(self) -> None:
        segments = tuple(self.segments)
        if not segments:
            raise ValueError("timeline needs at least one segment")
        if segments[0].start_s != 0.0:
            raise ValueError(f"first segment must start at 0, starts at {segments[0].start_s}")
        for a, b in zip(segments, segments[1:]):
            if b.start_s != a.end_s:
                raise ValueError(f"segments not contiguous: {a.end_s} -> {b.start_s}")
            if b.state == a.state:
                raise ValueError(f"adjacent segments share state {a.state!r} at {a.end_s}s")
        object.__setattr__(self, "segments", segments)

    @property
    def total_duration_s(self) -> float:
        return self.segments[-1].end_s

    def states(self) -> list[ValenceState]:
        return [seg.state for seg in self.segments]

    def durations(self) -> list[float]:
        return [seg.duration_s for seg in self.segments]

    def __len__(self) -> int:
        return len(self.segments)


def to_timeline(labels: Sequence[int] | np.ndarray, sample_rate_hz: float) -> AffectTimeline:
    """Run-length encode per-timepoint labels into a timeline.

    Boundaries sit at label changes; segment times are index / rate, and the
    final segment ends at n / rate.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label sequence")
    if sample_rate_hz <= 0:
        raise ValueError(f"sample_rate_hz must be positive, got {sample_rate_hz}")
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [labels.size]))
    segments = [
        AffectSegment(
            state=ValenceState(int(labels[s])),
            start_s=s / sample_rate_hz,
            end_s=e / sample_rate_hz,
        )
        for s, e in zip(starts, ends)
    ]
    return AffectTimeline(segments=tuple(segments))


def expand_timeline(timeline: AffectTimeline, sample_rate_hz: float) -> np.ndarray:
    """Inverse of :func:`to_timeline`: per-timepoint labels at the given rate."""
    n = int(round(timeline.total_duration_s * sample_rate_hz))
    labels = np.empty(n, dtype=np.int8)
    for seg in timeline.segments:
        i0 = int(round(seg.start_s * sample_rate_hz))
        i1 = int(round(seg.end_s * sample_rate_hz))
        labels[i0:i1] = int(seg.state)
    return labels


def _bounds_and_states(timeline: AffectTimeline) -> tuple[list[float], list[ValenceState]]:
    bounds = [seg.start_s for seg in timeline.segments] + [timeline.total_duration_s]
    return bounds, timeline.states()


def _rebuild(bounds: list[float], states: list[ValenceState]) -> AffectTimeline:
    """Build a timeline from boundary times, coalescing equal-adjacent runs
    so the original boundary floats are reused verbatim."""
    out_bounds = [bounds[0]]
    out_states: list[ValenceState] = []
    for i, state in enumerate(states):
        if out_states and out_states[-1] == state:
            out_bounds[-1] = bounds[i + 1]
        else:
            out_states.append(state)
            out_bounds.append(bounds[i + 1])
    segments = tuple(
        AffectSegment(state=s, start_s=out_bounds[i], end_s=out_bounds[i + 1])
        for i, s in enumerate(out_states)
    )
    return AffectTimeline(segments=segments)


def smooth(timeline: AffectTimeline, min_duration_s: float) -> AffectTimeline:
    """Merge segments shorter than ``min_duration_s`` into their longer
    adjacent neighbor (earlier neighbor on a tie), repeating until no short
    segment remains. Total duration is preserved; a lone segment is returned
    unchanged regardless of its length.
    """
    if min_duration_s < 0:
        raise ValueError(f"min_duration_s must be >= 0, got {min_duration_s}")
    bounds, states = _bounds_and_states(timeline)
    while len(states) > 1:
        durs = [bounds[i + 1] - bounds[i] for i in range(len(states))]
        short = [i for i, d in enumerate(durs) if d < min_duration_s]
        if not short:
            break
        # absorb the shortest candidate first (earliest index on ties)
        i = min(short, key=lambda j: (durs[j], j))
        if i == 0:
            neighbor = 1
        elif i == len(states) - 1:
            neighbor = i - 1
        else:
            neighbor = i - 1 if durs[i - 1] >= durs[i + 1] else i + 1
        states[i] = states[neighbor]
        # drop the boundary between the short segment and its absorber
        del bounds[i + 1 if neighbor > i else i]
        del states[neighbor]
        # collapse any equal-adjacent run the merge created
        j = 1
        while j < len(states):
            if states[j] == states[j - 1]:
                del states[j]
                del bounds[j]
            else:
                j += 1
    return _rebuild(bounds, states)


def permute(timeline: AffectTimeline, seed: int, max_tries: int = 100) -> AffectTimeline:
    """Shuffle segment states over the fixed duration slots.

    Durations stay in place; only the states move. The result is resampled
    until its state sequence differs from the input (at most ``max_tries``
    draws). Runs of equal states created by the shuffle are coalesced so the
    output is a valid timeline. Deterministic per seed.
    """
    if len(timeline) < 2:
        raise ValueError("permute needs at least 2 segments")
    bounds, states = _bounds_and_states(timeline)
    if len(set(states)) < 2:
        raise ValueError("all segments share one state; no distinct permutation exists")
    rng = np.random.default_rng(seed)
    codes = np.array([int(s) for s in states])
    for _ in range(max_tries):
        shuffled = rng.permutation(codes)
        if not np.array_equal(shuffled, codes):
            break
    else:
        raise RuntimeError(f"no distinct permutation found in {max_tries} tries")
    return _rebuild(bounds, [ValenceState(int(c)) for c in shuffled])


def timeline_to_json(timeline: AffectTimeline) -> dict:
    return {
        "version": TIMELINE_VERSION,
        "total_duration_s": timeline.total_duration_s,
        "segments": [
            {"state": int(seg.state), "start_s": seg.start_s, "end_s": seg.end_s}
            for seg in timeline.segments
        ],
    }


def timeline_from_json(doc: dict) -> AffectTimeline:
    if doc.get("version") != TIMELINE_VERSION:
        raise ValueError(f"unsupported timeline version: {doc.get('version')!r}")
    return AffectTimeline(
        segments=tuple(
            AffectSegment(state=ValenceState(int(d["state"])), start_s=d["start_s"], end_s=d["end_s"])
            for d in doc["segments"]
        )
    )


def save_timeline(path: Path | str, timeline: AffectTimeline) -> None:
    Path(path).write_text(json.dumps(timeline_to_json(timeline), indent=2) + "\n", encoding="utf-8")


def load_timeline(path: Path | str) -> AffectTimeline:
    return timeline_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
