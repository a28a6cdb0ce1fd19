"""Soundtrack assembly: cutting clips, crossfaded concatenation, WAV io, and
the synchronized video manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.io.wavfile

from rym.data import ValenceState
from rym.timeline import AffectTimeline

VIDEO_MANIFEST_VERSION = 1
DEFAULT_CROSSFADE_S = 0.040


@dataclass(frozen=True)
class AudioClip:
    """Mono audio, samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D mono, got shape {samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if samples.size and (np.max(np.abs(samples)) > 1.0 + 1e-9):
            raise ValueError("samples exceed [-1, 1]")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class RenderedTrack:
    """Assembled soundtrack plus where each source segment ends inside it."""

    clip: AudioClip
    boundaries_s: tuple[float, ...]
    clipped_samples: int

    def __post_init__(self) -> None:
        b = self.boundaries_s
        if any(b[i] > b[i + 1] for i in range(len(b) - 1)):
            raise ValueError("segment boundaries must be non-decreasing")


def cut(clip: AudioClip, duration_s: float) -> AudioClip:
    """First round(duration_s * rate) samples."""
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    n = int(round(duration_s * clip.sample_rate_hz))
    if n > len(clip):
        raise ValueError(
            f"clip of {len(clip)} samples is shorter than requested {duration_s}s ({n} samples)"
        )
    return AudioClip(samples=clip.samples[:n].copy(), sample_rate_hz=clip.sample_rate_hz)


def crossfade_concat(clips: Sequence[AudioClip], overlap_s: float = DEFAULT_CROSSFADE_S) -> RenderedTrack:
    """Concatenate clips with linear (equal-gain) crossfades.

    Over each overlap window the outgoing clip ramps 1 -> 0 while the incoming
    ramps 0 -> 1 and the two sum, so identical material passes through
    unchanged. Output length is sum(lengths) - (n - 1) * round(overlap * rate).
    Samples are clamped to [-1, 1]; the count of clamped samples is reported.
    """
    if not clips:
        raise ValueError("need at least one clip")
    if overlap_s < 0:
        raise ValueError(f"overlap_s must be >= 0, got {overlap_s}")
    rate = clips[0].sample_rate_hz
    if any(c.sample_rate_hz != rate for c in clips):
        rates = sorted({c.sample_rate_hz for c in clips})
        raise ValueError(f"mixed sample rates: {rates}")
    overlap = int(round(overlap_s * rate))
    for i, c in enumerate(clips):
        if len(c) <= overlap:
            raise ValueError(f"clip {i} ({len(c)} samples) is not longer than the {overlap}-sample overlap")

    total = sum(len(c) for c in clips) - (len(clips) - 1) * overlap
    out = np.zeros(total)
    fade_in = (np.arange(overlap) + 1.0) / overlap if overlap else np.zeros(0)
    fade_out = 1.0 - fade_in

    pos = 0
    boundaries = []
    for i, c in enumerate(clips):
        x = c.samples.copy()
        if i > 0 and overlap:
            x[:overlap] *= fade_in
        if i < len(clips) - 1 and overlap:
            x[-overlap:] *= fade_out
        out[pos : pos + len(x)] += x
        pos += len(x) - (overlap if i < len(clips) - 1 else 0)
        boundaries.append(pos / rate)

    clipped = int(np.sum(np.abs(out) > 1.0))
    np.clip(out, -1.0, 1.0, out=out)
    return RenderedTrack(
        clip=AudioClip(samples=out, sample_rate_hz=rate),
        boundaries_s=tuple(boundaries),
        clipped_samples=clipped,
    )


def write_wav(path: Path | str, clip: AudioClip) -> None:
    """16-bit little-endian PCM RIFF. Scaling matches read_wav's 1/32768 so a
    write/read round trip stays within half a quantization step."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    scipy.io.wavfile.write(str(path), int(round(clip.sample_rate_hz)), pcm)


def read_wav(path: Path | str) -> AudioClip:
    rate, data = scipy.io.wavfile.read(str(path))
    if data.ndim == 2:  # average channels down to mono
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(float) - 128.0) / 128.0
    else:  # float wav
        samples = np.clip(data.astype(float), -1.0, 1.0)
    return AudioClip(samples=samples, sample_rate_hz=float(rate))


@dataclass(frozen=True)
class ManifestEntry:
    segment_index: int
    state: ValenceState
    start_s: float
    end_s: float
    frame_refs: tuple[str, ...]
    frame_rate_hz: float


@dataclass(frozen=True)
class VideoManifest:
    entries: tuple[ManifestEntry, ...]

    def to_json(self) -> dict:
        return {
            "version": VIDEO_MANIFEST_VERSION,
            "entries": [
                {
                    "segment_index": e.segment_index,
                    "state": int(e.state),
                    "start_s": e.start_s,
                    "end_s": e.end_s,
                    "frame_refs": list(e.frame_refs),
                    "frame_rate_hz": e.frame_rate_hz,
                }
                for e in self.entries
            ],
        }

    @staticmethod
    def from_json(doc: dict) -> "VideoManifest":
        if doc.get("version") != VIDEO_MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version: {doc.get('version')!r}")
        return VideoManifest(
            entries=tuple(
                ManifestEntry(
                    segment_index=d["segment_index"],
                    state=ValenceState(int(d["state"])),
                    start_s=d["start_s"],
                    end_s=d["end_s"],
                    frame_refs=tuple(d["frame_refs"]),
                    frame_rate_hz=d["frame_rate_hz"],
                )
                for d in doc["entries"]
            )
        )


def build_video_manifest(
    timeline: AffectTimeline, frames: Sequence[Sequence[str]], fps: float
) -> VideoManifest:
    """Pair each timeline segment with its frame refs, spread evenly across
    the segment duration."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    if len(frames) != len(timeline):
        raise ValueError(
            f"frame-group count {len(frames)} does not match segment count {len(timeline)}"
        )
    entries = []
    for i, (seg, group) in enumerate(zip(timeline.segments, frames)):
        if not group:
            raise ValueError(f"segment {i} has no frames")
        entries.append(
            ManifestEntry(
                segment_index=i,
                state=seg.state,
                start_s=seg.start_s,
                end_s=seg.end_s,
                frame_refs=tuple(str(f) for f in group),
                frame_rate_hz=fps,
            )
        )
    return VideoManifest(entries=tuple(entries))


def save_manifest(path: Path | str, manifest: VideoManifest) -> None:
    Path(path).write_text(
        json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_manifest(path: Path | str) -> VideoManifest:
    return VideoManifest.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
