"""Synthetic session generation for demos, tests, and the decoding analogue.

Each valence state adds a distinct fixed channel-offset pattern on top of
white noise, so the labels are decodable from the signal but nothing else is.
The noise amplitude is deliberately small relative to the offsets: with noisy
windows a label-supervised contrastive encoder can memorize arbitrary
(shuffled) labels through the noise directions, which would defeat
label-shuffle controls.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from rym.data import (
    LabeledSeries,
    Recording,
    labels_to_events,
    write_events,
    write_recording,
)

_ESSAY_TEMPLATE = (
    "Walking along the shoreline near {place} that evening, I remember the sky "
    "turning from gold to deep violet while the waves kept their slow, patient "
    "rhythm. A street musician played a tune my grandmother used to hum, and "
    "for one long minute I felt both completely at home and very far away. The "
    "salt air, the cooling sand underfoot, the distant laughter of strangers: "
    "all of it folded into a single bright ache of {feeling}."
)


@dataclass(frozen=True)
class SyntheticSpec:
    n_sessions: int = 9
    n_channels: int = 8
    sample_rate_hz: float = 10.0
    duration_s: float = 120.0
    offset_amplitude: float = 0.6
    noise_sigma: float = 0.15
    min_run: int = 40  # segment length bounds, in timepoints
    max_run: int = 150
    seed: int = 123


def state_patterns(spec: SyntheticSpec, rng: np.random.Generator) -> dict[int, np.ndarray]:
    base = rng.standard_normal((2, spec.n_channels))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    return {-1: base[0], 0: np.zeros(spec.n_channels), 1: base[1]}


def make_sessions(spec: SyntheticSpec = SyntheticSpec()) -> list[LabeledSeries]:
    """Deterministic synthetic multi-session corpus."""
    rng = np.random.default_rng(spec.seed)
    patterns = state_patterns(spec, rng)
    sessions = []
    for i in range(spec.n_sessions):
        n = int(round(spec.duration_s * spec.sample_rate_hz))
        labels = np.zeros(n, dtype=np.int8)
        t = 0
        state = 0
        while t < n:
            run = int(rng.integers(spec.min_run, spec.max_run))
            labels[t : t + run] = state
            state = int(rng.choice([s for s in (-1, 0, 1) if s != state]))
            t += run
        samples = spec.noise_sigma * rng.standard_normal((spec.n_channels, n))
        for code, pattern in patterns.items():
            samples[:, labels == code] += spec.offset_amplitude * pattern[:, None]
        rec = Recording(
            subject_id=f"s{i:02d}",
            sample_rate_hz=spec.sample_rate_hz,
            channels=tuple(f"ch{k}" for k in range(spec.n_channels)),
            samples=samples,
        )
        sessions.append(LabeledSeries(recording=rec, labels=labels))
    return sessions


def shuffle_labels(
    sessions: list[LabeledSeries], seed: int
) -> list[LabeledSeries]:
    """Permute each session's label array in place-order (control condition)."""
    rng = np.random.default_rng(seed)
    return [
        LabeledSeries(recording=s.recording, labels=rng.permutation(s.labels))
        for s in sessions
    ]


def _write_sketch(path: Path, rng: np.random.Generator, size: int = 64) -> None:
    """A small deterministic gradient-plus-blobs PNG standing in for a
    participant's digital sketch."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float) / (size - 1)
    img = np.stack(
        [80 + 120 * xx, 60 + 100 * yy, 140 + 60 * (1 - xx) * (1 - yy)], axis=2
    )
    for _ in range(4):
        cx, cy = rng.uniform(8, size - 8, 2)
        r = rng.uniform(4, 12)
        color = rng.uniform(0, 255, 3)
        mask = (xx * (size - 1) - cx) ** 2 + (yy * (size - 1) - cy) ** 2 < r**2
        img[mask] = color
    Image.fromarray(img.astype(np.uint8), "RGB").save(path)


def _write_melody(path: Path, rng: np.random.Generator, rate: int = 16000, dur_s: float = 3.0) -> None:
    """A short deterministic two-tone melody WAV (mono 16-bit PCM)."""
    t = np.arange(int(rate * dur_s)) / rate
    f1, f2 = rng.uniform(180, 400), rng.uniform(420, 700)
    half = t.size // 2
    x = 0.4 * np.sin(2 * np.pi * f1 * t)
    x[half:] = 0.4 * np.sin(2 * np.pi * f2 * t[half:])
    pcm = (np.clip(x, -1, 1) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


def write_session_dir(root: Path | str, session: LabeledSeries, seed: int = 0) -> Path:
    """Materialize one session as the on-disk layout the pipeline ingests:

        <root>/<subject_id>/recording.csv (+ .meta.json)
                            events.jsonl
                            essay.txt
                            sketch.png
                            melody.wav
                            session.json
    """
    rng = np.random.default_rng(seed)
    sdir = Path(root) / session.subject_id
    sdir.mkdir(parents=True, exist_ok=True)
    write_recording(sdir / "recording.csv", session.recording)
    events = labels_to_events(session.labels, session.recording.sample_rate_hz)
    write_events(
        sdir / "events.jsonl", events, kind="recall", subject_id=session.subject_id
    )
    place = rng.choice(["the old pier", "my street", "the campus lake", "the night market"])
    feeling = rng.choice(["longing", "quiet joy", "bittersweet calm"])
    (sdir / "essay.txt").write_text(
        _ESSAY_TEMPLATE.format(place=place, feeling=feeling), encoding="utf-8"
    )
    _write_sketch(sdir / "sketch.png", rng)
    _write_melody(sdir / "melody.wav", rng)
    (sdir / "session.json").write_text(
        json.dumps(
            {
                "version": 1,
                "subject_id": session.subject_id,
                "confidence": int(rng.integers(4, 8)),
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return sdir


def write_fixture_tree(root: Path | str, spec: SyntheticSpec = SyntheticSpec()) -> list[Path]:
    """Full on-disk fixture corpus for pipeline runs."""
    sessions = make_sessions(spec)
    return [
        write_session_dir(root, s, seed=spec.seed + i) for i, s in enumerate(sessions)
    ]
