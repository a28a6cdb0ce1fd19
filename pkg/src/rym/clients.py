"""Clients for the music-generation, image-generation, and embedding
services, each with a deterministic offline mock.

Pipeline code depends only on the request/response contracts here; live
implementations speak JSON over HTTP (see the schemas in the request
builders) and mocks reproduce the same contracts offline. Every request
carries an idempotency key derived from its content, echoed by mocks, so a
retried request can never yield a second distinct asset.
"""

from __future__ import annotations

import base64
import hashlib
import io
import time
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
import requests
import scipy.io.wavfile
from PIL import Image

from rym.assemble import AudioClip
from rym.data import ValenceState
from rym.prompts import PromptRewriteError

EMBED_DIMS = {"text-image": 512, "text-audio": 512}
MOCK_MUSIC_RATE = 32000


class TransportError(RuntimeError):
    """Network-level failure (timeout, connection reset, 5xx). Retryable."""


class ServiceRejectionError(RuntimeError):
    """Service-side rejection (4xx). Not retryable; carries the body."""

    def __init__(self, status: int, body: str):
        super().__init__(f"service rejected request (HTTP {status}): {body[:500]}")
        self.status = status
        self.body = body


# --- request/response types --------------------------------------------------

@dataclass(frozen=True)
class MusicRequest:
    prompt: str
    melody: AudioClip
    duration_s: float

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if len(self.melody) == 0:
            raise ValueError("melody payload is empty")

    def idempotency_key(self) -> str:
        h = hashlib.sha256()
        h.update(self.prompt.encode())
        h.update(np.asarray(self.melody.samples).tobytes())
        h.update(f"{self.melody.sample_rate_hz}|{self.duration_s}".encode())
        return h.hexdigest()


@dataclass(frozen=True)
class ImageRequest:
    prompt: str
    sketch: np.ndarray  # [h, w, 3] uint8
    strength: float
    frame_count: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        sketch = np.asarray(self.sketch, dtype=np.uint8)
        if sketch.ndim != 3 or sketch.shape[2] != 3 or sketch.size == 0:
            raise ValueError(f"sketch must be a non-empty [h, w, 3] raster, got {sketch.shape}")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength must be in [0, 1], got {self.strength}")
        if self.frame_count < 1:
            raise ValueError(f"frame_count must be >= 1, got {self.frame_count}")
        object.__setattr__(self, "sketch", sketch)

    def idempotency_key(self) -> str:
        h = hashlib.sha256()
        h.update(self.prompt.encode())
        h.update(self.sketch.tobytes())
        h.update(f"{self.sketch.shape}|{self.strength}|{self.frame_count}|{self.seed}".encode())
        return h.hexdigest()


@dataclass(frozen=True)
class MediaAsset:
    kind: str  # "audio" | "image"
    payload: object  # AudioClip for audio, uint8 [h, w, 3] array for image
    provenance: str  # "live" | "mock"

    def __post_init__(self) -> None:
        if self.kind == "audio":
            if not isinstance(self.payload, AudioClip) or len(self.payload) == 0:
                raise ValueError("audio asset needs a non-empty AudioClip payload")
        elif self.kind == "image":
            arr = np.asarray(self.payload)
            if arr.size == 0:
                raise ValueError("image asset payload is empty")
        else:
            raise ValueError(f"unknown asset kind {self.kind!r}")
        if self.provenance not in ("live", "mock"):
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass(frozen=True)
class EmbeddingVector:
    space: str  # "text-image" | "text-audio"
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if self.space not in EMBED_DIMS:
            raise ValueError(f"unknown embedding space {self.space!r}")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite embedding values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


class MusicClient(Protocol):
    def generate(self, req: MusicRequest) -> MediaAsset: ...


class ImageClient(Protocol):
    def generate(self, req: ImageRequest) -> list[MediaAsset]: ...


class EmbeddingClient(Protocol):
    def embed(self, item, kind: str, space: str) -> EmbeddingVector: ...


def _prompt_hash(prompt: str, n_bytes: int) -> bytes:
    return hashlib.sha256(prompt.encode()).digest()[:n_bytes]


# --- mocks -------------------------------------------------------------------

class MockMusicClient:
    """Deterministic sine mixture whose base frequency is a hash of the
    prompt, so different affect prompts yield spectrally distinct audio."""

    def __init__(self, sample_rate_hz: int = MOCK_MUSIC_RATE):
        self.sample_rate_hz = sample_rate_hz
        self._cache: dict[str, MediaAsset] = {}

    def generate(self, req: MusicRequest) -> MediaAsset:
        key = req.idempotency_key()
        if key in self._cache:
            return self._cache[key]
        n = int(round(req.duration_s * self.sample_rate_hz))
        base = 110.0 + int.from_bytes(_prompt_hash(req.prompt, 4), "big") % 770
        t = np.arange(n) / self.sample_rate_hz
        x = (
            0.45 * np.sin(2 * np.pi * base * t)
            + 0.25 * np.sin(2 * np.pi * 2 * base * t)
            + 0.12 * np.sin(2 * np.pi * 3 * base * t)
        )
        # fold in a faint trace of the guiding melody's fundamental
        melody_rate = req.melody.sample_rate_hz
        spec = np.abs(np.fft.rfft(req.melody.samples))
        if spec.size > 1:
            peak = int(np.argmax(spec[1:]) + 1)
            f0 = peak * melody_rate / len(req.melody)
            if 20.0 < f0 < self.sample_rate_hz / 2:
                x += 0.1 * np.sin(2 * np.pi * f0 * t)
        asset = MediaAsset(
            kind="audio",
            payload=AudioClip(samples=np.clip(x, -1, 1), sample_rate_hz=self.sample_rate_hz),
            provenance="mock",
        )
        self._cache[key] = asset
        return asset


class MockImageClient:
    """Blends the sketch toward a prompt-hash color by ``strength``; frames in
    a sequence are identical (the blend is fully determined by the request)."""

    def __init__(self):
        self._cache: dict[str, list[MediaAsset]] = {}

    def generate(self, req: ImageRequest) -> list[MediaAsset]:
        key = req.idempotency_key()
        if key in self._cache:
            return self._cache[key]
        color = np.frombuffer(_prompt_hash(req.prompt, 3), dtype=np.uint8).astype(float)
        blended = (1.0 - req.strength) * req.sketch.astype(float) + req.strength * color
        frame = np.clip(np.round(blended), 0, 255).astype(np.uint8)
        assets = [
            MediaAsset(kind="image", payload=frame.copy(), provenance="mock")
            for _ in range(req.frame_count)
        ]
        self._cache[key] = assets
        return assets


def _content_digest(item, kind: str) -> bytes:
    h = hashlib.sha256()
    h.update(kind.encode())
    if kind == "text":
        h.update(item.encode())
    elif kind == "image":
        arr = np.asarray(item, dtype=np.uint8)
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    elif kind == "audio":
        clip = item
        h.update(f"{clip.sample_rate_hz}".encode())
        h.update(np.asarray(clip.samples).tobytes())
    else:
        raise ValueError(f"unknown item kind {kind!r}")
    return h.digest()


def _check_space(kind: str, space: str) -> None:
    admissible = {"text-image": ("text", "image"), "text-audio": ("text", "audio")}
    if space not in admissible:
        raise ValueError(f"unknown embedding space {space!r}")
    if kind not in admissible[space]:
        raise ValueError(f"item kind {kind!r} is not admissible for space {space!r}")


class MockEmbeddingClient:
    """Deterministic pseudo-random unit vector keyed by content hash."""

    def embed(self, item, kind: str, space: str) -> EmbeddingVector:
        _check_space(kind, space)
        seed = int.from_bytes(_content_digest(item, kind)[:8], "big")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(EMBED_DIMS[space])
        v /= np.linalg.norm(v)
        return EmbeddingVector(space=space, values=v)


# --- live http clients ---------------------------------------------------

@dataclass(frozen=True)
class HttpSettings:
    base_url: str
    timeout_s: float = 120.0
    max_retries: int = 3
    backoff_base_s: float = 0.5


def post_json(
    settings: HttpSettings,
    path: str,
    payload: dict,
    sleep: Callable[[float], None] = time.sleep,
    session: requests.Session | None = None,
) -> dict:
    """POST with bounded retries and exponential backoff. Timeouts,
    connection errors, and 5xx responses are retryable; 4xx responses are
    surfaced immediately with their body."""
    url = settings.base_url.rstrip("/") + path
    last_error: Exception | None = None
    post = (session or requests).post
    for attempt in range(settings.max_retries):
        try:
            resp = post(url, json=payload, timeout=settings.timeout_s)
        except (requests.Timeout, requests.ConnectionError) as err:
            last_error = TransportError(f"{url}: {err}")
        else:
            if resp.status_code < 400:
                return resp.json()
            if resp.status_code < 500:
                raise ServiceRejectionError(resp.status_code, resp.text)
            last_error = TransportError(f"{url}: HTTP {resp.status_code}")
        if attempt < settings.max_retries - 1:
            sleep(settings.backoff_base_s * 2**attempt)
    raise last_error  # type: ignore[misc]


def _wav_b64(clip: AudioClip) -> str:
    buf = io.BytesIO()
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    scipy.io.wavfile.write(buf, int(round(clip.sample_rate_hz)), pcm)
    return base64.b64encode(buf.getvalue()).decode()


def _b64_wav(data: str) -> AudioClip:
    rate, pcm = scipy.io.wavfile.read(io.BytesIO(base64.b64decode(data)))
    if pcm.ndim == 2:
        pcm = pcm.mean(axis=1)
    return AudioClip(samples=pcm / 32768.0, sample_rate_hz=float(rate))


def _png_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


class HttpMusicClient:
    """POST /generate with {"prompt", "melody_wav_b64", "duration_s",
    "idempotency_key"}; expects {"audio_wav_b64"}."""

    def __init__(self, settings: HttpSettings, sleep: Callable[[float], None] = time.sleep):
        self.settings = settings
        self._sleep = sleep

    def generate(self, req: MusicRequest) -> MediaAsset:
        body = {
            "prompt": req.prompt,
            "melody_wav_b64": _wav_b64(req.melody),
            "duration_s": req.duration_s,
            "idempotency_key": req.idempotency_key(),
        }
        doc = post_json(self.settings, "/generate", body, sleep=self._sleep)
        return MediaAsset(kind="audio", payload=_b64_wav(doc["audio_wav_b64"]), provenance="live")


class HttpImageClient:
    """POST /generate with {"prompt", "sketch_png_b64", "strength",
    "frame_count", "seed", "idempotency_key"}; expects {"frames_png_b64": [..]}."""

    def __init__(self, settings: HttpSettings, sleep: Callable[[float], None] = time.sleep):
        self.settings = settings
        self._sleep = sleep

    def generate(self, req: ImageRequest) -> list[MediaAsset]:
        body = {
            "prompt": req.prompt,
            "sketch_png_b64": _png_b64(req.sketch),
            "strength": req.strength,
            "frame_count": req.frame_count,
            "seed": req.seed,
            "idempotency_key": req.idempotency_key(),
        }
        doc = post_json(self.settings, "/generate", body, sleep=self._sleep)
        frames = []
        for b64 in doc["frames_png_b64"]:
            img = Image.open(io.BytesIO(base64.b64decode(b64))).convert("RGB")
            frames.append(MediaAsset(kind="image", payload=np.asarray(img), provenance="live"))
        return frames


class HttpEmbeddingClient:
    """POST /embed with {"space", "kind", and one of "text" | "image_png_b64"
    | "audio_wav_b64"}; expects {"values": [..]}."""

    def __init__(self, settings: HttpSettings, sleep: Callable[[float], None] = time.sleep):
        self.settings = settings
        self._sleep = sleep

    def embed(self, item, kind: str, space: str) -> EmbeddingVector:
        _check_space(kind, space)
        body: dict = {"space": space, "kind": kind}
        if kind == "text":
            body["text"] = item
        elif kind == "image":
            body["image_png_b64"] = _png_b64(item)
        else:
            body["audio_wav_b64"] = _wav_b64(item)
        doc = post_json(self.settings, "/embed", body, sleep=self._sleep)
        return EmbeddingVector(space=space, values=np.asarray(doc["values"], dtype=float))


class HttpRewriterClient:
    """POST /rewrite with {"base_text", "words", "state", "instruction"};
    expects {"text"}. Satisfies the prompt module's rewriter contract."""

    def __init__(self, settings: HttpSettings, sleep: Callable[[float], None] = time.sleep):
        self.settings = settings
        self._sleep = sleep

    def rewrite(self, base_text: str, words: Sequence[str], state: ValenceState, instruction: str) -> str:
        body = {
            "base_text": base_text,
            "words": list(words),
            "state": int(state),
            "instruction": instruction,
        }
        try:
            doc = post_json(self.settings, "/rewrite", body, sleep=self._sleep)
        except TransportError as err:
            raise PromptRewriteError(str(err), retryable=True) from err
        except ServiceRejectionError as err:
            raise PromptRewriteError(str(err), retryable=False) from err
        return doc.get("text", "")
