"""Quantitative evaluation: embedding distances, visual/audio attributes,
affect-attribute correlations, keypress cross-correlation, and the rank-sum
test.

All statistics are implemented directly (the test suite holds the independent
oracles); scipy supplies only special functions and the FFT-adjacent
plumbing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.special import stdtr

from rym.assemble import AudioClip
from rym.clients import EmbeddingVector


class DegenerateSignalError(ValueError):
    """Raised for 0/0-style undefined features (e.g. silence ratios)."""


class ZeroVarianceError(ValueError):
    """Raised when a correlation input has no variance."""


# --- embedding distances -------------------------------------------------

def embedding_distance(a: EmbeddingVector, b: EmbeddingVector, metric: str = "cosine-distance") -> float:
    """cosine-distance = 1 - cos(a, b); euclidean = |a - b|."""
    if a.space != b.space:
        raise ValueError(f"space mismatch: {a.space!r} vs {b.space!r}")
    if a.values.shape != b.values.shape:
        raise ValueError(f"dimension mismatch: {a.values.shape} vs {b.values.shape}")
    if metric == "euclidean":
        return float(np.linalg.norm(a.values - b.values))
    if metric == "cosine-distance":
        na, nb = np.linalg.norm(a.values), np.linalg.norm(b.values)
        if na == 0.0 or nb == 0.0:
            raise ValueError("cosine distance undefined for zero vectors")
        return float(1.0 - np.dot(a.values, b.values) / (na * nb))
    raise ValueError(f"unknown metric {metric!r}")


# --- visual attributes ---------------------------------------------------

def rgb_to_hsv_array(image: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized per-pixel RGB (uint8) -> (hue_deg [0, 360), sat, val)."""
    rgb = np.asarray(image, dtype=float) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    sat = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)

    hue = np.zeros_like(maxc)
    nz = delta > 0
    rc = np.where(nz, (maxc - r) / np.where(nz, delta, 1.0), 0.0)
    gc = np.where(nz, (maxc - g) / np.where(nz, delta, 1.0), 0.0)
    bc = np.where(nz, (maxc - b) / np.where(nz, delta, 1.0), 0.0)
    hue = np.where(r == maxc, bc - gc, hue)
    hue = np.where((g == maxc) & (r != maxc), 2.0 + rc - bc, hue)
    hue = np.where((b == maxc) & (r != maxc) & (g != maxc), 4.0 + gc - rc, hue)
    hue = np.where(nz, (hue / 6.0) % 1.0, 0.0)
    return hue * 360.0, sat, maxc


def hsv_to_rgb_array(hue_deg: np.ndarray, sat: np.ndarray, val: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv_array`; returns float RGB in [0, 1]."""
    h = (np.asarray(hue_deg, dtype=float) % 360.0) / 60.0
    s = np.asarray(sat, dtype=float)
    v = np.asarray(val, dtype=float)
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    lut = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros(h.shape + (3,))
    for idx, (rr, gg, bb) in enumerate(lut):
        mask = i == idx
        out[mask, 0], out[mask, 1], out[mask, 2] = rr[mask], gg[mask], bb[mask]
    return out


@dataclass(frozen=True)
class HsvStats:
    hue_deg: float  # circular mean, 0 when degenerate
    saturation: float
    value: float
    hue_degenerate: bool  # opposite hues cancelled out


def hsv_stats(image: np.ndarray) -> HsvStats:
    """Circular-mean hue plus arithmetic-mean saturation and value.

    Zero-saturation pixels report hue 0 by convention; when the circular mean
    resultant vanishes (e.g. a half-red/half-cyan image) the hue is reported
    as 0 and flagged degenerate.
    """
    image = np.asarray(image)
    if image.size == 0:
        raise ValueError("empty image")
    hue, sat, val = rgb_to_hsv_array(image)
    degenerate = False
    if np.all(hue == hue.flat[0]):
        # uniform hue: skip the trig path so solid colors stay exact
        mean_hue = float(hue.flat[0])
    else:
        theta = np.deg2rad(hue.ravel())
        resultant = complex(np.mean(np.cos(theta)), np.mean(np.sin(theta)))
        degenerate = abs(resultant) < 1e-9
        mean_hue = 0.0 if degenerate else math.degrees(math.atan2(resultant.imag, resultant.real)) % 360.0
    return HsvStats(
        hue_deg=mean_hue,
        saturation=float(sat.mean()),
        value=float(val.mean()),
        hue_degenerate=bool(degenerate),
    )


# --- audio attributes -----------------------------------------------------

def _frames(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    starts = range(0, x.size - window + 1, hop)
    return np.stack([x[s : s + window] for s in starts])


def spectral_centroid(clip: AudioClip, window_size: int = 2048, hop: int = 512) -> float:
    """Magnitude-weighted mean frequency, averaged over Hann-windowed frames.
    Silence maps to 0 Hz."""
    x = clip.samples
    if x.size < window_size:
        raise ValueError(f"clip of {x.size} samples is shorter than window {window_size}")
    frames = _frames(x, window_size, hop) * np.hanning(window_size)
    mags = np.abs(np.fft.rfft(frames, axis=1))
    freqs = np.fft.rfftfreq(window_size, d=1.0 / clip.sample_rate_hz)
    totals = mags.sum(axis=1)
    live = totals > 0
    if not np.any(live):
        return 0.0
    centroids = (mags[live] @ freqs) / totals[live]
    return float(centroids.mean())


def rms_intensity(clip: AudioClip) -> float:
    if len(clip) == 0:
        raise ValueError("empty clip")
    return float(np.sqrt(np.mean(clip.samples**2)))


def _spectral_energies(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-rfft-bin energies scaled so their sum equals sum(x**2)."""
    n = x.size
    spec = np.abs(np.fft.rfft(x)) ** 2
    weights = np.full(spec.size, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    freqs = np.fft.rfftfreq(n, d=1.0)  # cycles/sample; caller rescales
    return spec * weights / n, freqs


def band_energy_ratio(clip: AudioClip, split_hz: float) -> float:
    """Spectral energy above ``split_hz`` divided by energy at or below it."""
    if not 0 < split_hz < clip.sample_rate_hz / 2:
        raise ValueError(
            f"split_hz must lie in (0, {clip.sample_rate_hz / 2}), got {split_hz}"
        )
    if len(clip) == 0:
        raise ValueError("empty clip")
    energies, cycles = _spectral_energies(clip.samples)
    freqs = cycles * clip.sample_rate_hz
    below = float(energies[freqs <= split_hz].sum())
    above = float(energies[freqs > split_hz].sum())
    if below == 0.0 and above == 0.0:
        raise DegenerateSignalError("silent clip: band energy ratio is 0/0")
    return math.inf if below == 0.0 else above / below


# Krumhansl-Schmuckler key profiles (probe-tone ratings)
KS_MAJOR = np.array([6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88])
KS_MINOR = np.array([6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17])

CHROMA_F0_HZ = 110.0  # chroma span: three octaves upward from here
CHROMA_OCTAVES = 3


def chroma_profile(clip: AudioClip, window_size: int = 4096, hop: int = 2048) -> np.ndarray:
    """12-bin pitch-class magnitude profile over [110, 880) Hz.

    Only local spectral maxima contribute: window leakage otherwise bleeds a
    strong partial's shoulders into the neighboring pitch classes at the low
    end of the range.
    """
    x = clip.samples
    if x.size == 0:
        raise ValueError("empty clip")
    window = min(window_size, x.size)
    frames = _frames(x, window, max(1, min(hop, window)))
    mags = np.abs(np.fft.rfft(frames * np.hanning(window), axis=1))
    freqs = np.fft.rfftfreq(window, d=1.0 / clip.sample_rate_hz)
    hi = CHROMA_F0_HZ * 2**CHROMA_OCTAVES
    chroma = np.zeros(12)
    for mag in mags:
        peaks = np.flatnonzero((mag[1:-1] > mag[:-2]) & (mag[1:-1] >= mag[2:])) + 1
        peaks = peaks[(freqs[peaks] >= CHROMA_F0_HZ) & (freqs[peaks] < hi)]
        if peaks.size == 0:
            continue
        peaks = peaks[mag[peaks] > 0.05 * mag[peaks].max()]
        classes = np.round(12.0 * np.log2(freqs[peaks] / CHROMA_F0_HZ)).astype(int) % 12
        np.add.at(chroma, classes, mag[peaks])
    return chroma


def _pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(np.sum(xc**2)) * float(np.sum(yc**2)))
    if denom == 0.0:
        raise ZeroVarianceError("zero variance input")
    return float(np.dot(xc, yc) / denom)


def estimate_mode(clip: AudioClip, window_size: int = 4096, hop: int = 2048) -> float:
    """Major-vs-minor score: best correlation of the chroma profile against
    the major key templates minus the best against the minor templates, each
    maximized over the 12 rotations. Positive leans major. Flat or silent
    chroma scores 0.

    The chroma is cube-root compressed first; without compression one loud
    partial dominates the correlation and bare triads land on the wrong
    side."""
    chroma = np.cbrt(chroma_profile(clip, window_size, hop))
    if np.allclose(chroma, chroma[0]):
        return 0.0
    best_major = max(_pearson_r(chroma, np.roll(KS_MAJOR, k)) for k in range(12))
    best_minor = max(_pearson_r(chroma, np.roll(KS_MINOR, k)) for k in range(12))
    return float(best_major - best_minor)


def mel_spectrogram(
    clip: AudioClip, n_mels: int = 64, window_size: int = 1024, hop: int = 256
) -> np.ndarray:
    """[n_mels, n_frames] mel-weighted power spectrogram (plot data)."""
    x = clip.samples
    if x.size < window_size:
        raise ValueError(f"clip of {x.size} samples is shorter than window {window_size}")
    frames = _frames(x, window_size, hop) * np.hanning(window_size)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    freqs = np.fft.rfftfreq(window_size, d=1.0 / clip.sample_rate_hz)

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    edges = from_mel(np.linspace(0.0, float(to_mel(clip.sample_rate_hz / 2)), n_mels + 2))
    bank = np.zeros((n_mels, freqs.size))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - freqs) / max(hi - mid, 1e-12)
        bank[i] = np.clip(np.minimum(up, down), 0.0, None)
    return bank @ power.T


# --- correlations ----------------------------------------------------------

@dataclass(frozen=True)
class AttributeRow:
    """Per-segment visual and audio attributes used for affect correlation."""

    segment_index: int
    state: int  # -1 / 0 / +1
    hue_deg: float
    saturation: float
    value: float
    spectral_centroid_hz: float
    rms: float
    high_low_energy_ratio: float
    mode_score: float

    def __post_init__(self) -> None:
        fields = (
            self.hue_deg, self.saturation, self.value, self.spectral_centroid_hz,
            self.rms, self.high_low_energy_ratio, self.mode_score,
        )
        if not all(math.isfinite(v) for v in fields):
            raise ValueError(f"non-finite attribute in segment {self.segment_index}")
        if not 0 <= self.hue_deg < 360:
            raise ValueError(f"hue_deg out of range: {self.hue_deg}")


ATTRIBUTE_NAMES = (
    "hue_deg", "saturation", "value",
    "spectral_centroid_hz", "rms", "high_low_energy_ratio", "mode_score",
)


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    p_value: float
    n: int

    def __post_init__(self) -> None:
        if not -1.0 - 1e-12 <= self.r <= 1.0 + 1e-12:
            raise ValueError(f"|r| > 1: {self.r}")


def pearson(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Pearson r with a two-sided p from the t distribution (n - 2 dof)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    n = x.size
    if n < 3:
        raise ValueError(f"need n >= 3 for a defined p-value, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    r = _pearson_r(x, y)
    if abs(r) >= 1.0:
        return CorrelationResult(r=max(-1.0, min(1.0, r)), p_value=0.0, n=n)
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(stdtr(n - 2, -abs(t)))
    return CorrelationResult(r=r, p_value=p, n=n)


def affect_attribute_correlation(rows: Sequence[AttributeRow], attribute: str) -> CorrelationResult:
    """Pearson correlation between segment state codes and one attribute."""
    if attribute not in ATTRIBUTE_NAMES:
        raise ValueError(f"unknown attribute {attribute!r}")
    states = [row.state for row in rows]
    values = [getattr(row, attribute) for row in rows]
    return pearson(states, values)


@dataclass(frozen=True)
class CrossCorrResult:
    best_coefficient: float
    best_lag_s: float

    def __post_init__(self) -> None:
        if not -1.0 - 1e-12 <= self.best_coefficient <= 1.0 + 1e-12:
            raise ValueError(f"|r| > 1: {self.best_coefficient}")


def crosscorr_curve(
    a: Sequence[int], b: Sequence[int], rate_hz: float, max_lag_s: float
) -> list[tuple[float, float | None]]:
    """(lag_s, r) at every integer-sample lag; r is None where the overlap is
    shorter than 3 samples or has no variance. Lag k pairs a[t] with b[t+k]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty series")
    if max_lag_s < 0:
        raise ValueError(f"max_lag_s must be >= 0, got {max_lag_s}")
    max_lag = int(round(max_lag_s * rate_hz))
    curve: list[tuple[float, float | None]] = []
    for lag in range(-max_lag, max_lag + 1):
        start = max(0, -lag)
        end = min(a.size, b.size - lag)
        r: float | None
        if end - start < 3:
            r = None
        else:
            try:
                r = _pearson_r(a[start:end], b[start + lag : end + lag])
            except ZeroVarianceError:
                r = None
        curve.append((lag / rate_hz, r))
    return curve


def best_crosscorr(
    a: Sequence[int], b: Sequence[int], rate_hz: float, max_lag_s: float
) -> CrossCorrResult:
    """Maximum normalized cross-correlation over integer-sample lags in
    [-max_lag, +max_lag]. Ties prefer the smallest |lag|, then the negative
    lag. Lags with too-short or constant overlap are skipped; an error is
    raised only if every lag is skipped."""
    curve = crosscorr_curve(a, b, rate_hz, max_lag_s)
    candidates = [(lag_s, r) for lag_s, r in curve if r is not None]
    if not candidates:
        raise ValueError("no lag had a valid overlap of >= 3 samples with variance")
    best_lag, best_r = min(candidates, key=lambda lr: (-lr[1], abs(lr[0]), lr[0]))
    return CrossCorrResult(best_coefficient=best_r, best_lag_s=best_lag)


# --- rank-sum test ----------------------------------------------------------

def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    i = 0
    sorted_vals = values[order]
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_ranksum(x: Sequence[float], y: Sequence[float]) -> float:
    """Two-sided rank-sum p-value.

    Exact by enumerating all C(n+m, n) rank assignments when n + m <= 12 and
    there are no ties; otherwise a normal approximation with tie and
    continuity corrections.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("empty sample")
    n, m = x.size, y.size
    pooled = np.concatenate((x, y))
    ranks = _midranks(pooled)
    w = float(ranks[:n].sum())
    has_ties = np.unique(pooled).size < n + m

    if n + m <= 12 and not has_ties:
        total = le = ge = 0
        for combo in combinations(range(1, n + m + 1), n):
            s = sum(combo)
            total += 1
            le += s <= w
            ge += s >= w
        return min(1.0, 2.0 * min(le / total, ge / total))

    big_n = n + m
    mean = n * (big_n + 1) / 2.0
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (big_n * (big_n - 1))
    var = n * m / 12.0 * ((big_n + 1) - tie_term)
    if var <= 0:
        return 1.0  # all observations identical
    z = max(abs(w - mean) - 0.5, 0.0) / math.sqrt(var)
    return math.erfc(z / math.sqrt(2.0))
