"""Label-conditional contrastive embedding of EEG windows.

One temporal-convolution encoder per session, all trained jointly: anchors are
drawn uniformly over every session's windows, positives share the anchor's
valence label but may come from *any* session (this is what aligns the
per-session latent spaces), negatives are drawn label-agnostically. The loss
is InfoNCE on dot-product similarities of unit-norm embeddings.

Everything is plain numpy with hand-derived gradients; training is bitwise
deterministic for a fixed seed.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from rym.data import LabeledSeries, ValenceState, WindowedSeries, extract_windows

CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step


@dataclass(frozen=True)
class EncoderConfig:
    receptive_field: int = 10
    hidden_units: int = 95
    out_dim: int = 7
    batch_size: int = 2048
    learning_rate: float = 0.005
    iterations: int = 2000
    temperature: float = 1.0
    seed: int = 0
    hybrid: bool = False  # stored for checkpoint compatibility; no behavior

    def __post_init__(self) -> None:
        for name in ("receptive_field", "hidden_units", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.out_dim < 2:
            raise ValueError(f"out_dim must be >= 2, got {self.out_dim}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def kernel_sizes(self) -> tuple[int, int]:
        # two stacked valid convolutions spanning exactly the receptive field:
        # k1 + k2 - 1 == receptive_field
        k1 = (self.receptive_field + 2) // 2
        return k1, self.receptive_field + 1 - k1


@dataclass
class SessionEncoder:
    """Parameters of one session's encoder: conv -> tanh -> conv -> tanh ->
    linear projection -> unit-sphere normalization."""

    w1: np.ndarray  # [hidden, channels, k1]
    b1: np.ndarray  # [hidden]
    w2: np.ndarray  # [hidden, hidden, k2]
    b2: np.ndarray  # [hidden]
    w3: np.ndarray  # [out_dim, hidden]
    b3: np.ndarray  # [out_dim]

    @property
    def n_channels(self) -> int:
        return self.w1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2, "w3": self.w3, "b3": self.b3}

    def copy(self) -> "SessionEncoder":
        return SessionEncoder(**{k: v.copy() for k, v in self.params().items()})


def init_encoder(rng: np.random.Generator, n_channels: int, cfg: EncoderConfig) -> SessionEncoder:
    """Glorot-uniform initialization; draws from ``rng`` in a fixed order."""
    k1, k2 = cfg.kernel_sizes
    h, d = cfg.hidden_units, cfg.out_dim

    def glorot(shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    return SessionEncoder(
        w1=glorot((h, n_channels, k1), n_channels * k1, h),
        b1=np.zeros(h),
        w2=glorot((h, h, k2), h * k2, h),
        b2=np.zeros(h),
        w3=glorot((d, h), h, d),
        b3=np.zeros(d),
    )


def _im2col(windows: np.ndarray, kernel: int) -> np.ndarray:
    """[n, channels, width] -> [n, positions, channels * kernel]."""
    view = np.lib.stride_tricks.sliding_window_view(windows, kernel, axis=2)
    # view: [n, channels, positions, kernel] -> [n, positions, channels, kernel]
    n, c, p, k = view.shape
    return np.ascontiguousarray(view.transpose(0, 2, 1, 3)).reshape(n, p, c * k)


def forward(enc: SessionEncoder, windows: np.ndarray, cfg: EncoderConfig, want_cache: bool = False):
    """Encode windows [n, channels, receptive_field] to unit-norm embeddings
    [n, out_dim]. With ``want_cache`` the intermediates needed by
    :func:`backward` are returned as well."""
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3 or windows.shape[1] != enc.n_channels or windows.shape[2] != cfg.receptive_field:
        raise ValueError(
            f"window batch shape {windows.shape} does not match "
            f"[n, {enc.n_channels}, {cfg.receptive_field}]"
        )
    k1, k2 = cfg.kernel_sizes
    h = cfg.hidden_units
    n = windows.shape[0]

    col1 = _im2col(windows, k1)  # [n, p1, c*k1], p1 == k2
    w1f = enc.w1.reshape(h, -1)
    h1 = col1 @ w1f.T
    h1 += enc.b1
    np.tanh(h1, out=h1)  # [n, p1, h]

    # second conv collapses the remaining p1 positions to one
    col2 = h1.reshape(n, -1)  # [n, p1*h], position-major
    w2f = enc.w2.transpose(0, 2, 1).reshape(h, -1)  # [h_out, p*h_in]
    h2 = col2 @ w2f.T
    h2 += enc.b2
    np.tanh(h2, out=h2)  # [n, h]

    z = h2 @ enc.w3.T + enc.b3  # [n, out_dim]
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("zero-norm embedding: encoder output collapsed before normalization")
    emb = z / norm
    if not want_cache:
        return emb
    return emb, {"col1": col1, "h1": h1, "h2": h2, "norm": norm, "emb": emb}


def backward(
    enc: SessionEncoder, cache: dict, d_emb: np.ndarray, cfg: EncoderConfig
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every encoder parameter, given the
    loss gradient w.r.t. the unit-norm embeddings.

    Consumes the cached activations in place; a cache can back only one
    backward pass."""
    h = cfg.hidden_units
    emb, norm = cache["emb"], cache["norm"]
    h1, h2, col1 = cache["h1"], cache["h2"], cache["col1"]
    n = emb.shape[0]

    # through z -> z/|z|: d_z = (g - (g.e) e) / |z|
    dz = (d_emb - np.sum(d_emb * emb, axis=1, keepdims=True) * emb) / norm

    dw3 = dz.T @ h2
    db3 = dz.sum(axis=0)
    dh2 = dz @ enc.w3

    # dpre2 = dh2 * (1 - h2^2), overwriting h2 (no longer needed)
    np.multiply(h2, h2, out=h2)
    np.subtract(1.0, h2, out=h2)
    dpre2 = np.multiply(dh2, h2, out=h2)
    col2 = h1.reshape(n, -1)
    dw2f = dpre2.T @ col2  # [h, p*h]
    db2 = dpre2.sum(axis=0)
    w2f = enc.w2.transpose(0, 2, 1).reshape(h, -1)
    dh1 = (dpre2 @ w2f).reshape(h1.shape)

    # dpre1 = dh1 * (1 - h1^2), overwriting h1
    np.multiply(h1, h1, out=h1)
    np.subtract(1.0, h1, out=h1)
    dpre1 = np.multiply(dh1, h1, out=h1)
    dw1f = dpre1.reshape(-1, h).T @ col1.reshape(-1, col1.shape[2])
    db1 = dpre1.sum(axis=(0, 1))

    k1, k2 = cfg.kernel_sizes
    return {
        "w1": dw1f.reshape(enc.w1.shape),
        "b1": db1,
        "w2": dw2f.reshape(h, k2, h).transpose(0, 2, 1),
        "b2": db2,
        "w3": dw3,
        "b3": db3,
    }


def infonce_loss(
    anchor: np.ndarray,
    positive: np.ndarray,
    negatives: Sequence[np.ndarray] | np.ndarray,
    temperature: float = 1.0,
) -> float:
    """InfoNCE for one anchor: -log softmax of the positive similarity against
    the negative similarities, with sim = dot product and logits scaled by
    1 / temperature."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    anchor = np.asarray(anchor, dtype=float)
    positive = np.asarray(positive, dtype=float)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=float))
    if negatives.shape[0] < 1:
        raise ValueError("need at least one negative")
    if positive.shape != anchor.shape or negatives.shape[1] != anchor.shape[0]:
        raise ValueError("embedding dimension mismatch")
    logits = np.concatenate(([anchor @ positive], negatives @ anchor)) / temperature
    m = logits.max()
    return float(m + np.log(np.sum(np.exp(logits - m))) - logits[0])


def batch_infonce(
    anchors: np.ndarray, positives: np.ndarray, negatives: np.ndarray, temperature: float
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean InfoNCE over a batch, each anchor scored against its positive and
    the shared negative set. Returns (loss, d_anchors, d_positives,
    d_negatives) with gradients of the *mean* loss.

    Works in place on large intermediates; similarities of unit vectors are
    bounded by 1, so shifting logits by the constant 1/temperature keeps exp
    in range without a per-row max pass.
    """
    b = anchors.shape[0]
    inv_tau = 1.0 / temperature
    s_pos = np.einsum("ij,ij->i", anchors, positives)  # [b]
    w_neg = anchors @ negatives.T  # [b, n_neg]; becomes the softmax weights

    # exp((s - 1) / tau), in place
    w_neg -= 1.0
    w_neg *= inv_tau
    np.exp(w_neg, out=w_neg)
    e_pos = np.exp((s_pos - 1.0) * inv_tau)

    z = w_neg.sum(axis=1)
    z += e_pos
    # loss_i = logsumexp_i - s_pos_i / tau, with the constant shift restored
    losses = np.log(z) + (1.0 - s_pos) * inv_tau
    w_neg /= z[:, None]
    w_pos = e_pos / z

    scale = inv_tau / b
    d_anchors = ((w_pos - 1.0)[:, None] * positives + w_neg @ negatives) * scale
    d_positives = (w_pos - 1.0)[:, None] * anchors * scale
    d_negatives = (w_neg.T @ anchors) * scale
    return float(losses.mean()), d_anchors, d_positives, d_negatives


@dataclass(frozen=True)
class WindowPool:
    """All sessions' windows flattened into one indexable pool.

    Window j of session i has flat id ``offsets[i] + j``; sessions are sorted
    by subject id so pool construction is independent of input order.
    """

    session_ids: tuple[str, ...]
    windows: tuple[np.ndarray, ...]
    labels: np.ndarray  # [total] int codes, concatenated in session order
    offsets: np.ndarray  # [n_sessions + 1]

    @property
    def total(self) -> int:
        return int(self.offsets[-1])

    def session_of(self, flat: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.offsets, flat, side="right") - 1

    def label_of(self, flat: np.ndarray) -> np.ndarray:
        return self.labels[flat]

    def gather(self, flat: np.ndarray, session_index: int) -> np.ndarray:
        local = flat - self.offsets[session_index]
        return self.windows[session_index][local]


def build_pool(sessions: Sequence[LabeledSeries], receptive_field: int) -> WindowPool:
    ordered = sorted(sessions, key=lambda s: s.subject_id)
    ids = [s.subject_id for s in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate subject ids: {ids}")
    windowed = [extract_windows(s, receptive_field) for s in ordered]
    offsets = np.concatenate(([0], np.cumsum([len(w) for w in windowed])))
    return WindowPool(
        session_ids=tuple(ids),
        windows=tuple(w.windows for w in windowed),
        labels=np.concatenate([w.labels for w in windowed]).astype(np.int8),
        offsets=offsets,
    )


@dataclass(frozen=True)
class ContrastiveBatch:
    """Flat pool ids for one training batch. ``negative`` is shared: every
    anchor is scored against the full negative set."""

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


def sample_contrastive_batch(
    pool: WindowPool, config: EncoderConfig, rng: np.random.Generator
) -> ContrastiveBatch:
    """Draw one batch: anchors uniform over all windows, positives uniform
    over same-label windows of any session (excluding the anchor itself),
    negatives uniform over all windows regardless of label."""
    present, counts = np.unique(pool.labels, return_counts=True)
    for code, count in zip(present, counts):
        if count < 2:
            raise ValueError(
                f"label {ValenceState(int(code)).name} has exactly one window; "
                "no valid positive exists"
            )
    by_label = {int(code): np.flatnonzero(pool.labels == code) for code in present}

    b = config.batch_size
    anchors = rng.integers(0, pool.total, size=b)
    positives = np.empty(b, dtype=np.int64)
    anchor_labels = pool.label_of(anchors)
    for code in sorted(by_label):  # fixed label order keeps rng use deterministic
        rows = np.flatnonzero(anchor_labels == code)
        if rows.size == 0:
            continue
        cands = by_label[code]
        m = cands.size
        # uniform over candidates minus the anchor: drawing from the first
        # m - 1 and redirecting a collision to the last is exactly uniform
        draw = cands[rng.integers(0, m - 1, size=rows.size)]
        collide = draw == anchors[rows]
        draw[collide] = cands[m - 1]
        positives[rows] = draw
    negatives = rng.integers(0, pool.total, size=b)
    return ContrastiveBatch(anchor=anchors, positive=positives, negative=negatives)


@dataclass
class EmbedderModel:
    """Per-session encoders plus the shared config and training history."""

    config: EncoderConfig
    encoders: dict[str, SessionEncoder]
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def encoder_for(self, session_id: str) -> SessionEncoder:
        try:
            return self.encoders[session_id]
        except KeyError:
            raise KeyError(
                f"unknown session {session_id!r}; model has {sorted(self.encoders)}"
            ) from None


def encode(model: EmbedderModel, session_id: str, window: np.ndarray) -> np.ndarray:
    """Embed one window [channels, receptive_field] onto the unit sphere."""
    enc = model.encoder_for(session_id)
    return forward(enc, np.asarray(window, dtype=float)[None, :, :], model.config)[0]


def encode_windows(model: EmbedderModel, session_id: str, windows: np.ndarray) -> np.ndarray:
    """Embed a whole stack of windows [n, channels, receptive_field]."""
    return forward(model.encoder_for(session_id), windows, model.config)


def _batch_step(
    encoders: dict[str, SessionEncoder],
    pool: WindowPool,
    batch: ContrastiveBatch,
    cfg: EncoderConfig,
) -> tuple[float, dict[str, dict[str, np.ndarray]]]:
    """Forward + backward for one batch. Returns the mean loss and per-session
    parameter gradients.

    All three roles' windows of a session go through one stacked forward and
    one stacked backward, which keeps the GEMMs large."""
    roles = (batch.anchor, batch.positive, batch.negative)
    stacked = np.concatenate(roles)
    stacked_sessions = pool.session_of(stacked)
    b = len(batch.anchor)
    embs = np.empty((3 * b, cfg.out_dim))

    # windows drawn several times (any role) are encoded once; their slot
    # gradients sum, which is exactly the chain rule for a reused input
    per_session: list[tuple[str, np.ndarray, np.ndarray, dict]] = []
    for si, sid in enumerate(pool.session_ids):
        rows = np.flatnonzero(stacked_sessions == si)
        if rows.size == 0:
            continue
        uniq, inverse = np.unique(stacked[rows], return_inverse=True)
        emb, cache = forward(encoders[sid], pool.gather(uniq, si), cfg, want_cache=True)
        embs[rows] = emb[inverse]
        per_session.append((sid, rows, inverse, cache))

    loss, d_a, d_p, d_n = batch_infonce(embs[:b], embs[b : 2 * b], embs[2 * b :], cfg.temperature)
    d_embs = np.concatenate((d_a, d_p, d_n))

    grads: dict[str, dict[str, np.ndarray]] = {}
    for sid, rows, inverse, cache in per_session:
        d_uniq = np.zeros((cache["emb"].shape[0], cfg.out_dim))
        np.add.at(d_uniq, inverse, d_embs[rows])
        grads[sid] = backward(encoders[sid], cache, d_uniq, cfg)
    return loss, grads


class _Adam:
    """Adam with the usual defaults; the fixed-lr SGD the loss magnitudes
    suggest first stalls far from alignment within a realistic iteration
    budget, so the trainer uses adaptive steps."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[tuple[str, str], np.ndarray] = {}
        self.v: dict[tuple[str, str], np.ndarray] = {}
        self.t = 0

    def step(self, encoders: dict[str, SessionEncoder], grads: dict[str, dict[str, np.ndarray]]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for sid, g in grads.items():
            enc = encoders[sid]
            for name, grad in g.items():
                key = (sid, name)
                if key not in self.m:
                    self.m[key] = np.zeros_like(grad)
                    self.v[key] = np.zeros_like(grad)
                m, v = self.m[key], self.v[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                getattr(enc, name)[...] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def train(sessions: Sequence[LabeledSeries], config: EncoderConfig) -> EmbedderModel:
    """Jointly train one encoder per session by stochastic gradient descent
    (Adam steps) on the mean batch InfoNCE. Deterministic per ``config.seed``;
    raises TrainingDivergedError (with the step index) if the loss leaves the
    reals."""
    if not sessions:
        raise ValueError("need at least one session")
    pool = build_pool(sessions, config.receptive_field)
    rng = np.random.default_rng(config.seed)
    channel_counts = {
        s.subject_id: s.recording.n_channels for s in sessions
    }
    encoders = {
        sid: init_encoder(rng, channel_counts[sid], config) for sid in pool.session_ids
    }
    history = np.zeros(config.iterations)
    opt = _Adam(config.learning_rate)
    for step in range(config.iterations):
        batch = sample_contrastive_batch(pool, config, rng)
        loss, grads = _batch_step(encoders, pool, batch, config)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, loss)
        opt.step(encoders, grads)
        history[step] = loss
    return EmbedderModel(config=config, encoders=encoders, loss_history=history)


# --- checkpoint io ---------------------------------------------------------

def save_model(path: Path | str, model: EmbedderModel) -> None:
    """Write a model checkpoint (npz container, layout version 1)."""
    arrays: dict[str, np.ndarray] = {"loss_history": model.loss_history}
    for sid, enc in model.encoders.items():
        for name, value in enc.params().items():
            arrays[f"enc/{sid}/{name}"] = value
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": {k: getattr(model.config, k) for k in (
            "receptive_field", "hidden_units", "out_dim", "batch_size",
            "learning_rate", "iterations", "temperature", "seed", "hybrid",
        )},
        "sessions": sorted(model.encoders),
    }
    buf = io.BytesIO()
    np.savez_compressed(buf, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_model(path: Path | str) -> EmbedderModel:
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta.get('version')!r}")
        config = EncoderConfig(**meta["config"])
        encoders = {}
        for sid in meta["sessions"]:
            encoders[sid] = SessionEncoder(
                **{name: data[f"enc/{sid}/{name}"] for name in ("w1", "b1", "w2", "b2", "w3", "b3")}
            )
        return EmbedderModel(config=config, encoders=encoders, loss_history=data["loss_history"])
