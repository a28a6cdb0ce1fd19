"""KNN valence decoding on embeddings and leave-one-out evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rym.data import LabeledSeries, ValenceState, extract_windows
from rym.embedder import EmbedderModel, encode_windows

DECODE_REPORT_VERSION = 1

# vote ties resolve to the earliest state in this order
_STATE_ORDER = (ValenceState.NEGATIVE, ValenceState.NEUTRAL, ValenceState.POSITIVE)


@dataclass(frozen=True)
class KnnConfig:
    """``k=None`` selects round(sqrt(n_train)) forced odd (even values drop
    by one, floor 1)."""

    k: int | None = None
    distance: str = "euclidean"

    def __post_init__(self) -> None:
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.distance not in ("euclidean", "cosine"):
            raise ValueError(f"unknown distance {self.distance!r}")

    def resolve_k(self, n_train: int) -> int:
        if self.k is not None:
            if self.k > n_train:
                raise ValueError(f"k={self.k} exceeds training-set size {n_train}")
            return self.k
        k = int(round(math.sqrt(n_train)))
        if k % 2 == 0:
            k -= 1
        return max(1, min(k, n_train))


@dataclass(frozen=True)
class DecodedTrace:
    subject_id: str
    states: np.ndarray  # int codes, one per query window


@dataclass(frozen=True)
class EvalReport:
    """Per-subject weighted F1 plus fold bookkeeping."""

    per_subject: dict[str, float]
    mean_weighted_f1: float
    folds: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "version": DECODE_REPORT_VERSION,
            "per_subject": dict(sorted(self.per_subject.items())),
            "mean_weighted_f1": self.mean_weighted_f1,
            "folds": self.folds,
        }

    @staticmethod
    def from_json(doc: dict) -> "EvalReport":
        if doc.get("version") != DECODE_REPORT_VERSION:
            raise ValueError(f"unsupported report version: {doc.get('version')!r}")
        return EvalReport(
            per_subject=doc["per_subject"],
            mean_weighted_f1=doc["mean_weighted_f1"],
            folds=doc.get("folds", {}),
        )


def _distances(train_x: np.ndarray, queries: np.ndarray, metric: str) -> np.ndarray:
    """[n_queries, n_train] distance matrix."""
    if metric == "euclidean":
        d2 = (
            np.sum(queries**2, axis=1)[:, None]
            - 2.0 * queries @ train_x.T
            + np.sum(train_x**2, axis=1)[None, :]
        )
        return np.sqrt(np.maximum(d2, 0.0))
    # cosine distance; callers hold unit-norm embeddings but normalize anyway
    qn = queries / np.linalg.norm(queries, axis=1, keepdims=True)
    tn = train_x / np.linalg.norm(train_x, axis=1, keepdims=True)
    return 1.0 - qn @ tn.T


def _majority(labels: np.ndarray) -> ValenceState:
    counts = {state: int(np.sum(labels == int(state))) for state in _STATE_ORDER}
    best = max(counts.values())
    for state in _STATE_ORDER:
        if counts[state] == best:
            return state
    raise AssertionError("unreachable")


def _predict_batch(
    train_x: np.ndarray, train_y: np.ndarray, queries: np.ndarray, k: int, metric: str
) -> np.ndarray:
    dists = _distances(train_x, queries, metric)
    # stable sort: distance ties resolve to the lower training index
    order = np.argsort(dists, axis=1, kind="stable")[:, :k]
    out = np.empty(queries.shape[0], dtype=np.int8)
    for i in range(queries.shape[0]):
        out[i] = int(_majority(train_y[order[i]]))
    return out


def knn_predict(
    train: Sequence[tuple[np.ndarray, ValenceState]],
    query: np.ndarray,
    config: KnnConfig = KnnConfig(),
) -> ValenceState:
    """Majority label among the k nearest training embeddings.

    Distance ties break toward the lower training index; vote ties break by
    state order negative < neutral < positive.
    """
    if not train:
        raise ValueError("empty training set")
    train_x = np.asarray([np.asarray(e, dtype=float) for e, _ in train])
    train_y = np.asarray([int(s) for _, s in train], dtype=np.int8)
    k = config.resolve_k(len(train))
    pred = _predict_batch(train_x, train_y, np.asarray(query, dtype=float)[None, :], k, config.distance)
    return ValenceState(int(pred[0]))


def weighted_f1(predictions: Sequence[int], truth: Sequence[int]) -> float:
    """Per-class F1 averaged with weights proportional to true-class support.

    Classes absent from the truth are excluded; a class with no true and no
    predicted positives contributes F1 = 0.
    """
    preds = np.asarray([int(p) for p in predictions])
    true = np.asarray([int(t) for t in truth])
    if preds.shape != true.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {true.shape}")
    if preds.size == 0:
        raise ValueError("empty input")
    score = 0.0
    for cls in np.unique(true):
        support = int(np.sum(true == cls))
        tp = int(np.sum((preds == cls) & (true == cls)))
        fp = int(np.sum((preds == cls) & (true != cls)))
        fn = support - tp
        denom = 2 * tp + fp + fn
        f1 = (2 * tp / denom) if denom > 0 else 0.0
        score += f1 * support / true.size
    return float(score)


def decode_session(
    model: EmbedderModel,
    train_sessions: Sequence[LabeledSeries],
    query_session: LabeledSeries,
    config: KnnConfig = KnnConfig(),
) -> DecodedTrace:
    """Predict the query session's per-window states from the other sessions'
    embeddings."""
    rf = model.config.receptive_field
    train_parts = []
    label_parts = []
    for s in sorted(train_sessions, key=lambda s: s.subject_id):
        ws = extract_windows(s, rf)
        train_parts.append(encode_windows(model, s.subject_id, ws.windows))
        label_parts.append(ws.labels)
    train_x = np.concatenate(train_parts)
    train_y = np.concatenate(label_parts)
    qw = extract_windows(query_session, rf)
    queries = encode_windows(model, query_session.subject_id, qw.windows)
    k = config.resolve_k(train_x.shape[0])
    states = _predict_batch(train_x, train_y, queries, k, config.distance)
    return DecodedTrace(subject_id=query_session.subject_id, states=states)


def leave_one_out(
    model: EmbedderModel,
    sessions: Sequence[LabeledSeries],
    config: KnnConfig = KnnConfig(),
) -> tuple[EvalReport, dict[str, DecodedTrace]]:
    """Hold out each session in turn, fit KNN on the rest, score weighted F1.

    Returns the report and every fold's decoded trace.
    """
    if len(sessions) < 2:
        raise ValueError(f"need >= 2 sessions for leave-one-out, got {len(sessions)}")
    ordered = sorted(sessions, key=lambda s: s.subject_id)
    scores: dict[str, float] = {}
    folds: dict[str, dict] = {}
    traces: dict[str, DecodedTrace] = {}
    for held_out in ordered:
        rest = [s for s in ordered if s.subject_id != held_out.subject_id]
        try:
            trace = decode_session(model, rest, held_out, config)
            truth = extract_windows(held_out, model.config.receptive_field).labels
            scores[held_out.subject_id] = weighted_f1(trace.states, truth)
        except Exception as err:
            raise RuntimeError(f"fold {held_out.subject_id!r} failed: {err}") from err
        traces[held_out.subject_id] = trace
        folds[held_out.subject_id] = {
            "train_sessions": [s.subject_id for s in rest],
            "n_train": int(sum(len(extract_windows(s, model.config.receptive_field)) for s in rest)),
            "n_test": int(trace.states.size),
        }
    report = EvalReport(
        per_subject=scores,
        mean_weighted_f1=float(np.mean(list(scores.values()))),
        folds=folds,
    )
    return report, traces


def trace_to_timepoint_labels(
    states: np.ndarray, n_timepoints: int, receptive_field: int
) -> np.ndarray:
    """Spread window-center predictions back over the full recording: window i
    predicts timepoint i + (rf - 1) // 2; the uncovered edges take the nearest
    prediction."""
    states = np.asarray(states, dtype=np.int8)
    lead = (receptive_field - 1) // 2
    if states.size != n_timepoints - receptive_field + 1:
        raise ValueError(
            f"{states.size} predictions cannot cover {n_timepoints} timepoints "
            f"at receptive field {receptive_field}"
        )
    out = np.empty(n_timepoints, dtype=np.int8)
    out[:lead] = states[0]
    out[lead : lead + states.size] = states
    out[lead + states.size :] = states[-1]
    return out


def save_report(path: Path | str, report: EvalReport) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_report(path: Path | str) -> EvalReport:
    return EvalReport.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def format_report(report: EvalReport) -> str:
    """Plain-text per-subject table for the CLI."""
    lines = ["subject      weighted_f1", "-" * 25]
    for sid, score in sorted(report.per_subject.items()):
        lines.append(f"{sid:<12} {score:.4f}")
    lines.append("-" * 25)
    lines.append(f"{'mean':<12} {report.mean_weighted_f1:.4f}")
    return "\n".join(lines)
