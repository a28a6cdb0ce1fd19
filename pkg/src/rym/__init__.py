"""rym: decode valence trajectories from EEG recordings and assemble
affect-conditioned music videos from them."""

__version__ = "0.1.0"

from rym.data import (
    LabeledSeries,
    Recording,
    SessionBundle,
    ValenceEvent,
    ValenceState,
    align_labels,
    extract_windows,
    load_recording,
)
from rym.timeline import AffectSegment, AffectTimeline, to_timeline

__all__ = [
    "AffectSegment",
    "AffectTimeline",
    "LabeledSeries",
    "Recording",
    "SessionBundle",
    "ValenceEvent",
    "ValenceState",
    "align_labels",
    "extract_windows",
    "load_recording",
    "to_timeline",
    "__version__",
]
