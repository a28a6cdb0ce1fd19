"""Affect-conditioned prompt synthesis from essay text and word banks."""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from rym.data import ValenceState

WORDBANK_VERSION = "v1"

# versioned so llm-provenance runs stay reproducible against a fixed endpoint
REWRITE_INSTRUCTION_V1 = (
    "Rewrite the scene description so it keeps every concrete element but "
    "carries the mood of the given affect words. Return only the rewritten "
    "description, one sentence or two, no commentary."
)


class PromptRewriteError(RuntimeError):
    """Rewriter failure; ``retryable`` tells callers whether a retry is safe."""

    def __init__(self, message: str, retryable: bool):
        super().__init__(message)
        self.retryable = retryable


@dataclass(frozen=True)
class AffectWordBank:
    """Descriptive terms per valence state; neutral is always empty."""

    positive: tuple[str, ...]
    negative: tuple[str, ...]

    def __post_init__(self) -> None:
        for name, terms in (("positive", self.positive), ("negative", self.negative)):
            if not terms:
                raise ValueError(f"{name} word list is empty")
            if any(t != t.lower() or not t.strip() for t in terms):
                raise ValueError(f"{name} terms must be lowercase and non-blank")
            if len(set(terms)) != len(terms):
                raise ValueError(f"{name} terms contain duplicates")
        if set(self.positive) & set(self.negative):
            raise ValueError("positive and negative word lists overlap")

    def terms_for(self, state: ValenceState) -> tuple[str, ...]:
        if state == ValenceState.POSITIVE:
            return self.positive
        if state == ValenceState.NEGATIVE:
            return self.negative
        return ()


def _parse_terms(text: str) -> tuple[str, ...]:
    terms = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            terms.append(line.lower())
    # dedupe preserving order
    return tuple(dict.fromkeys(terms))


def load_default_bank() -> AffectWordBank:
    pkg = importlib.resources.files("rym") / "wordbanks"
    return AffectWordBank(
        positive=_parse_terms((pkg / f"positive.{WORDBANK_VERSION}.txt").read_text(encoding="utf-8")),
        negative=_parse_terms((pkg / f"negative.{WORDBANK_VERSION}.txt").read_text(encoding="utf-8")),
    )


def load_bank(positive_path: Path | str, negative_path: Path | str) -> AffectWordBank:
    return AffectWordBank(
        positive=_parse_terms(Path(positive_path).read_text(encoding="utf-8")),
        negative=_parse_terms(Path(negative_path).read_text(encoding="utf-8")),
    )


def select_affect_words(
    bank: AffectWordBank, state: ValenceState, n: int, seed: int
) -> list[str]:
    """Sample n distinct terms for the state, deterministically per seed.
    Neutral always yields an empty list."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if state == ValenceState.NEUTRAL:
        return []
    terms = bank.terms_for(state)
    if n > len(terms):
        raise ValueError(f"requested {n} words but the {state.name.lower()} bank has {len(terms)}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(terms), size=n, replace=False)
    return [terms[i] for i in picked]


class RewriterClient(Protocol):
    """Language-model rewriting endpoint contract."""

    def rewrite(
        self, base_text: str, words: Sequence[str], state: ValenceState, instruction: str
    ) -> str: ...


@dataclass(frozen=True)
class PromptSpec:
    base_text: str
    state: ValenceState
    chosen_words: tuple[str, ...]
    final_prompt: str
    provenance: str  # "template" | "llm"

    def __post_init__(self) -> None:
        if self.provenance not in ("template", "llm"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.state == ValenceState.NEUTRAL:
            if self.chosen_words or self.final_prompt != self.base_text:
                raise ValueError("neutral prompts must pass the base text through unaltered")

    def to_json(self) -> dict:
        return {
            "base_text": self.base_text,
            "state": int(self.state),
            "chosen_words": list(self.chosen_words),
            "final_prompt": self.final_prompt,
            "provenance": self.provenance,
        }

    @staticmethod
    def from_json(doc: dict) -> "PromptSpec":
        return PromptSpec(
            base_text=doc["base_text"],
            state=ValenceState(int(doc["state"])),
            chosen_words=tuple(doc["chosen_words"]),
            final_prompt=doc["final_prompt"],
            provenance=doc["provenance"],
        )


def synthesize_prompt(
    base_text: str,
    state: ValenceState,
    words: Sequence[str],
    rewriter: RewriterClient | None = None,
) -> PromptSpec:
    """Combine the essay text with affect words into a generation prompt.

    Neutral passes the base text through untouched. Without a rewriter the
    deterministic template "{base}, {w1}, {w2} mood" is used; with one, the
    rewriter's output becomes the prompt (provenance "llm").
    """
    if not base_text:
        raise ValueError("base_text must be non-empty")
    words = tuple(words)
    if state == ValenceState.NEUTRAL:
        return PromptSpec(base_text, state, (), base_text, "template")
    if rewriter is None:
        final = f"{base_text}, {', '.join(words)} mood" if words else base_text
        return PromptSpec(base_text, state, words, final, "template")
    text = rewriter.rewrite(base_text, words, state, REWRITE_INSTRUCTION_V1)
    if not text or not text.strip():
        raise PromptRewriteError("rewriter returned empty text", retryable=False)
    return PromptSpec(base_text, state, words, text, "llm")
