"""Pipeline configuration: one YAML file, strictly parsed (unknown keys are
rejected, ranges checked, defaults filled)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from rym.decoder import KnnConfig
from rym.embedder import EncoderConfig


class ConfigError(ValueError):
    """Configuration file problem: parse error, unknown key, range violation."""


@dataclass(frozen=True)
class PromptSettings:
    words_per_prompt: int = 2
    positive_bank: str | None = None  # file overrides for the packaged lists
    negative_bank: str | None = None
    use_rewriter: bool = False


@dataclass(frozen=True)
class ClientSettings:
    mock: bool = True
    music_url: str | None = None
    image_url: str | None = None
    embed_url: str | None = None
    rewriter_url: str | None = None
    timeout_s: float = 120.0
    max_retries: int = 3
    parallel_requests: int = 2
    mock_music_rate_hz: int = 32000


@dataclass(frozen=True)
class GenerateSettings:
    frames_per_segment: int = 4
    fps: float = 8.0
    image_strength: float = 0.65


@dataclass(frozen=True)
class EvalSettings:
    band_split_hz: float = 1000.0
    max_lag_s: float = 5.0


@dataclass(frozen=True)
class PipelineConfig:
    sessions_dir: str
    output_dir: str = "runs"
    seed: int = 0
    render_subject: str | None = None
    min_segment_s: float = 1.0
    crossfade_s: float = 0.040
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    prompt: PromptSettings = field(default_factory=PromptSettings)
    clients: ClientSettings = field(default_factory=ClientSettings)
    generate: GenerateSettings = field(default_factory=GenerateSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self) -> None:
        if self.crossfade_s < 0:
            raise ConfigError(f"crossfade_s must be >= 0, got {self.crossfade_s}")
        if self.min_segment_s < 0:
            raise ConfigError(f"min_segment_s must be >= 0, got {self.min_segment_s}")
        if self.prompt.words_per_prompt < 0:
            raise ConfigError(f"prompt.words_per_prompt must be >= 0, got {self.prompt.words_per_prompt}")
        if self.generate.frames_per_segment < 1:
            raise ConfigError(f"generate.frames_per_segment must be >= 1, got {self.generate.frames_per_segment}")
        if self.generate.fps <= 0:
            raise ConfigError(f"generate.fps must be positive, got {self.generate.fps}")
        if not 0.0 <= self.generate.image_strength <= 1.0:
            raise ConfigError(f"generate.image_strength must be in [0, 1], got {self.generate.image_strength}")
        if self.clients.parallel_requests < 1:
            raise ConfigError(f"clients.parallel_requests must be >= 1, got {self.clients.parallel_requests}")
        if self.clients.max_retries < 1:
            raise ConfigError(f"clients.max_retries must be >= 1, got {self.clients.max_retries}")
        if self.eval.max_lag_s < 0:
            raise ConfigError(f"eval.max_lag_s must be >= 0, got {self.eval.max_lag_s}")
        if self.eval.band_split_hz <= 0:
            raise ConfigError(f"eval.band_split_hz must be positive, got {self.eval.band_split_hz}")


_NESTED = {
    "encoder": EncoderConfig,
    "knn": KnnConfig,
    "prompt": PromptSettings,
    "clients": ClientSettings,
    "generate": GenerateSettings,
    "eval": EvalSettings,
}


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            dotted = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"unknown key {dotted!r}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(key)
        if sub is not None and prefix == "":
            kwargs[key] = _build(sub, value, key)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        where = prefix or "config"
        raise ConfigError(f"{where}: {err}") from err


@dataclass(frozen=True)
class LoadedConfig:
    config: PipelineConfig
    raw_text: str
    path: Path


def validate_config(path: Path | str) -> PipelineConfig:
    """Parse, default, and range-check a config file."""
    return load_config(path).config


def load_config(path: Path | str) -> LoadedConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw_text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(raw_text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: parse error{where}: {err}") from err
    if data is None:
        data = {}
    if "sessions_dir" not in data:
        raise ConfigError("missing required key 'sessions_dir'")
    config = _build(PipelineConfig, data, "")

    # the encoder draws its seed from the global one unless pinned explicitly
    encoder_block = data.get("encoder") or {}
    if "seed" not in encoder_block:
        config = replace(config, encoder=replace(config.encoder, seed=config.seed))

    sessions_dir = Path(config.sessions_dir)
    if not sessions_dir.is_absolute():
        sessions_dir = path.parent / sessions_dir
        config = replace(config, sessions_dir=str(sessions_dir))
    if not sessions_dir.is_dir():
        raise ConfigError(f"sessions_dir does not exist: {sessions_dir}")
    out_dir = Path(config.output_dir)
    if not out_dir.is_absolute():
        config = replace(config, output_dir=str(path.parent / out_dir))
    return LoadedConfig(config=config, raw_text=raw_text, path=path)
