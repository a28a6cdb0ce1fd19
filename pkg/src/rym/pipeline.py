"""Staged pipeline execution with a persistent run manifest.

A run lives under ``<output_dir>/<run_id>/``; every stage writes its outputs
into its own subdirectory via a write-temp-then-rename discipline, so a
crashed stage never leaves a partially-written stage directory visible. The
manifest records the config snapshot, input digests, and a content digest for
every artifact.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

import rym
from rym import assemble, clients, decoder, embedder, evalsuite, prompts, timeline as tl
from rym.config import LoadedConfig, PipelineConfig
from rym.data import LabeledSeries, Recording, align_labels, extract_windows, load_recording, read_events

log = logging.getLogger("rym")

MANIFEST_VERSION = 1

STAGE_ORDER = (
    "ingest", "train", "decode", "timeline", "prompts",
    "generate", "assemble", "evaluate", "report",
)

STAGE_DEPS: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "train": ("ingest",),
    "decode": ("train", "ingest"),
    "timeline": ("decode", "ingest"),
    "prompts": ("timeline", "ingest"),
    "generate": ("prompts", "timeline", "ingest"),
    "assemble": ("generate", "timeline"),
    "evaluate": ("assemble", "generate", "timeline", "prompts", "decode", "ingest"),
    "report": tuple(s for s in STAGE_ORDER if s != "report"),
}


class MissingDependencyError(RuntimeError):
    """A stage's upstream artifact is absent."""


class StageError(RuntimeError):
    """A stage failed internally; carries the stage tag."""

    def __init__(self, stage: str, err: Exception):
        super().__init__(f"stage '{stage}' failed: {err}")
        self.stage = stage


class RunLockedError(RuntimeError):
    """Another process holds this run directory's lock."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class RunLock:
    """Exclusive-create lock file guarding one run directory."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / ".lock"

    def __enter__(self) -> "RunLock":
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLockedError(
                f"run directory is locked by another process ({self.path}); "
                "remove the lock file if that process is gone"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc) -> None:
        self.path.unlink(missing_ok=True)


@dataclass
class RunContext:
    config: PipelineConfig
    config_text: str
    run_dir: Path
    mock: bool

    def stage_dir(self, stage: str) -> Path:
        return self.run_dir / stage

    def artifact(self, stage: str, name: str) -> Path:
        path = self.stage_dir(stage) / name
        if not path.exists():
            raise MissingDependencyError(
                f"missing artifact '{stage}/{name}' (run the '{stage}' stage first)"
            )
        return path


def _load_manifest(run_dir: Path) -> dict:
    path = run_dir / "manifest.json"
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {"version": MANIFEST_VERSION, "stages": {}}


def _store_manifest(run_dir: Path, manifest: dict) -> None:
    tmp = run_dir / ".manifest.json.tmp"
    _write_json(tmp, manifest)
    os.replace(tmp, run_dir / "manifest.json")


def run_stage(stage: str, loaded: LoadedConfig, run_id: str, mock: bool | None = None) -> dict:
    """Execute one stage into ``<output_dir>/<run_id>/<stage>/`` and update
    the run manifest atomically. Returns the manifest."""
    if stage not in STAGE_ORDER:
        raise ValueError(f"unknown stage {stage!r}; stages are {', '.join(STAGE_ORDER)}")
    config = loaded.config
    run_dir = Path(config.output_dir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)

    with RunLock(run_dir):
        manifest = _load_manifest(run_dir)
        manifest.setdefault("run_id", run_id)
        manifest.setdefault("tool_version", rym.__version__)
        snapshot = manifest.setdefault("config_text", loaded.raw_text)
        if snapshot != loaded.raw_text:
            raise StageError(stage, ValueError(
                "config file changed since this run was created; start a new run"
            ))
        for dep in STAGE_DEPS[stage]:
            if dep not in manifest["stages"]:
                raise MissingDependencyError(
                    f"stage '{stage}' requires '{dep}' to have completed; run it first "
                    f"(missing {dep}/ outputs under {run_dir})"
                )
            for rel in manifest["stages"][dep]["outputs"]:
                if not (run_dir / dep / rel).exists():
                    raise MissingDependencyError(f"missing artifact '{dep}/{rel}' under {run_dir}")

        ctx = RunContext(
            config=config,
            config_text=loaded.raw_text,
            run_dir=run_dir,
            mock=config.clients.mock if mock is None else mock,
        )

        # clear leftovers from a previously crashed attempt
        for stale in run_dir.glob(".*.tmp"):
            shutil.rmtree(stale, ignore_errors=True)

        tmp_dir = run_dir / f".{stage}.tmp"
        tmp_dir.mkdir()
        started = time.perf_counter()
        try:
            extra = _STAGE_FNS[stage](ctx, tmp_dir)
        except (MissingDependencyError, StageError):
            shutil.rmtree(tmp_dir, ignore_errors=True)
            raise
        except Exception as err:
            shutil.rmtree(tmp_dir, ignore_errors=True)
            raise StageError(stage, err) from err
        elapsed = time.perf_counter() - started

        final_dir = run_dir / stage
        if final_dir.exists():
            shutil.rmtree(final_dir)
        os.replace(tmp_dir, final_dir)

        outputs = {
            str(p.relative_to(final_dir)): _sha256(p)
            for p in sorted(final_dir.rglob("*"))
            if p.is_file()
        }
        entry = {
            "completed_at": datetime.now(timezone.utc).isoformat(),
            "elapsed_s": round(elapsed, 3),
            "outputs": outputs,
        }
        if extra:
            entry.update(extra)
        manifest["stages"][stage] = entry
        _store_manifest(run_dir, manifest)
        log.info("stage %s completed in %.1fs (%d artifacts)", stage, elapsed, len(outputs))
    return manifest


def run_all(loaded: LoadedConfig, run_id: str, mock: bool | None = None) -> dict:
    manifest: dict = {}
    for stage in STAGE_ORDER:
        manifest = run_stage(stage, loaded, run_id, mock=mock)
    return manifest


# --- stage implementations --------------------------------------------------

def _session_dirs(config: PipelineConfig) -> list[Path]:
    root = Path(config.sessions_dir)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "recording.csv").exists())
    if not dirs:
        raise ValueError(f"no session directories under {root}")
    return dirs


def _stage_ingest(ctx: RunContext, out: Path) -> dict:
    index = []
    input_digests = {}
    for sdir in _session_dirs(ctx.config):
        rec = load_recording(sdir / "recording.csv")
        header, events = read_events(sdir / "events.jsonl")
        labeled = align_labels(rec, events)
        session_meta = json.loads((sdir / "session.json").read_text(encoding="utf-8"))
        essay = (sdir / "essay.txt").read_text(encoding="utf-8")
        sid = rec.subject_id
        np.savez_compressed(
            out / f"{sid}.npz",
            samples=rec.samples,
            labels=labeled.labels,
            sample_rate_hz=rec.sample_rate_hz,
            channels=np.array(rec.channels),
        )
        index.append(
            {
                "subject_id": sid,
                "n_timepoints": rec.n_timepoints,
                "sample_rate_hz": rec.sample_rate_hz,
                "channels": list(rec.channels),
                "confidence": int(session_meta["confidence"]),
                "essay": essay,
                "sketch_path": str(sdir / "sketch.png"),
                "melody_path": str(sdir / "melody.wav"),
                "event_log_kind": header.get("kind"),
            }
        )
        for name in ("recording.csv", "recording.meta.json", "events.jsonl",
                     "essay.txt", "sketch.png", "melody.wav", "session.json"):
            input_digests[f"{sid}/{name}"] = _sha256(sdir / name)
    _write_json(out / "sessions.json", {"version": 1, "subjects": index})
    return {"input_digests": input_digests}


def _load_ingested(ctx: RunContext) -> tuple[list[LabeledSeries], list[dict]]:
    doc = json.loads(ctx.artifact("ingest", "sessions.json").read_text(encoding="utf-8"))
    sessions = []
    for meta in doc["subjects"]:
        with np.load(ctx.artifact("ingest", f"{meta['subject_id']}.npz")) as data:
            rec = Recording(
                subject_id=meta["subject_id"],
                sample_rate_hz=float(data["sample_rate_hz"]),
                channels=tuple(str(c) for c in data["channels"]),
                samples=data["samples"],
            )
            sessions.append(LabeledSeries(recording=rec, labels=data["labels"]))
    return sessions, doc["subjects"]


def _stage_train(ctx: RunContext, out: Path) -> dict:
    sessions, _ = _load_ingested(ctx)
    model = embedder.train(sessions, ctx.config.encoder)
    embedder.save_model(out / "model.npz", model)
    lines = ["step,loss"] + [f"{i},{v!r}" for i, v in enumerate(model.loss_history)]
    (out / "loss_history.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {}


def _stage_decode(ctx: RunContext, out: Path) -> dict:
    sessions, _ = _load_ingested(ctx)
    model = embedder.load_model(ctx.artifact("train", "model.npz"))
    report, traces = decoder.leave_one_out(model, sessions, ctx.config.knn)
    decoder.save_report(out / "decode_report.json", report)
    traces_dir = out / "traces"
    traces_dir.mkdir()
    for sid, trace in traces.items():
        np.save(traces_dir / f"{sid}.npy", trace.states)
    return {}


def _render_subject(ctx: RunContext, metas: list[dict]) -> dict:
    chosen = ctx.config.render_subject
    if chosen is None:
        return metas[0]
    for meta in metas:
        if meta["subject_id"] == chosen:
            return meta
    raise ValueError(f"render_subject {chosen!r} not among ingested sessions")


def _stage_timeline(ctx: RunContext, out: Path) -> dict:
    _, metas = _load_ingested(ctx)
    meta = _render_subject(ctx, metas)
    sid = meta["subject_id"]
    states = np.load(ctx.artifact("decode", f"traces/{sid}.npy"))
    labels = decoder.trace_to_timepoint_labels(
        states, meta["n_timepoints"], ctx.config.encoder.receptive_field
    )
    line = tl.smooth(
        tl.to_timeline(labels, meta["sample_rate_hz"]), ctx.config.min_segment_s
    )
    tl.save_timeline(out / "timeline.json", line)
    if len(line) >= 2:
        tl.save_timeline(out / "timeline_permuted.json", tl.permute(line, seed=ctx.config.seed))
    _write_json(out / "render_subject.json", {"subject_id": sid})
    return {}


def _word_seed(global_seed: int, segment_index: int) -> int:
    return global_seed * 100_003 + segment_index


def _stage_prompts(ctx: RunContext, out: Path) -> dict:
    _, metas = _load_ingested(ctx)
    meta = _render_subject(ctx, metas)
    line = tl.load_timeline(ctx.artifact("timeline", "timeline.json"))
    cfg = ctx.config.prompt
    if cfg.positive_bank or cfg.negative_bank:
        if not (cfg.positive_bank and cfg.negative_bank):
            raise ValueError("both positive_bank and negative_bank must be set together")
        bank = prompts.load_bank(cfg.positive_bank, cfg.negative_bank)
    else:
        bank = prompts.load_default_bank()
    rewriter = None
    if cfg.use_rewriter and not ctx.mock:
        url = os.environ.get("RYM_REWRITER_URL", ctx.config.clients.rewriter_url)
        if not url:
            raise ValueError("prompt.use_rewriter is set but no rewriter_url is configured")
        rewriter = clients.HttpRewriterClient(_http_settings(ctx, url))
    specs = []
    for i, seg in enumerate(line.segments):
        words = prompts.select_affect_words(
            bank, seg.state, cfg.words_per_prompt, seed=_word_seed(ctx.config.seed, i)
        )
        spec = prompts.synthesize_prompt(meta["essay"], seg.state, words, rewriter=rewriter)
        specs.append(spec.to_json())
    _write_json(out / "prompts.json", {"version": 1, "segments": specs})
    return {}


def _http_settings(ctx: RunContext, url: str) -> clients.HttpSettings:
    return clients.HttpSettings(
        base_url=url,
        timeout_s=ctx.config.clients.timeout_s,
        max_retries=ctx.config.clients.max_retries,
    )


def _make_clients(ctx: RunContext) -> tuple:
    cc = ctx.config.clients
    if ctx.mock:
        return (
            clients.MockMusicClient(sample_rate_hz=cc.mock_music_rate_hz),
            clients.MockImageClient(),
            clients.MockEmbeddingClient(),
        )
    env = os.environ.get
    music_url = env("RYM_MUSIC_URL", cc.music_url)
    image_url = env("RYM_IMAGE_URL", cc.image_url)
    embed_url = env("RYM_EMBED_URL", cc.embed_url)
    missing = [n for n, u in (("music", music_url), ("image", image_url), ("embed", embed_url)) if not u]
    if missing:
        raise ValueError(f"live mode needs endpoint urls for: {', '.join(missing)}")
    return (
        clients.HttpMusicClient(_http_settings(ctx, music_url)),
        clients.HttpImageClient(_http_settings(ctx, image_url)),
        clients.HttpEmbeddingClient(_http_settings(ctx, embed_url)),
    )


def _segment_request_durations(line: tl.AffectTimeline, crossfade_s: float) -> list[float]:
    """Every clip except the last is padded by one crossfade overlap, so that
    after overlap consumption the assembled track spans the exact timeline."""
    durs = [seg.duration_s for seg in line.segments]
    return [d + (crossfade_s if i < len(durs) - 1 else 0.0) for i, d in enumerate(durs)]


def _stage_generate(ctx: RunContext, out: Path) -> dict:
    _, metas = _load_ingested(ctx)
    meta = _render_subject(ctx, metas)
    line = tl.load_timeline(ctx.artifact("timeline", "timeline.json"))
    prompt_doc = json.loads(ctx.artifact("prompts", "prompts.json").read_text(encoding="utf-8"))
    specs = [prompts.PromptSpec.from_json(d) for d in prompt_doc["segments"]]
    music_client, image_client, _ = _make_clients(ctx)
    melody = assemble.read_wav(meta["melody_path"])
    sketch = np.asarray(Image.open(meta["sketch_path"]).convert("RGB"))
    durations = _segment_request_durations(line, ctx.config.crossfade_s)

    def one_segment(i: int):
        spec = specs[i]
        music_req = clients.MusicRequest(
            prompt=spec.final_prompt, melody=melody, duration_s=durations[i]
        )
        image_req = clients.ImageRequest(
            prompt=spec.final_prompt,
            sketch=sketch,
            strength=0.0 if spec.state == 0 else ctx.config.generate.image_strength,
            frame_count=ctx.config.generate.frames_per_segment,
            seed=ctx.config.seed + i,
        )
        return (
            i,
            music_client.generate(music_req),
            image_client.generate(image_req),
            music_req.idempotency_key(),
            image_req.idempotency_key(),
        )

    request_log = []
    with ThreadPoolExecutor(max_workers=ctx.config.clients.parallel_requests) as pool:
        results = sorted(pool.map(one_segment, range(len(specs))), key=lambda r: r[0])
    for i, music_asset, frames, music_key, image_key in results:
        seg_dir = out / "segments" / f"{i:03d}"
        seg_dir.mkdir(parents=True)
        assemble.write_wav(seg_dir / "music.wav", music_asset.payload)
        frame_names = []
        for j, frame in enumerate(frames):
            name = f"frame_{j:03d}.png"
            Image.fromarray(frame.payload, "RGB").save(seg_dir / name)
            frame_names.append(name)
        request_log.append(
            {
                "segment": i,
                "music_idempotency_key": music_key,
                "image_idempotency_key": image_key,
                "music_provenance": music_asset.provenance,
                "frames": frame_names,
            }
        )
    _write_json(out / "requests.json", {"version": 1, "requests": request_log})
    return {}


def _segment_clip_paths(ctx: RunContext, n: int) -> list[Path]:
    return [ctx.artifact("generate", f"segments/{i:03d}/music.wav") for i in range(n)]


def _stage_assemble(ctx: RunContext, out: Path) -> dict:
    line = tl.load_timeline(ctx.artifact("timeline", "timeline.json"))
    durations = _segment_request_durations(line, ctx.config.crossfade_s)
    clips = []
    for i, path in enumerate(_segment_clip_paths(ctx, len(line))):
        clips.append(assemble.cut(assemble.read_wav(path), durations[i]))
    track = assemble.crossfade_concat(clips, overlap_s=ctx.config.crossfade_s)
    assemble.write_wav(out / "final.wav", track.clip)

    gen_doc = json.loads(ctx.artifact("generate", "requests.json").read_text(encoding="utf-8"))
    frames = [
        [f"segments/{r['segment']:03d}/{name}" for name in r["frames"]]
        for r in gen_doc["requests"]
    ]
    manifest = assemble.build_video_manifest(line, frames, fps=ctx.config.generate.fps)
    assemble.save_manifest(out / "video_manifest.json", manifest)
    _write_json(
        out / "assembly.json",
        {
            "version": 1,
            "boundaries_s": list(track.boundaries_s),
            "clipped_samples": track.clipped_samples,
            "duration_s": track.clip.duration_s,
            "sample_rate_hz": track.clip.sample_rate_hz,
        },
    )
    return {}


def _stage_evaluate(ctx: RunContext, out: Path) -> dict:
    sessions, metas = _load_ingested(ctx)
    line = tl.load_timeline(ctx.artifact("timeline", "timeline.json"))
    prompt_doc = json.loads(ctx.artifact("prompts", "prompts.json").read_text(encoding="utf-8"))
    specs = [prompts.PromptSpec.from_json(d) for d in prompt_doc["segments"]]
    _, _, embed_client = _make_clients(ctx)
    durations = _segment_request_durations(line, ctx.config.crossfade_s)

    tables_dir = out / "tables"
    plot_dir = out / "plotdata"
    tables_dir.mkdir()
    plot_dir.mkdir()

    # per-segment media attributes and prompt-vs-output embedding distances
    rows = []
    distances = []
    for i, seg in enumerate(line.segments):
        clip = assemble.cut(
            assemble.read_wav(ctx.artifact("generate", f"segments/{i:03d}/music.wav")),
            durations[i],
        )
        frame = np.asarray(
            Image.open(ctx.artifact("generate", f"segments/{i:03d}/frame_000.png")).convert("RGB")
        )
        stats = evalsuite.hsv_stats(frame)
        window = min(2048, len(clip))
        rows.append(
            evalsuite.AttributeRow(
                segment_index=i,
                state=int(seg.state),
                hue_deg=stats.hue_deg,
                saturation=stats.saturation,
                value=stats.value,
                spectral_centroid_hz=evalsuite.spectral_centroid(clip, window, max(1, window // 4)),
                rms=evalsuite.rms_intensity(clip),
                high_low_energy_ratio=evalsuite.band_energy_ratio(clip, ctx.config.eval.band_split_hz),
                mode_score=evalsuite.estimate_mode(clip),
            )
        )
        text_vec_i = embed_client.embed(specs[i].final_prompt, "text", "text-image")
        text_vec_a = embed_client.embed(specs[i].final_prompt, "text", "text-audio")
        image_vec = embed_client.embed(frame, "image", "text-image")
        audio_vec = embed_client.embed(clip, "audio", "text-audio")
        distances.append(
            {
                "segment": i,
                "state": int(seg.state),
                "prompt_image_cosine": evalsuite.embedding_distance(text_vec_i, image_vec, "cosine-distance"),
                "prompt_image_euclidean": evalsuite.embedding_distance(text_vec_i, image_vec, "euclidean"),
                "prompt_music_cosine": evalsuite.embedding_distance(text_vec_a, audio_vec, "cosine-distance"),
                "prompt_music_euclidean": evalsuite.embedding_distance(text_vec_a, audio_vec, "euclidean"),
            }
        )

    attr_lines = ["segment,state," + ",".join(evalsuite.ATTRIBUTE_NAMES)]
    for row in rows:
        attr_lines.append(
            f"{row.segment_index},{row.state},"
            + ",".join(repr(getattr(row, a)) for a in evalsuite.ATTRIBUTE_NAMES)
        )
    (tables_dir / "attributes.csv").write_text("\n".join(attr_lines) + "\n", encoding="utf-8")

    dist_lines = ["segment,state,prompt_image_cosine,prompt_image_euclidean,prompt_music_cosine,prompt_music_euclidean"]
    for d in distances:
        dist_lines.append(
            f"{d['segment']},{d['state']},{d['prompt_image_cosine']!r},"
            f"{d['prompt_image_euclidean']!r},{d['prompt_music_cosine']!r},{d['prompt_music_euclidean']!r}"
        )
    (tables_dir / "embedding_distances.csv").write_text("\n".join(dist_lines) + "\n", encoding="utf-8")

    correlations = {}
    if len(rows) >= 3:
        for name in evalsuite.ATTRIBUTE_NAMES:
            try:
                res = evalsuite.affect_attribute_correlation(rows, name)
                correlations[name] = {"r": res.r, "p_value": res.p_value, "n": res.n}
            except evalsuite.ZeroVarianceError:
                correlations[name] = {"flag": "zero-variance"}

    # decoded-vs-keypress cross-correlation, true vs permuted timelines
    rf = ctx.config.encoder.receptive_field
    per_subject = {}
    real_coeffs, perm_coeffs = [], []
    for session, meta in zip(sessions, metas):
        sid = meta["subject_id"]
        states = np.load(ctx.artifact("decode", f"traces/{sid}.npy"))
        decoded = decoder.trace_to_timepoint_labels(states, meta["n_timepoints"], rf)
        rate = meta["sample_rate_hz"]
        entry = {}
        try:
            res = evalsuite.best_crosscorr(
                decoded, session.labels, rate, ctx.config.eval.max_lag_s
            )
            entry["real"] = {"best_coefficient": res.best_coefficient, "best_lag_s": res.best_lag_s}
            real_coeffs.append(res.best_coefficient)
        except ValueError as err:
            entry["real"] = {"flag": str(err)}
        try:
            decoded_line = tl.to_timeline(decoded, rate)
            permuted = tl.expand_timeline(
                tl.permute(decoded_line, seed=ctx.config.seed), rate
            )
            res_p = evalsuite.best_crosscorr(
                permuted, session.labels, rate, ctx.config.eval.max_lag_s
            )
            entry["permuted"] = {
                "best_coefficient": res_p.best_coefficient,
                "best_lag_s": res_p.best_lag_s,
            }
            perm_coeffs.append(res_p.best_coefficient)
        except ValueError as err:
            entry["permuted"] = {"flag": str(err)}
        per_subject[sid] = entry

        curve = evalsuite.crosscorr_curve(decoded, session.labels, rate, ctx.config.eval.max_lag_s)
        curve_lines = ["lag_s,r"] + [
            f"{lag!r},{'' if r is None else repr(r)}" for lag, r in curve
        ]
        (plot_dir / f"crosscorr_{sid}.csv").write_text("\n".join(curve_lines) + "\n", encoding="utf-8")

    ranksum_p = None
    if len(real_coeffs) >= 1 and len(perm_coeffs) >= 1:
        ranksum_p = evalsuite.wilcoxon_ranksum(real_coeffs, perm_coeffs)

    final = assemble.read_wav(ctx.artifact("assemble", "final.wav"))
    window = min(1024, len(final))
    mel = evalsuite.mel_spectrogram(final, n_mels=48, window_size=window, hop=max(1, window // 4))
    np.savetxt(plot_dir / "mel_final.csv", mel, delimiter=",")

    decode_doc = json.loads(ctx.artifact("decode", "decode_report.json").read_text(encoding="utf-8"))
    report = {
        "version": 1,
        "decoding": {
            "per_subject": decode_doc["per_subject"],
            "mean_weighted_f1": decode_doc["mean_weighted_f1"],
        },
        "embedding_distances": distances,
        "attribute_correlations": correlations,
        "crosscorr": {"per_subject": per_subject, "ranksum_p": ranksum_p},
    }
    _write_json(out / "eval_report.json", report)
    return {}


def _stage_report(ctx: RunContext, out: Path) -> dict:
    eval_doc = json.loads(ctx.artifact("evaluate", "eval_report.json").read_text(encoding="utf-8"))
    assembly = json.loads(ctx.artifact("assemble", "assembly.json").read_text(encoding="utf-8"))
    summary = {
        "version": 1,
        "mean_weighted_f1": eval_doc["decoding"]["mean_weighted_f1"],
        "ranksum_p": eval_doc["crosscorr"]["ranksum_p"],
        "track_duration_s": assembly["duration_s"],
        "clipped_samples": assembly["clipped_samples"],
        "segments": len(eval_doc["embedding_distances"]),
    }
    _write_json(out / "summary.json", summary)

    lines = [
        "# Run summary",
        "",
        f"- mean weighted F1 (leave-one-out): {summary['mean_weighted_f1']:.4f}",
        f"- rank-sum p (real vs permuted cross-correlation): {summary['ranksum_p']}",
        f"- soundtrack: {summary['track_duration_s']:.2f}s, {summary['clipped_samples']} clipped samples",
        f"- segments rendered: {summary['segments']}",
        "",
        "## Affect-attribute correlations",
        "",
        "| attribute | r | p |",
        "|---|---|---|",
    ]
    for name, res in sorted(eval_doc["attribute_correlations"].items()):
        if "r" in res:
            lines.append(f"| {name} | {res['r']:.3f} | {res['p_value']:.4f} |")
        else:
            lines.append(f"| {name} | ({res['flag']}) | |")
    (out / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {}


_STAGE_FNS = {
    "ingest": _stage_ingest,
    "train": _stage_train,
    "decode": _stage_decode,
    "timeline": _stage_timeline,
    "prompts": _stage_prompts,
    "generate": _stage_generate,
    "assemble": _stage_assemble,
    "evaluate": _stage_evaluate,
    "report": _stage_report,
}
