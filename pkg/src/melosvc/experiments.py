"""End-to-end pipelines: data loading, the ablation matrix, and the
single-command source-to-converted-audio run.

Both entry points are deterministic given a seed: reruns produce
byte-identical tables and audio, which is what makes regressions
diffable.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .audio import AudioClip, content_hash, ingest, write_wav
from .config import ExperimentConfig, archive_config
from .errors import DataError, StageError
from .labeling import entry_key, label_clip, label_corpus, load_entry_clip
from .manifest import ManifestEntry, load_manifest
from .metrics import MetricReport, build_noisy_testset, evaluate, f0corr, f0rmse
from .pitch import FrameTrack

log = logging.getLogger(__name__)


@dataclass
class DataBundle:
    """Everything a training or evaluation run needs, loaded once."""

    train_entries: list[ManifestEntry]
    test_entries: list[ManifestEntry]
    labels: dict[str, FrameTrack]
    bgm_train: list[AudioClip]
    bgm_test: list[AudioClip]

    def test_clips(self) -> list[tuple[str, AudioClip]]:
        return [(entry_key(e), load_entry_clip(e)) for e in self.test_entries]


def load_data(cfg: ExperimentConfig) -> DataBundle:
    """Load the manifest, label the corpus, and split backgrounds.

    Background stems follow their song's split, so evaluation mixtures
    only ever use test-split accompaniment.
    """
    entries = load_manifest(cfg.data.manifest)
    if not entries:
        raise DataError(f"manifest '{cfg.data.manifest}' has no entries")
    result = label_corpus(entries, cfg.data.labels_dir, tuple(cfg.data.extractors))
    labelled = set(result.tracks)
    train_entries = [
        e for e in entries if e.split in ("train", "valid") and entry_key(e) in labelled
    ]
    test_entries = [
        e for e in entries if e.split == "test" and e.speed == 1.0 and entry_key(e) in labelled
    ]
    bgm_train: list[AudioClip] = []
    bgm_test: list[AudioClip] = []
    seen: set[tuple[str, str]] = set()
    for e in entries:
        if not e.bgm_path:
            continue
        bucket = "test" if e.split == "test" else "train"
        if (e.bgm_path, bucket) in seen:
            continue
        seen.add((e.bgm_path, bucket))
        clip = ingest(e.bgm_path)
        (bgm_test if bucket == "test" else bgm_train).append(clip)
    if cfg.data.bgm_manifest:
        for e in load_manifest(cfg.data.bgm_manifest):
            path = e.bgm_path or e.vocal_path
            bucket = "test" if e.split == "test" else "train"
            if (path, bucket) in seen:
                continue
            seen.add((path, bucket))
            (bgm_test if bucket == "test" else bgm_train).append(ingest(path))
    return DataBundle(train_entries, test_entries, result.tracks, bgm_train, bgm_test)


# -- ablation ------------------------------------------------------------------


def _extractor_track_fn(model):
    from .melody import predict, prediction_to_track

    def track_fn(clip: AudioClip) -> FrameTrack:
        return prediction_to_track(predict(model, clip), model)

    return track_fn


def _format_cell(value) -> str:
    if value is None:
        return "undefined"
    return f"{value:.4f}"


def run_ablation_matrix(
    cfg: ExperimentConfig,
    workdir: str | Path,
    conditions: list[str] | None = None,
    steps: int | None = None,
    mode: str = "extractor",
) -> list[dict]:
    """Train and score every ablation condition, writing a result table.

    ``extractor`` mode scores each condition's predicted pitch track on
    the SNR-controlled mixtures against the clean-source oracle track;
    ``full`` mode additionally trains the conversion model per
    condition and scores converted audio.  A failing condition is
    recorded in its row and does not abort the matrix.  Same config and
    seed give a byte-identical table.
    """
    from .melody import (
        CONDITIONS,
        build_training_set,
        condition_from_name,
        model_from_checkpoint,
        save_checkpoint,
        train_melody,
    )

    if mode not in ("extractor", "full"):
        raise DataError(f"unknown ablation mode '{mode}'")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    names = list(conditions) if conditions else list(CONDITIONS)
    for name in names:
        condition_from_name(name)

    bundle = load_data(cfg)
    samples = build_training_set(bundle.train_entries, bundle.labels)
    if not samples:
        raise DataError("no labelled training clips available")
    testset = build_noisy_testset(
        bundle.test_clips(), bundle.bgm_test, seed=cfg.seed, levels=cfg.eval.snr_levels
    )

    rows: list[dict] = []
    for name in names:
        condition = condition_from_name(name)
        run_dir = workdir / name
        row: dict = {
            "condition": name,
            "fine_tune": condition.fine_tune,
            "weighted_sum": condition.weighted_sum,
            "fft_blocks": condition.fft_blocks,
        }
        try:
            ckpt = train_melody(
                samples,
                condition,
                cfg.melody,
                cfg.backbone,
                bgm_pool=bundle.bgm_train,
                seed=cfg.seed,
                steps=steps,
            )
            save_checkpoint(ckpt, run_dir / "checkpoint.pt")
            archive_config(cfg, run_dir)
            model = model_from_checkpoint(ckpt)
            if mode == "extractor":
                report = evaluate(
                    _extractor_track_fn(model),
                    testset,
                    reference_fn=label_clip,
                    space=cfg.eval.f0corr_space,
                )
            else:
                report = _full_chain_report(cfg, bundle, samples, model, ckpt, testset, run_dir)
            row["f0rmse"] = report.f0rmse
            row["f0corr"] = report.f0corr
            row["n_scored"] = report.n_scored
            row["error"] = ""
        except Exception as exc:
            log.warning("condition '%s' failed: %s", name, exc)
            row.update({"f0rmse": None, "f0corr": None, "n_scored": 0, "error": str(exc)})
        rows.append(row)

    _write_table(rows, workdir)
    return rows


def _full_chain_report(cfg, bundle, samples, model, melody_ckpt, testset, run_dir) -> MetricReport:
    """Melody -> SVC -> vocoder -> oracle-track scoring for one condition."""
    import torch

    from .content import make_content_provider
    from .dsp import mel_spectrogram
    from .svc import (
        convert,
        fit_mel_stats,
        prepare_svc_samples,
        train_svc,
    )
    from .vocoder import FallbackVocoder

    provider = make_content_provider(cfg.svc.content)
    clips = [s.clip for s in samples]
    keys = [s.key for s in samples]
    mel_stats = fit_mel_stats([mel_spectrogram(c).frames for c in clips])
    in_samples = prepare_svc_samples(
        clips, model, provider, mel_stats, None, cfg.svc.melody_input, True, keys=keys
    )
    svc_ckpt = train_svc(
        in_samples,
        [],
        cfg.svc,
        mel_stats,
        melody_ref={"model_digest": melody_ckpt["model_digest"]},
        seed=cfg.seed,
        content_spec=cfg.svc.content,
    )
    torch.save(svc_ckpt, run_dir / "svc.pt")
    from .svc import system_from_checkpoint

    system, stats, _ = system_from_checkpoint(svc_ckpt)
    vocoder = FallbackVocoder(n_iter=30)

    def track_fn(mixture: AudioClip) -> FrameTrack:
        mel = convert(mixture, system, stats, melody_model=model, content_provider=provider)
        return label_clip(vocoder.synthesize(mel))

    return evaluate(track_fn, testset, reference_fn=label_clip, space=cfg.eval.f0corr_space)


_TABLE_COLUMNS = (
    "condition",
    "fine_tune",
    "weighted_sum",
    "fft_blocks",
    "f0rmse",
    "f0corr",
    "n_scored",
    "error",
)


def _write_table(rows: list[dict], workdir: Path) -> None:
    csv_path = workdir / "ablation_table.csv"
    with csv_path.open("w") as fh:
        fh.write(",".join(_TABLE_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in _TABLE_COLUMNS:
                value = row.get(col)
                if isinstance(value, bool):
                    cells.append("yes" if value else "no")
                elif isinstance(value, float):
                    cells.append(f"{value:.6f}")
                elif value is None:
                    cells.append("")
                else:
                    cells.append(str(value))
            fh.write(",".join(cells) + "\n")
    txt_path = workdir / "ablation_table.txt"
    with txt_path.open("w") as fh:
        fh.write(f"{'condition':<22}{'FT':<4}{'WS':<4}{'FFT':<5}{'F0RMSE':>10}{'F0CORR':>10}\n")
        for row in rows:
            fh.write(
                f"{row['condition']:<22}"
                f"{'y' if row['fine_tune'] else 'n':<4}"
                f"{'y' if row['weighted_sum'] else 'n':<4}"
                f"{'y' if row['fft_blocks'] else 'n':<5}"
                f"{_format_cell(row.get('f0rmse')):>10}"
                f"{_format_cell(row.get('f0corr')):>10}\n"
            )


# -- end to end ---------------------------------------------------------------


def _stage(name: str):
    """Decorator-free stage wrapper: exceptions become named stage errors."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is None or isinstance(exc, StageError):
                return False
            if isinstance(exc, (KeyboardInterrupt, SystemExit)):
                return False
            raise StageError(name, str(exc)) from exc

    return _Ctx()


def end_to_end(
    source_wav: str | Path,
    melody_ckpt_path: str | Path,
    svc_ckpt_path: str | Path,
    out_wav: str | Path,
    vocoder_spec: str = "fallback",
    reference_wav: str | Path | None = None,
) -> dict:
    """Source audio in, converted audio out, one call.

    Runs ingest, melody extraction, content extraction, conversion, and
    synthesis; any failure is reported as a named stage error.  Writes
    the converted WAV plus a deterministic JSON sidecar (metrics
    against ``reference_wav`` when given), and returns the sidecar
    dict.  Reruns produce byte-identical outputs.
    """
    from .content import make_content_provider
    from .melody import load_checkpoint, model_from_checkpoint
    from .svc import convert, system_from_checkpoint, verify_melody_compatibility
    from .vocoder import make_vocoder, synthesize

    with _stage("ingest"):
        source = ingest(source_wav)

    with _stage("melody-extractor"):
        melody_ckpt = load_checkpoint(melody_ckpt_path)
        melody_model = model_from_checkpoint(melody_ckpt)

    with _stage("svc"):
        svc_ckpt = load_checkpoint(svc_ckpt_path)
        verify_melody_compatibility(svc_ckpt, melody_ckpt)
        system, mel_stats, raw_stats = system_from_checkpoint(svc_ckpt)

    with _stage("content"):
        provider = make_content_provider(svc_ckpt.get("content", "stub"))

    with _stage("svc"):
        mel = convert(
            source,
            system,
            mel_stats,
            melody_model=melody_model,
            content_provider=provider,
            melody_input=svc_ckpt["melody_input"],
            raw_stats=raw_stats,
        )

    with _stage("vocoder"):
        vocoder = make_vocoder(vocoder_spec)
        audio = synthesize(mel, vocoder)
        out_wav = Path(out_wav)
        write_wav(out_wav, audio)

    sidecar: dict = {
        "source": str(source_wav),
        "source_hash": content_hash(source),
        "output_hash": content_hash(audio),
        "melody_condition": melody_ckpt.get("condition"),
        "vocoder": vocoder_spec,
        "frames": len(mel),
        "metrics": None,
    }
    if reference_wav is not None:
        with _stage("evaluation"):
            reference = ingest(reference_wav)
            ref_track = label_clip(reference)
            out_track = label_clip(audio)
            sidecar["metrics"] = {
                "f0rmse": f0rmse(ref_track, out_track).value,
                "f0corr": f0corr(ref_track, out_track).value,
            }
    sidecar_path = out_wav.with_suffix(out_wav.suffix + ".json")
    with sidecar_path.open("w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar


def file_sha256(path: str | Path) -> str:
    """Hex digest of a file's bytes (for output-stability checks)."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()
