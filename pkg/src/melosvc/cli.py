"""Command-line interface.

One subcommand per pipeline stage; heavy imports happen inside the
handlers so ``--help`` stays fast.  Exit codes: 0 on success, 2 for
configuration problems, 3 for data problems, 4 for stage failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DataError, MelosvcError, ParameterError

log = logging.getLogger("melosvc")


def _load_config(args):
    from .config import ExperimentConfig, load_config

    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "manifest", None):
        cfg.data.manifest = args.manifest
    if getattr(args, "labels", None):
        cfg.data.labels_dir = args.labels
    return cfg


def _cmd_synth_corpus(args) -> int:
    from .synth import write_toy_corpus

    root = write_toy_corpus(
        args.out, args.layout, args.songs, args.seed, duration=args.duration, singers=args.singers
    )
    print(f"wrote {args.songs} {args.layout}-layout songs under {root}")
    return 0


def _cmd_prepare_data(args) -> int:
    from .manifest import DatasetSpec, build_manifest, save_manifest, with_speed_copies

    ratios = {}
    if args.ratios:
        for part in args.ratios.split(","):
            name, _, value = part.partition("=")
            try:
                ratios[name.strip()] = float(value)
            except ValueError:
                raise ParameterError(f"bad ratio component '{part}'") from None
    spec = DatasetSpec(
        seed=args.seed,
        split_ratios=ratios or DatasetSpec(seed=0).split_ratios,
        holdout_singers=args.holdout_singers,
        role=args.role,
    )
    entries = build_manifest(args.corpus, args.layout, spec)
    if args.speed:
        factors = tuple(float(v) for v in args.speed.split(","))
        entries = with_speed_copies(entries, factors)
    save_manifest(entries, args.out)
    by_split = {}
    for e in entries:
        by_split[e.split] = by_split.get(e.split, 0) + 1
    print(f"wrote {len(entries)} entries to {args.out} ({by_split})")
    return 0


def _cmd_label(args) -> int:
    from .labeling import label_corpus
    from .manifest import load_manifest

    entries = load_manifest(args.manifest)
    extractors = tuple(args.extractors.split(","))
    result = label_corpus(entries, args.out, extractors)
    print(f"labelled {len(result.tracks)} clips into {args.out}")
    for key, reason in result.failed:
        print(f"  failed: {key}: {reason}", file=sys.stderr)
    return 0


def _cmd_mix(args) -> int:
    from .audio import ingest, write_wav
    from .dsp import mix_at_snr

    vocal = ingest(args.vocal)
    bgm = ingest(args.bgm)
    result = mix_at_snr(vocal, bgm, args.snr)
    write_wav(args.out, result.mixture)
    print(
        f"wrote {args.out} (target {args.snr:g} dB, measured {result.measured_snr_db:.3f} dB,"
        f" gain {result.gain:.4f})"
    )
    return 0


def _cmd_perturb(args) -> int:
    from .audio import ingest, write_wav
    from .dsp import speed_perturb

    clip = ingest(args.input)
    out = speed_perturb(clip, args.rate)
    write_wav(args.out, out)
    print(f"wrote {args.out} ({len(clip)} -> {len(out)} samples at rate {args.rate:g})")
    return 0


def _cmd_train_melody(args) -> int:
    from .config import archive_config
    from .experiments import load_data
    from .melody import build_training_set, condition_from_name, save_checkpoint, train_melody

    cfg = _load_config(args)
    condition = condition_from_name(args.condition or cfg.condition)
    bundle = load_data(cfg)
    samples = build_training_set(bundle.train_entries, bundle.labels)
    if not samples:
        raise DataError("no labelled training clips available")
    ckpt = train_melody(
        samples,
        condition,
        cfg.melody,
        cfg.backbone,
        bgm_pool=bundle.bgm_train,
        seed=cfg.seed,
        steps=args.steps,
    )
    out_dir = Path(args.out)
    save_checkpoint(ckpt, out_dir / "checkpoint.pt")
    archive_config(cfg, out_dir)
    print(f"trained condition '{condition.name}' -> {out_dir / 'checkpoint.pt'}")
    return 0


def _cmd_train_svc(args) -> int:
    import torch

    from .config import archive_config
    from .content import make_content_provider
    from .dsp import mel_spectrogram
    from .experiments import load_data
    from .labeling import entry_key, load_entry_clip
    from .melody import load_checkpoint, label_statistics, model_from_checkpoint
    from .svc import (
        RawMelodyStats,
        fit_mel_stats,
        prepare_svc_samples,
        train_svc,
    )

    cfg = _load_config(args)
    bundle = load_data(cfg)
    in_entries = [e for e in bundle.train_entries if e.role != "out_set"]
    out_entries = [e for e in bundle.train_entries if e.role == "out_set"]
    melody_model = None
    melody_ref = None
    raw_stats = None
    if cfg.svc.melody_input == "features":
        melody_ckpt = load_checkpoint(args.melody_ckpt)
        melody_model = model_from_checkpoint(melody_ckpt)
        melody_ref = {"model_digest": melody_ckpt.get("model_digest")}
    else:
        from .melody import build_training_set

        stat_samples = build_training_set(in_entries + out_entries, bundle.labels)
        p_mu, p_sd, e_mu, e_sd = label_statistics(stat_samples)
        raw_stats = RawMelodyStats(p_mu, p_sd, e_mu, e_sd)
    provider = make_content_provider(args.content or cfg.svc.content)

    def load_set(entries, with_mel, mel_stats):
        clips = [load_entry_clip(e) for e in entries]
        keys = [entry_key(e) for e in entries]
        return prepare_svc_samples(
            clips,
            melody_model,
            provider,
            mel_stats,
            raw_stats,
            cfg.svc.melody_input,
            with_mel,
            labels=bundle.labels,
            keys=keys,
        )

    in_clips = [load_entry_clip(e) for e in in_entries]
    if not in_clips:
        raise DataError("no target-singer training clips available")
    mel_stats = fit_mel_stats([mel_spectrogram(c).frames for c in in_clips])
    in_samples = load_set(in_entries, True, mel_stats)
    out_samples = load_set(out_entries, False, None)
    ckpt = train_svc(
        in_samples,
        out_samples,
        cfg.svc,
        mel_stats,
        raw_stats=raw_stats,
        melody_ref=melody_ref,
        seed=cfg.seed,
        steps=args.steps,
        content_spec=args.content or cfg.svc.content,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt, out_dir / "svc.pt")
    archive_config(cfg, out_dir)
    print(f"trained conversion model -> {out_dir / 'svc.pt'}")
    return 0


def _cmd_convert(args) -> int:
    import numpy as np

    from .audio import ingest
    from .content import make_content_provider
    from .melody import load_checkpoint, model_from_checkpoint
    from .svc import convert, system_from_checkpoint, verify_melody_compatibility

    source = ingest(args.input)
    svc_ckpt = load_checkpoint(args.svc_ckpt)
    system, mel_stats, raw_stats = system_from_checkpoint(svc_ckpt)
    melody_model = None
    if svc_ckpt["melody_input"] == "features":
        melody_ckpt = load_checkpoint(args.melody_ckpt)
        verify_melody_compatibility(svc_ckpt, melody_ckpt)
        melody_model = model_from_checkpoint(melody_ckpt)
    provider = make_content_provider(svc_ckpt.get("content", "stub"))
    mel = convert(
        source,
        system,
        mel_stats,
        melody_model=melody_model,
        content_provider=provider,
        melody_input=svc_ckpt["melody_input"],
        raw_stats=raw_stats,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        out,
        mel=mel.frames,
        frame_ms=mel.frame_ms,
        hop_ms=mel.hop_ms,
        sample_rate=mel.sample_rate,
    )
    print(f"wrote {out} ({len(mel)} frames x {mel.n_mels} bands)")
    return 0


def _cmd_synthesize(args) -> int:
    import numpy as np

    from .audio import write_wav
    from .dsp import MelSpectrogram
    from .vocoder import make_vocoder, synthesize

    with np.load(args.mel, allow_pickle=False) as data:
        mel = MelSpectrogram(
            data["mel"],
            frame_ms=float(data["frame_ms"]),
            hop_ms=float(data["hop_ms"]),
            sample_rate=int(data["sample_rate"]),
        )
    audio = synthesize(mel, make_vocoder(args.vocoder))
    write_wav(args.out, audio)
    print(f"wrote {args.out} ({audio.duration:.2f} s)")
    return 0


def _cmd_make_testset(args) -> int:
    from .experiments import load_data
    from .metrics import build_noisy_testset, save_testset

    cfg = _load_config(args)
    bundle = load_data(cfg)
    levels = tuple(float(v) for v in args.levels.split(","))
    testset = build_noisy_testset(bundle.test_clips(), bundle.bgm_test, cfg.seed, levels)
    index = save_testset(testset, args.out)
    counts = testset.count_per_level()
    print(f"wrote {len(testset.items)} mixtures to {index} (per level: {counts})")
    return 0


def _cmd_evaluate(args) -> int:
    from .labeling import label_clip
    from .metrics import evaluate, load_testset, save_report

    testset = load_testset(args.testset)
    if args.identity:
        track_fn = label_clip
    elif args.melody_ckpt and args.svc_ckpt:
        from .content import make_content_provider
        from .melody import load_checkpoint, model_from_checkpoint
        from .svc import convert, system_from_checkpoint, verify_melody_compatibility
        from .vocoder import make_vocoder

        svc_ckpt = load_checkpoint(args.svc_ckpt)
        system, mel_stats, raw_stats = system_from_checkpoint(svc_ckpt)
        melody_model = None
        if svc_ckpt["melody_input"] == "features":
            melody_ckpt = load_checkpoint(args.melody_ckpt)
            verify_melody_compatibility(svc_ckpt, melody_ckpt)
            melody_model = model_from_checkpoint(melody_ckpt)
        provider = make_content_provider(svc_ckpt.get("content", "stub"))
        vocoder = make_vocoder(args.vocoder)

        def track_fn(mixture):
            mel = convert(
                mixture,
                system,
                mel_stats,
                melody_model=melody_model,
                content_provider=provider,
                melody_input=svc_ckpt["melody_input"],
                raw_stats=raw_stats,
            )
            return label_clip(vocoder.synthesize(mel))

    else:
        raise ConfigError("evaluate needs either --identity or both --melody-ckpt and --svc-ckpt")
    report = evaluate(track_fn, testset, reference_fn=label_clip, space=args.space)
    save_report(report, args.out)
    rmse = "undefined" if report.f0rmse is None else f"{report.f0rmse:.4f}"
    corr = "undefined" if report.f0corr is None else f"{report.f0corr:.4f}"
    print(f"scored {report.n_scored} clips: F0RMSE {rmse}, F0CORR {corr} -> {args.out}")
    return 0


def _cmd_report_weights(args) -> int:
    from .melody import load_checkpoint
    from .metrics import write_layer_weight_report

    checkpoints = {}
    for spec in args.ckpt:
        label, _, path = spec.rpartition("=")
        if not label:
            label, path = Path(path).parent.name or Path(path).stem, spec
        checkpoints[label] = load_checkpoint(path)
    write_layer_weight_report(checkpoints, args.out, args.png)
    print(f"wrote layer weights for {len(checkpoints)} checkpoints to {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    from .experiments import run_ablation_matrix

    cfg = _load_config(args)
    conditions = args.conditions.split(",") if args.conditions else None
    rows = run_ablation_matrix(cfg, args.out, conditions, steps=args.steps, mode=args.mode)
    failed = [r["condition"] for r in rows if r.get("error")]
    print(f"wrote {len(rows)}-row table to {Path(args.out) / 'ablation_table.csv'}")
    if failed:
        print(f"failed conditions: {', '.join(failed)}", file=sys.stderr)
    return 0


def _cmd_end_to_end(args) -> int:
    from .experiments import end_to_end

    sidecar = end_to_end(
        args.input,
        args.melody_ckpt,
        args.svc_ckpt,
        args.out,
        vocoder_spec=args.vocoder,
        reference_wav=args.reference,
    )
    print(f"wrote {args.out} (output hash {sidecar['output_hash'][:12]})")
    if sidecar["metrics"]:
        print(f"metrics vs reference: {sidecar['metrics']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="melosvc",
        description="Accompaniment-robust melody extraction and singing voice conversion",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="generate a synthetic toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--layout", choices=("stems", "clean"), default="stems")
    p.add_argument("--songs", type=int, default=12)
    p.add_argument("--singers", type=int, default=6)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=17)
    p.set_defaults(fn=_cmd_synth_corpus)

    p = sub.add_parser("prepare-data", help="scan a corpus into a split manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--layout", choices=("stems", "clean"), default="stems")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--ratios", help="e.g. train=0.6667,valid=0.2333,test=0.1")
    p.add_argument("--holdout-singers", type=int, default=4)
    p.add_argument("--role", choices=("extractor_corpus", "in_set", "out_set"), default="extractor_corpus")
    p.add_argument("--speed", help="comma-separated speed factors for train copies, e.g. 0.9,1.1")
    p.set_defaults(fn=_cmd_prepare_data)

    p = sub.add_parser("label", help="compute fused pitch labels for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--extractors", default="yin,acf,cepstrum")
    p.set_defaults(fn=_cmd_label)

    p = sub.add_parser("mix", help="mix a background under a vocal at an exact SNR")
    p.add_argument("--vocal", required=True)
    p.add_argument("--bgm", required=True)
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_mix)

    p = sub.add_parser("perturb", help="speed-perturb a clip")
    p.add_argument("--input", required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_perturb)

    p = sub.add_parser("train-melody", help="train one extractor condition")
    p.add_argument("--config")
    p.add_argument("--condition")
    p.add_argument("--manifest")
    p.add_argument("--labels")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_melody)

    p = sub.add_parser("train-svc", help="train the conversion model")
    p.add_argument("--config")
    p.add_argument("--melody-ckpt")
    p.add_argument("--content")
    p.add_argument("--manifest")
    p.add_argument("--labels")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_svc)

    p = sub.add_parser("convert", help="convert a source clip to the target's mel")
    p.add_argument("--input", required=True)
    p.add_argument("--melody-ckpt")
    p.add_argument("--svc-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_convert)

    p = sub.add_parser("synthesize", help="vocode a mel spectrogram")
    p.add_argument("--mel", required=True)
    p.add_argument("--vocoder", default="fallback")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synthesize)

    p = sub.add_parser("make-testset", help="compose SNR-controlled evaluation mixtures")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--labels")
    p.add_argument("--levels", default="0,5,10,15")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_make_testset)

    p = sub.add_parser("evaluate", help="score a system over a noisy test set")
    p.add_argument("--testset", required=True)
    p.add_argument("--melody-ckpt")
    p.add_argument("--svc-ckpt")
    p.add_argument("--vocoder", default="fallback")
    p.add_argument("--identity", action="store_true", help="score oracle tracks of the mixtures")
    p.add_argument("--space", choices=("log", "hz"), default="log")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("report-weights", help="tabulate learned layer weights")
    p.add_argument("--ckpt", action="append", required=True, help="label=path or path")
    p.add_argument("--png")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_report_weights)

    p = sub.add_parser("ablate", help="run the condition matrix and write the table")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--labels")
    p.add_argument("--conditions", help="comma-separated subset (default: all seven)")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("extractor", "full"), default="extractor")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("end-to-end", help="source wav in, converted wav out")
    p.add_argument("--input", required=True)
    p.add_argument("--melody-ckpt", required=True)
    p.add_argument("--svc-ckpt", required=True)
    p.add_argument("--vocoder", default="fallback")
    p.add_argument("--reference")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_end_to_end)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return exc.exit_code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MelosvcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
