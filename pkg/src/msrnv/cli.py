"""Command-line interface: dataset synthesis, feature extraction, training,
synthesis, resampling, and the evaluation harness.

Exit codes: 0 success, 1 runtime error, 2 usage error. Settings resolve as
preset < config file < command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .audio import read_wav, write_wav
from .bench import bench_rtf, evaluate, octave_band_fractions
from .errors import (
    AudioFormatError,
    CheckpointError,
    FeatureLengthError,
    FilterDesignError,
    TrainingDiverged,
    UnsupportedAudioError,
)
from .features import (
    apply_stats,
    extract_logmel,
    fit_stats,
    read_stats,
    write_features,
    write_stats,
)
from .resample import RateLadder, downsample_antialias, upsample_sinc
from .training import (
    PRESETS,
    TrainConfig,
    load_cascade,
    load_checkpoint,
    load_dataset,
    make_synthetic_corpus,
    paper_config,
    train,
)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), help="named configuration")
    p.add_argument("--config", type=Path, help="JSON file of config field overrides")


def _resolve_config(args: argparse.Namespace, **flag_overrides) -> TrainConfig:
    cfg = PRESETS[args.preset]() if args.preset else paper_config()
    if args.config:
        merged = cfg.to_dict()
        merged.update(json.loads(Path(args.config).read_text()))
        cfg = TrainConfig.from_dict(merged)
    overrides = {k: v for k, v in flag_overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg


def _cmd_make_dataset(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args, seed=args.seed)
    native = (
        [int(r) for r in args.native_rates.split(",")] if args.native_rates else None
    )
    manifest = make_synthetic_corpus(
        args.out_dir,
        n_utts=args.n_utts,
        duration_s=args.duration,
        f0_range_hz=(args.f0_min, args.f0_max),
        seed=cfg.seed,
        cfg=cfg,
        native_rates=native,
    )
    print(f"wrote {args.n_utts} utterances; manifest at {manifest}")
    return 0


def _cmd_extract_features(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    mel_cfg = cfg.mel_config()
    paths = sorted(Path(args.audio_dir).glob("*.wav"))
    if not paths:
        raise FileNotFoundError(f"no .wav files in {args.audio_dir}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    waves = [read_wav(p) for p in paths]
    mels = [extract_logmel(w, mel_cfg.for_rate(w.rate)) for w in waves]
    if args.stats_in:
        stats = read_stats(args.stats_in)
    else:
        stats = fit_stats(mels)
    if args.stats_out:
        write_stats(stats, args.stats_out)
    lines = []
    for path, wave, mel in zip(paths, waves, mels):
        feat_path = out_dir / (path.stem + ".melf")
        write_features(apply_stats(mel, stats), feat_path)
        lines.append(f"{path.resolve()}\t{wave.rate}\t{feat_path.resolve()}")
    if args.manifest_out:
        Path(args.manifest_out).write_text("\n".join(lines) + "\n")
    print(f"extracted features for {len(paths)} file(s) into {out_dir}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    if args.resume:
        cfg = load_checkpoint(args.resume).config
    else:
        cfg = _resolve_config(
            args,
            total_steps=args.steps,
            seed=args.seed,
            batch_size=args.batch_size,
            telemetry_every=args.telemetry_every,
            checkpoint_every=args.checkpoint_every,
            manifest=str(args.manifest) if args.manifest else None,
        )
    manifest = args.manifest or cfg.manifest
    if manifest is None:
        raise ValueError("no dataset manifest (use --manifest or config field)")
    dataset = load_dataset(manifest, cfg)
    final = train(cfg, dataset, args.out_dir, resume_from=args.resume)
    print(f"training complete; final checkpoint at {final}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    from .features import read_features

    cascade, cfg = load_cascade(args.checkpoint)
    ladder = RateLadder(cfg.ladder)
    mel = read_features(args.features)
    upto = args.rate if args.rate else cfg.ladder[-1]
    result = cascade.synthesize(mel, upto=upto, noise_seed=args.noise_seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.features).stem
    waves = result.waveforms if args.dump_all_rates else [result.waveforms[-1]]
    for wave in waves:
        write_wav(wave, out_dir / f"{stem}.{wave.rate}.wav")
    if args.dump_all_rates:
        with open(out_dir / f"{stem}.bands.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["rate", "band_lo_hz", "band_hi_hz", "energy_fraction"])
            for wave in result.waveforms:
                fractions = octave_band_fractions(wave, ladder)
                edges = [0.0] + [r / 2.0 for r in cfg.ladder if r <= wave.rate]
                for lo, hi, frac in zip(edges[:-1], edges[1:], fractions):
                    writer.writerow([wave.rate, lo, hi, f"{frac:.6g}"])
    print(f"wrote {len(waves)} waveform(s) to {out_dir}")
    return 0


def _cmd_resample(args: argparse.Namespace) -> int:
    w = read_wav(args.infile)
    if args.rate >= w.rate:
        out = upsample_sinc(w, args.rate)
    else:
        out = downsample_antialias(w, args.rate)
    write_wav(out, args.outfile)
    print(f"{args.infile} ({w.rate} Hz) -> {args.outfile} ({args.rate} Hz)")
    return 0


def _cmd_bench_rtf(args: argparse.Namespace) -> int:
    report = bench_rtf(
        args.checkpoint, args.features_dir, args.n, warmup=args.warmup
    )
    if args.out:
        report.write_csv(args.out)
    print(
        f"mean RTF {report.mean_rtf:.4g} over {len(report.utterances)} utterance(s), "
        f"threads={report.thread_count}"
        + (" [high variance]" if report.high_variance else "")
    )
    for i, sec in enumerate(report.mean_stage_seconds):
        print(f"  stage {i + 1}: {sec:.4g} s")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    report = evaluate(args.checkpoint, args.manifest, out_csv=args.out)
    for rate, metrics in sorted(report.aggregate().items()):
        print(
            f"{rate} Hz: LSD {metrics['lsd_db']:.3g} dB, "
            f"MR-STFT {metrics['mrstft']:.3g}"
        )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msrnv",
        description="Multi-sampling-rate neural vocoder toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="generate a synthetic harmonic corpus")
    _add_config_args(p)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--n-utts", type=int, default=20)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--f0-min", type=float, default=120.0)
    p.add_argument("--f0-max", type=float, default=300.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--native-rates", help="comma-separated rates cycled per utterance")
    p.set_defaults(func=_cmd_make_dataset)

    p = sub.add_parser("extract-features", help="log-mel features for a directory")
    _add_config_args(p)
    p.add_argument("--audio-dir", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--stats-in", type=Path, help="apply existing normalization stats")
    p.add_argument("--stats-out", type=Path, help="write fitted stats here")
    p.add_argument("--manifest-out", type=Path)
    p.set_defaults(func=_cmd_extract_features)

    p = sub.add_parser("train", help="run or resume training")
    _add_config_args(p)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--steps", type=int, help="override total_steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--telemetry-every", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("synth", help="synthesize waveforms from features")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--rate", type=int, help="stop at this ladder rate")
    p.add_argument("--dump-all-rates", action="store_true")
    p.add_argument("--noise-seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("resample", help="resample a WAV file")
    p.add_argument("--in", dest="infile", type=Path, required=True)
    p.add_argument("--out", dest="outfile", type=Path, required=True)
    p.add_argument("--rate", type=int, required=True)
    p.set_defaults(func=_cmd_resample)

    p = sub.add_parser("bench-rtf", help="measure the real-time factor")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--features-dir", type=Path, required=True)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_bench_rtf)

    p = sub.add_parser("evaluate", help="objective metrics against references")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (
        ValueError,
        FileNotFoundError,
        OSError,
        KeyError,
        AudioFormatError,
        UnsupportedAudioError,
        FilterDesignError,
        FeatureLengthError,
        CheckpointError,
        TrainingDiverged,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
