"""Command-line surface: simulate / train / separate / evaluate / oracle /
rf / gradcheck.

Every command is deterministic under --seed.  Exit codes: 0 success,
1 user error (bad config/manifest/input), 2 internal failure.  Failures
print one machine-readable JSON line to stderr.  SEPKIT_THREADS bounds
worker parallelism for scene simulation and evaluation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import codec as codec_mod
from . import pipeline, reporting, schemas, simulate
from .errors import InputError, SepkitError
from .separator import lookahead, receptive_field


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SEPKIT_THREADS", "1")))
    except ValueError:
        return 1


def _load_rules(spec: str, overrides: dict) -> simulate.SceneRules:
    if spec in ("wsj0", "ls", "librispeech"):
        return simulate.SceneRules.from_name(spec, **overrides)
    path = Path(spec)
    if not path.exists():
        raise InputError(f"rules {spec!r} is neither a preset name nor a file")
    with open(path) as fh:
        obj = json.load(fh)
    schemas.validate_rules(obj)
    name = obj.pop("name", "custom")
    for key in ("room_min", "room_max", "t60_range", "bucket_proportions", "distance_range",
                "f0_range", "first_source_azimuth"):
        if key in obj and obj[key] is not None:
            obj[key] = tuple(obj[key])
    rules = simulate.SceneRules(name=name, **obj)
    for key, value in overrides.items():
        setattr(rules, key, value)
    return rules


def cmd_simulate(args) -> int:
    overrides = {}
    if args.duration is not None:
        overrides["duration"] = args.duration
    rules = _load_rules(args.rules, overrides)
    manifest = simulate.build_dataset(rules, count=args.count, seed=args.seed,
                                      out_dir=args.out, threads=_threads())
    counts = {name: 0 for name in simulate.BUCKET_NAMES}
    for rec in manifest["scenes"]:
        counts[rec["bucket"]] += 1
    print(f"wrote {args.count} scenes to {args.out}")
    for name in simulate.BUCKET_NAMES:
        print(f"bucket {name}: {counts[name]}")
    return 0


def _model_from_args(args):
    config = pipeline.load_config(args.config)
    model = pipeline.SeparationModel(config, rng=np.random.default_rng([config.seed, 0xA1]))
    if getattr(args, "checkpoint", None):
        pipeline.load_checkpoint(args.checkpoint, model, config)
    return config, model


def cmd_train(args) -> int:
    config = pipeline.load_config(args.config)
    if args.out:
        config.out_dir = args.out
    model, history = pipeline.train(config, resume_from=args.resume)
    out = Path(config.out_dir)
    reporting.write_csv(out / "history.csv", ["epoch", "train_loss", "val_loss", "lr"], history)
    if history and not args.no_figure:
        reporting.loss_curve_figure(out / "loss_curve.png", history)
    for h in history:
        print(f"epoch {h['epoch']}: train {h['train_loss']:.4f} val {h['val_loss']:.4f} lr {h['lr']:.2e}")
    print(f"checkpoints in {out}")
    return 0


def cmd_separate(args) -> int:
    from . import audio_io

    config, model = _model_from_args(args)
    fs, channels = audio_io.read_wav(args.input)
    if fs != config.codec.fs:
        raise InputError(f"input sample rate {fs} != config {config.codec.fs}")
    estimates = pipeline.separate(channels, config, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s, est in enumerate(estimates):
        audio_io.write_wav(out / f"est_{s}.wav", fs, est)
    print(f"wrote {len(estimates)} estimates to {out}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = simulate.load_manifest(args.manifest)
    schemas.validate_manifest({k: v for k, v in manifest.items() if k != "_dir"})
    if args.estimates:
        config = pipeline.load_config(args.config) if args.config else None
        rows = pipeline.evaluate(manifest, config, model=None, estimates_dir=args.estimates,
                                 threads=_threads())
    else:
        config, model = _model_from_args(args)
        rows = pipeline.evaluate(manifest, config, model, threads=_threads())
    out = Path(args.out)
    reporting.write_csv(out / "report.csv",
                        ["scene", "bucket", "sisnr", "sdr", "permutation"], rows)
    agg = pipeline.aggregate_rows(rows)
    summary_rows = [{"bucket": b, **vals} for b, vals in agg.items()]
    reporting.write_csv(out / "summary.csv", ["bucket", "count", "sisnr", "sdr"], summary_rows)
    if not args.no_figure:
        buckets = [r["bucket"] for r in summary_rows]
        reporting.grouped_bar_figure(
            out / "report.png", buckets,
            {"Si-SNR": [r["sisnr"] for r in summary_rows], "SDR": [r["sdr"] for r in summary_rows]},
            ylabel="dB", title="separation metrics by angle bucket",
        )
    for r in summary_rows:
        print(f"{r['bucket']:>7}: n={r['count']:3d}  Si-SNR {r['sisnr']:7.2f} dB  SDR {r['sdr']:7.2f} dB")
    return 0


def cmd_oracle(args) -> int:
    manifest = simulate.load_manifest(args.manifest)
    kinds = pipeline.ORACLE_MASKS if args.mask == "all" else (args.mask,)
    stft_cfg = codec_mod.CodecConfig(domain="spectrogram", L=args.stft_len,
                                     hop=args.stft_hop, N=args.stft_len // 2 + 1)
    dump_dir = Path(args.out) / "estimates" if args.dump else None
    rows = pipeline.oracle_report(manifest, kinds=kinds, stft_cfg=stft_cfg, dump_dir=dump_dir)
    out = Path(args.out)
    reporting.write_csv(out / "oracle.csv",
                        ["mask", "scene", "bucket", "sisnr", "sdr", "permutation"], rows)
    summary = pipeline.oracle_summary(rows)
    summary_rows = [{"mask": m, **vals} for m, vals in summary.items()]
    reporting.write_csv(out / "oracle_summary.csv", ["mask", "count", "sisnr", "sdr"], summary_rows)
    if not args.no_figure:
        reporting.grouped_bar_figure(
            out / "oracle.png", [r["mask"] for r in summary_rows],
            {"Si-SNR": [r["sisnr"] for r in summary_rows], "SDR": [r["sdr"] for r in summary_rows]},
            ylabel="dB", title="ideal-mask scores",
        )
    for r in summary_rows:
        print(f"{r['mask']:>5}: n={r['count']:3d}  Si-SNR {r['sisnr']:7.2f} dB  SDR {r['sdr']:7.2f} dB")
    return 0


def cmd_rf(args) -> int:
    config = pipeline.load_config(args.config)
    tcn = config.tcn_config()
    fs = config.codec.fs
    hop = config.codec.hop
    rf = receptive_field(tcn, hop, fs)
    print(f"X={tcn.X} R={tcn.R} P={tcn.P} hop={hop} fs={fs}")
    print(f"RF_s={rf.seconds:g}")
    print(f"RF_frames={rf.frames}")
    print(f"RF_exact_frames={rf.exact_frames}")
    print(f"RF_exact_s={rf.exact_seconds:g}")
    for mode in ("non_causal", "semi_causal", "causal"):
        probe = pipeline.ExperimentConfig(
            pipeline=config.pipeline, channels=config.channels, pairs=config.pairs,
            codec=config.codec, B=config.B, H=config.H, P=config.P, X=config.X,
            R=config.R, norm=config.norm, causality=mode, S=config.S,
            loss=config.loss, manifest=config.manifest,
        ).tcn_config()
        print(f"lookahead_{mode}_s={lookahead(probe, hop, fs):g}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.config:
        configs = {"config": pipeline.load_config(args.config)}
    else:
        configs = {}
        for pipe in pipeline.PIPELINES:
            for loss in pipeline.LOSSES:
                if pipe == "waveform":
                    cc = codec_mod.CodecConfig(domain="waveform", L=16, hop=8, N=9)
                else:
                    cc = codec_mod.CodecConfig(domain="spectrogram", L=16, hop=8, N=9)
                configs[f"{pipe}/{loss}"] = pipeline.ExperimentConfig(
                    pipeline=pipe, codec=cc, B=8, H=8, P=3, X=2, R=1, norm="cLN",
                    causality="non_causal", S=2, loss=loss, chunk_s=0.05, seed=args.seed,
                )
    n = 10**9 if args.full else args.samples
    worst = 0.0
    for name, cfg in configs.items():
        report = pipeline.gradcheck_model(cfg, n_params_per_group=n, seed=args.seed)
        local = max(report.values())
        worst = max(worst, local)
        print(f"{name}: max_rel_err={local:.3e}")
        if args.verbose:
            for group, err in sorted(report.items(), key=lambda kv: -kv[1]):
                print(f"    {group}: {err:.3e}")
    print(f"max_rel_err={worst:.3e}")
    if worst >= 1e-3:
        print("gradcheck FAILED", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sepkit",
                                     description="speech separation experiments: simulate, train, evaluate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate reverberant multi-channel scenes")
    p.add_argument("--rules", default="wsj0", help="preset name (wsj0|ls) or rules JSON file")
    p.add_argument("--count", type=int, required=True, help="number of scenes")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--duration", type=float, default=None, help="override source duration (s)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a separation model")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--no-figure", action="store_true", help="skip the loss-curve PNG")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate a mixture WAV with trained weights")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="mixture WAV (uses channel 1, plus IPD channels)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="score separated sources on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--estimates", default=None,
                   help="directory of pre-computed estimates (<scene>/est_<s>.wav)")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="ideal-mask reference scores")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mask", default="all", choices=("iam", "ibm", "irm", "ipsm", "all"))
    p.add_argument("--out", required=True)
    p.add_argument("--stft-len", type=int, default=512)
    p.add_argument("--stft-hop", type=int, default=160)
    p.add_argument("--dump", action="store_true", help="write 64-bit estimate WAVs")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("rf", help="receptive field and lookahead for a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_rf)

    p = sub.add_parser("gradcheck", help="finite-difference audit of end-to-end gradients")
    p.add_argument("--config", default=None, help="experiment config (default: tiny suite)")
    p.add_argument("--samples", type=int, default=4, help="coordinates per parameter group")
    p.add_argument("--full", action="store_true", help="check every parameter coordinate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SepkitError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(json.dumps({"error": "internal", "message": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
