"""Command-line pipeline: gen-data, pretrain, extract, cil, report."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import contrastive, continual, harness, optim, synth
from .events import read_evs1_file, read_manifest
from .sparse import SparseEncoder


def _config(args) -> harness.ExperimentConfig:
    if args.config:
        return harness.load_config(args.config)
    return harness.ExperimentConfig()


def _augment_config(cfg: harness.ExperimentConfig) -> contrastive.AugmentConfig:
    return contrastive.AugmentConfig(
        crop_scale=(cfg.crop_min, cfg.crop_max),
        flip_prob=cfg.flip_prob,
        dropout_prob=cfg.dropout_prob,
        jitter=(cfg.jitter_min, cfg.jitter_max),
    )


def _load_streams(data_dir, split: str):
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir / "manifest.tsv")
    return [
        read_evs1_file(data_dir / e.path, label=e.class_id)
        for e in manifest.split_entries(split)
    ]


def _new_encoder(cfg: harness.ExperimentConfig, seed: int) -> SparseEncoder:
    # Construct the encoder before any other parameters so its ids are stable
    # across processes; checkpoints match parameters by id.
    return SparseEncoder(
        np.random.default_rng(seed), in_channels=2, feature_dim=cfg.feature_dim
    )


def _cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.data_dir
    esim = synth.EsimConfig(
        threshold=cfg.esim_threshold,
        frame_rate=cfg.esim_frame_rate,
        noise_rate=cfg.esim_noise_rate,
    )
    manifest = synth.gen_dataset(
        cfg.classes,
        cfg.train_per_class,
        cfg.test_per_class,
        cfg.width,
        cfg.height,
        esim,
        args.seed,
        out,
    )
    print(f"wrote {len(manifest.entries)} streams under {out}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _config(args)
    encoder = _new_encoder(cfg, args.seed)
    head = contrastive.ProjectionHead(
        np.random.default_rng(args.seed + 1), in_dim=cfg.feature_dim
    )
    streams = _load_streams(args.data or cfg.data_dir, "train")
    epochs = cfg.ssl_epochs if args.epochs is None else args.epochs
    history = contrastive.pretrain(
        streams,
        encoder,
        head,
        epochs=epochs,
        batch_size=cfg.ssl_batch,
        temperature=cfg.ssl_temperature,
        lr=cfg.ssl_lr,
        window_events=cfg.window_events,
        clip=cfg.clip,
        augment_config=_augment_config(cfg),
        seed=args.seed,
    )
    for e, loss in enumerate(history):
        print(f"epoch {e}: loss {loss:.4f}")
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / cfg.encoder_file
    optim.save_checkpoint_file(out, encoder.params())
    print(f"wrote encoder to {out}")
    return 0


def _cmd_extract(args) -> int:
    cfg = _config(args)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    encoder = _new_encoder(cfg, 0)
    encoder_path = args.encoder or out_dir / cfg.encoder_file
    optim.load_checkpoint_file(encoder_path, encoder.params())
    data_dir = args.data or cfg.data_dir
    for split, name in (
        ("train", cfg.train_features_file),
        ("test", cfg.test_features_file),
    ):
        table = contrastive.extract_features(
            _load_streams(data_dir, split),
            encoder,
            window_events=cfg.window_events,
            clip=cfg.clip,
        )
        out = out_dir / name
        contrastive.save_feature_table(out, table)
        print(f"wrote {len(table)} {split} features to {out}")
    return 0


def _cmd_cil(args) -> int:
    cfg = _config(args)
    train = contrastive.load_feature_table(args.train_features or cfg.train_features_file)
    test = contrastive.load_feature_table(args.test_features or cfg.test_features_file)
    seeds = args.seed or [0, 1, 2]
    presets = args.preset or list(continual.PRESETS)
    for name in presets:
        if name not in continual.PRESETS:
            raise harness.ConfigError(
                f"unknown preset {name!r}; choose from {', '.join(continual.PRESETS)}"
            )
    runs_dir = Path(args.out or cfg.runs_dir)
    runs_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for name in presets:
        for seed in seeds:
            schedule = continual.make_schedule(
                cfg.classes, cfg.classes_per_episode, seed
            )
            result = continual.run_cil(
                train,
                test,
                schedule,
                continual.PRESETS[name],
                seed=seed,
                n_classes=cfg.classes,
                steps_per_episode=cfg.steps_per_episode,
                batch_size=cfg.batch_size,
                lr=cfg.lr,
                hidden_dim=cfg.hidden_dim,
                latent_dim=cfg.latent_dim,
                beta=cfg.vae_beta,
            )
            results.append(result)
            base = runs_dir / f"{name}_seed{seed}"
            Path(f"{base}.csv").write_text(harness.format_run_csv(result), encoding="utf-8")
            Path(f"{base}_steps.csv").write_text(
                harness.format_steps_csv(result), encoding="utf-8"
            )
            print(f"{name} seed {seed}: final accuracy {result.final_overall:.4f}")
    summary = harness.summarize_runs(results)
    summary_path = args.summary or cfg.summary_file
    Path(summary_path).write_text(harness.format_summary_csv(summary), encoding="utf-8")
    print(f"wrote summary to {summary_path}")
    return 0


def _cmd_report(args) -> int:
    cfg = _config(args)
    text = Path(args.summary or cfg.summary_file).read_text(encoding="utf-8")
    summary = harness.parse_summary_csv(text)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / cfg.report_file
    harness.write_report(out, summary)
    print(f"wrote report to {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evcl",
        description="Event-stream synthesis, contrastive pretraining, and "
        "class-incremental evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a labeled event dataset")
    p.add_argument("--config")
    p.add_argument("--out", help="output directory (default: config data_dir)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="contrastively pretrain the encoder")
    p.add_argument("--config")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="directory for the encoder checkpoint (default: .)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("extract", help="encode both splits into feature tables")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--encoder", help="checkpoint path (default: OUT/encoder file)")
    p.add_argument("--out", help="directory for the feature tables (default: .)")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("cil", help="run class-incremental training")
    p.add_argument("--config")
    p.add_argument("--train-features")
    p.add_argument("--test-features")
    p.add_argument("--out", help="directory for per-run csv files")
    p.add_argument("--summary", help="summary csv path")
    p.add_argument("--seed", type=int, action="append", help="repeatable; default 0 1 2")
    p.add_argument("--preset", action="append", help="repeatable; default all presets")
    p.set_defaults(func=_cmd_cil)

    p = sub.add_parser("report", help="render the summary as an svg chart")
    p.add_argument("--config")
    p.add_argument("--summary")
    p.add_argument("--out", help="directory for the svg (default: .)")
    p.set_defaults(func=_cmd_report)
    return parser


def entry(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(entry())


if __name__ == "__main__":
    main()
