"""Command-line surface: dataset simulation, training, evaluation,
single-file extraction, and layer-weight export.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from . import config as cfgmod
from .aggregation import export_weights
from .audio import ExternalMetric, read_wav, write_wav, Waveform
from .build import build_model, load_model
from .datasim import Manifest, simulate
from .errors import ConfigError, DataError, NumericError
from .train_eval import (
    TrainConfig,
    Trainer,
    evaluate_samples,
    load_eval_samples,
    load_training_set,
    model_extract_fn,
    oracle_extract_fn,
    passthrough_extract_fn,
)


def cmd_simulate(args) -> int:
    manifest = simulate(
        corpus_dir=args.corpus,
        out_dir=args.out,
        n_mixtures=args.n,
        seed=args.seed,
        split=args.split,
        min_duration=args.min_duration,
        gain_jitter_db=args.gain_jitter,
    )
    print(f"wrote {len(manifest.rows)} mixtures to {args.out} (seed={manifest.seed})")
    return 0


def _train_config(cfg: cfgmod.RunConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        lr_main=t.lr_main,
        lr_finetune=t.lr_finetune,
        freeze_backbone=t.freeze_backbone,
        max_epochs=t.max_epochs,
        max_steps=t.max_steps or None,
        batch_size=t.batch_size,
        clip_norm=t.clip_norm,
        seed=t.seed,
        stop_train_sisdri=t.stop_train_sisdri or None,
    )


def _run_training(cfg: cfgmod.RunConfig, out_dir: Path, resume: str | None) -> int:
    if not cfg.data.train_manifest:
        raise ConfigError("data.train_manifest is not set")
    train_manifest = Manifest.load(cfg.data.train_manifest)
    train_set = load_training_set(train_manifest, Path(cfg.data.train_manifest).parent)
    dev_set = None
    if cfg.data.dev_manifest:
        dev_manifest = Manifest.load(cfg.data.dev_manifest)
        dev_set = load_training_set(dev_manifest, Path(cfg.data.dev_manifest).parent)

    model = build_model(cfg)
    trainer = Trainer(
        model,
        train_set,
        dev_set,
        _train_config(cfg),
        out_dir,
        run_meta={"kind": cfg.setup, "config": cfgmod.to_dict(cfg), "config_hash": cfgmod.config_hash(cfg)},
    )
    if resume:
        trainer.resume(resume)
    result = trainer.run()
    cfgmod.save_yaml(cfg, out_dir / "config.yaml")
    frozen_note = "frozen" if cfg.train.freeze_backbone else "fine-tuned"
    print(
        f"trained {result.steps} steps ({result.epochs} epochs, backbone {frozen_note}); "
        f"best dev SI-SDRi {result.best_dev_si_sdri:.2f} dB; "
        f"config hash {cfgmod.config_hash(cfg)}"
    )
    print(f"checkpoints: {result.best_path} / {result.last_path}")
    return 0


def cmd_train(args) -> int:
    cfg = cfgmod.load_yaml(args.config)
    cfgmod.apply_overrides(cfg, args.set or [])
    out_dir = Path(args.out)
    if args.ablation:
        for label, overrides in cfgmod.ablation_grid(args.ablation):
            variant = cfgmod.load_yaml(args.config)
            cfgmod.apply_overrides(variant, (args.set or []) + overrides)
            if args.expand_only:
                cfgmod.save_yaml(variant, out_dir / f"{label}.yaml")
                print(f"wrote {out_dir / (label + '.yaml')}")
            else:
                print(f"=== ablation {label} ===")
                _run_training(variant, out_dir / label, resume=None)
        return 0
    return _run_training(cfg, out_dir, resume=args.resume)


def cmd_evaluate(args) -> int:
    manifest = Manifest.load(args.manifest)
    samples = load_eval_samples(manifest, Path(args.manifest).parent)

    config_hash = None
    if args.debug_oracle:
        extract_fn = oracle_extract_fn
    elif args.debug_passthrough:
        extract_fn = passthrough_extract_fn
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless a debug mode is set")
        model, cfg = load_model(args.checkpoint)
        extract_fn = model_extract_fn(model)
        config_hash = cfgmod.config_hash(cfg)

    external = []
    if args.stoi_cmd:
        external.append(ExternalMetric(args.stoi_cmd, name="stoi"))
    if args.pesq_cmd:
        external.append(ExternalMetric(args.pesq_cmd, name="pesq"))

    out_dir = Path(args.out)
    report = evaluate_samples(
        extract_fn,
        samples,
        sdr_taps=args.sdr_taps,
        external_metrics=external or None,
        workdir=out_dir / "estimates" if external else None,
    )
    report.save(out_dir, config_hash=config_hash)
    agg = report.aggregates()
    print(
        f"n={len(report.samples)}  mean SI-SDRi {agg['mean_si_sdri']:.2f} dB  "
        f"mean SDR {agg['mean_sdr']:.2f} dB  FR {agg['fr_percent']:.1f}%"
    )
    for key, value in agg.items():
        if key.startswith("mean_") and key not in ("mean_si_sdri", "mean_sdr"):
            print(f"{key}: {value:.4f}")
    return 0


def cmd_extract(args) -> int:
    model, cfg = load_model(args.checkpoint)
    mixture = read_wav(args.mixture)
    enrollment = read_wav(args.enrollment)
    model.eval()
    with torch.no_grad():
        est = model(
            torch.from_numpy(mixture.data).unsqueeze(0),
            torch.from_numpy(enrollment.data).unsqueeze(0),
        )
    write_wav(args.out, Waveform(est.squeeze(0).numpy(), mixture.sample_rate))
    print(f"wrote {args.out} ({len(mixture)} samples, config hash {cfgmod.config_hash(cfg)})")
    return 0


def cmd_export_weights(args) -> int:
    model, _ = load_model(args.checkpoint)
    rows = []
    if hasattr(model, "extractor_weights"):  # BLSTM downstream
        rows.append(export_weights(model.extractor_weights, "extractor"))
        rows.append(export_weights(model.spk_weights, "spk_enc"))
    if getattr(model, "aie", None) is not None and model.aie.cfg.uses_transformer:
        rows.append(export_weights(model.aie.top_weights, "aie_top"))
    if getattr(model, "mhfa", None) is not None:
        rows.append(export_weights(model.mhfa.key_weights, "mhfa_keys"))
        rows.append(export_weights(model.mhfa.value_weights, "mhfa_values"))
    if not rows:
        raise DataError("this model holds no layer-weight sets to export")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(rows) + "\n")
    print(f"wrote {len(rows)} weight rows to {out}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="build a two-speaker mixture set from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train", choices=("train", "dev", "test"))
    p.add_argument("--min-duration", type=float, default=1.0)
    p.add_argument("--gain-jitter", type=float, default=0.0)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="train a configured model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--resume", help="resume from a last.ckpt archive")
    p.add_argument("--ablation", choices=("table2",), help="run a named configuration grid")
    p.add_argument(
        "--expand-only",
        action="store_true",
        help="with --ablation: write the expanded configs instead of training",
    )
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint over a manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sdr-taps", type=int, default=512)
    p.add_argument("--debug-oracle", action="store_true", help="score est := ref")
    p.add_argument("--debug-passthrough", action="store_true", help="score est := mix")
    p.add_argument("--stoi-cmd", help="external STOI command with {ref} and {est} placeholders")
    p.add_argument("--pesq-cmd", help="external PESQ command with {ref} and {est} placeholders")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("extract", help="extract the target speaker from one mixture")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mixture", required=True)
    p.add_argument("--enrollment", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("export-weights", help="dump normalized layer weights as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_weights)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
