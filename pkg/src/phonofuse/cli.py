"""Command-line entry point wiring the modules into the experiment workflow.

Subcommands follow the pipeline stage order: prep, extract, train, grid, eval,
report. All randomness flows from a single --seed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import audio, data, experiment, metrics, models, report, training

log = logging.getLogger("phonofuse")

SCHEME_CHOICES = (data.SCHEME_A, data.SCHEME_B)


def cmd_prep(args) -> int:
    in_dir = Path(args.in_dir)
    out_dir = Path(args.out_dir)
    wavs = sorted(in_dir.rglob("*.wav"))
    if not wavs:
        log.error("no input: %s contains no .wav files", in_dir)
        return 2

    ok = 0
    failed = 0
    for src in wavs:
        rel = src.relative_to(in_dir)
        dst = out_dir / rel
        try:
            clip = audio.load_wav(src)
            clip = audio.standardize(clip, gate=args.gate, threshold_db=args.gate_threshold_db)
            dst.parent.mkdir(parents=True, exist_ok=True)
            audio.write_wav(dst, clip)
            log.info("prepped %s (%d samples)", rel, clip.samples.size)
            ok += 1
        except (audio.AudioFormatError, OSError) as exc:
            log.warning("skipped %s: %s", rel, exc)
            failed += 1
    log.info("prep finished: %d written, %d skipped", ok, failed)
    return 0 if ok > 0 else 1


def cmd_extract(args) -> int:
    try:
        from phonoextract import cli as extract_cli
    except ImportError:
        log.error(
            "the extractor package is not installed; "
            "install it with `pip install -e extractor/` and retry"
        )
        return 2
    forwarded = ["--in", args.in_dir, "--out", args.out_dir]
    if args.config:
        forwarded += ["--config", args.config]
    if args.backend:
        forwarded += ["--backend", args.backend]
    return extract_cli.main(forwarded)


def _apply_overrides(cfg: experiment.ExperimentConfig, args) -> experiment.ExperimentConfig:
    if args.seed is not None:
        cfg.train.seed = args.seed
    if getattr(args, "scheme", None):
        cfg.scheme = args.scheme
    if getattr(args, "strategy", None):
        cfg.strategy = args.strategy
    if getattr(args, "out", None):
        cfg.out_dir = Path(args.out)
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    cfg = _apply_overrides(experiment.load_experiment_config(args.config), args)
    summary = experiment.run_experiment(cfg)
    rep = summary.test_report
    print(f"strategy={summary.strategy} scheme={summary.scheme} seed={summary.seed}")
    print(f"best fold: {summary.best_fold} (val acc {summary.selection_metric:.4f})")
    print(
        "test: acc={} precision={} recall={} f1={} (n={})".format(
            metrics.format_metric(rep.accuracy),
            metrics.format_metric(rep.precision),
            metrics.format_metric(rep.recall),
            metrics.format_metric(rep.f1),
            rep.count,
        )
    )
    print(f"artifacts in {cfg.out_dir}")
    return 0


def cmd_grid(args) -> int:
    cfg = _apply_overrides(experiment.load_experiment_config(args.config), args)
    grid = cfg.grid if cfg.grid is not None else training.GridSpec.default()
    manifest = data.load_manifest(cfg.dataset)
    split = data.build_split(manifest, cfg.scheme, cfg.train.seed)
    spec = experiment.build_spec(cfg, manifest)
    result = training.grid_search(
        spec, split, manifest, grid, cfg.train, k=cfg.folds, jobs=cfg.jobs
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    experiment.write_grid_csv(out / "grid_ranking.csv", result)
    best = result.winner
    print(f"{len(result.ranking)} grid cells evaluated; ranking in {out / 'grid_ranking.csv'}")
    print(
        f"winner: lr={best.learning_rate} batch={best.batch_size} "
        f"dropout={best.dropout_p} mean_val_acc={best.mean_val_acc:.4f}"
    )
    return 0


def cmd_eval(args) -> int:
    manifest = data.load_manifest(args.dataset)
    model = models.load_model(args.checkpoint)
    if model.spec.da != manifest.da or model.spec.dt != manifest.dt:
        log.error(
            "checkpoint dims (da=%d, dt=%d) do not match dataset (da=%d, dt=%d)",
            model.spec.da,
            model.spec.dt,
            manifest.da,
            manifest.dt,
        )
        return 2
    split = data.build_split(manifest, args.scheme, args.seed or 0)
    ids = split.train_ids if args.side == "train" else split.test_ids
    if not ids:
        log.warning("%s split is empty; metrics will be zero", args.side)
    rep, _ = experiment.evaluate_ids(model, manifest, ids)
    print(
        "{} side: acc={} precision={} recall={} f1={} (n={})".format(
            args.side,
            metrics.format_metric(rep.accuracy),
            metrics.format_metric(rep.precision),
            metrics.format_metric(rep.recall),
            metrics.format_metric(rep.f1),
            rep.count,
        )
    )
    if args.out:
        import json

        Path(args.out).write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
        print(f"report written to {args.out}")
    return 0


def cmd_report(args) -> int:
    written = report.generate_report(args.run, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phonofuse",
        description="Multimodal phoneme-classifier training harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="standardize raw WAV files to 16 kHz / 4 s")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--gate", action="store_true", help="enable the RMS noise gate")
    p.add_argument("--gate-threshold-db", type=float, default=-40.0)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("extract", help="build an embedding dataset from prepped audio")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--backend", default=None)
    p.set_defaults(func=cmd_extract)

    for name, handler, help_text in (
        ("train", cmd_train, "run split -> k-fold CV (-> grid) -> test evaluation"),
        ("grid", cmd_grid, "run the hyperparameter grid search only"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--scheme", choices=SCHEME_CHOICES, default=None)
        p.add_argument(
            "--strategy", choices=models.STRATEGIES, default=None
        )
        p.add_argument("--out", default=None)
        p.set_defaults(func=handler)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--scheme", choices=SCHEME_CHOICES, default=data.SCHEME_A)
    p.add_argument("--side", choices=("train", "test"), default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render figures and tables from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        experiment.ConfigError,
        data.DatasetFormatError,
        audio.AudioFormatError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
