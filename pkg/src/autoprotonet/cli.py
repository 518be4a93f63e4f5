"""Command-line entry points: train, eval, serve, synth.

Training and evaluation run locally in-process; `serve` starts the HTTP
refinement service. Config files are JSON; every training field can also
be overridden by a flag. When --config is omitted, train honors
$AUTOPROTONET_TRAIN_CONFIG and serve honors $AUTOPROTONET_SERVICE_CONFIG.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__

TRAIN_CONFIG_ENV = "AUTOPROTONET_TRAIN_CONFIG"
SERVICE_CONFIG_ENV = "AUTOPROTONET_SERVICE_CONFIG"


class CliError(RuntimeError):
    pass


def _add_dataset_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", metavar="DIR", help="directory dataset (class subdirectories)")
    parser.add_argument(
        "--split-manifest", metavar="FILE", help="JSON mapping class name -> split"
    )
    parser.add_argument(
        "--synthetic", action="store_true", help="use the built-in synthetic shape benchmark"
    )
    parser.add_argument("--synthetic-train-classes", type=int, default=20)
    parser.add_argument("--synthetic-val-classes", type=int, default=5)
    parser.add_argument("--synthetic-test-classes", type=int, default=5)
    parser.add_argument("--images-per-class", type=int, default=50)
    parser.add_argument("--data-seed", type=int, default=0)
    parser.add_argument(
        "--resolution", type=int, nargs=2, default=(32, 32), metavar=("H", "W")
    )


def _load_splits(args) -> dict:
    from .data import load_directory_dataset, synthetic_benchmark

    if args.synthetic:
        return synthetic_benchmark(
            num_train=args.synthetic_train_classes,
            num_val=args.synthetic_val_classes,
            num_test=args.synthetic_test_classes,
            images_per_class=args.images_per_class,
            resolution=tuple(args.resolution),
            seed=args.data_seed,
        )
    if not args.data:
        raise CliError("provide --data DIR or --synthetic")
    return load_directory_dataset(
        args.data, resolution=tuple(args.resolution), split_manifest=args.split_manifest
    )


def _build_train_parser(sub) -> None:
    p = sub.add_parser("train", help="train a model and write checkpoints")
    p.add_argument("--config", metavar="FILE", help="training config JSON")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument("--init-checkpoint", metavar="FILE", help="warm-start weights")
    _add_dataset_args(p)
    p.add_argument("--recipe", choices=("protonet", "autoprotonet", "autoencoder-pretrain", "autoprotonet-from-pretrained"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--episodes-per-epoch", type=int)
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.add_argument("--query-count", type=int)
    p.add_argument("--lam", type=float, help="reconstruction loss weight")
    p.add_argument("--learning-rate", type=float)
    p.add_argument(
        "--lr-milestone",
        action="append",
        metavar="EPOCH:RATE",
        help="repeatable; replaces the default schedule",
    )
    p.add_argument("--lr-decay-every", type=int)
    p.add_argument("--lr-decay-factor", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--tasks-per-batch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--val-episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--desk", action="store_true", help="start from the fast desk preset")
    p.add_argument("--channels", type=int, default=64, help="conv channels per block")


def _training_config(args):
    from .training import TrainingConfig, desk_config

    config_path = args.config or os.environ.get(TRAIN_CONFIG_ENV)
    if config_path:
        config = TrainingConfig.from_json_file(config_path)
    elif args.desk:
        config = desk_config()
    else:
        config = TrainingConfig()

    overrides = {}
    for name in (
        "recipe",
        "epochs",
        "episodes_per_epoch",
        "way",
        "shot",
        "query_count",
        "lam",
        "learning_rate",
        "lr_decay_every",
        "lr_decay_factor",
        "momentum",
        "weight_decay",
        "tasks_per_batch",
        "batch_size",
        "val_episodes",
        "seed",
    ):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.lr_milestone:
        milestones = []
        for item in args.lr_milestone:
            try:
                epoch, rate = item.split(":")
                milestones.append((int(epoch), float(rate)))
            except ValueError:
                raise CliError(f"bad --lr-milestone {item!r}, expected EPOCH:RATE")
        overrides["lr_milestones"] = tuple(milestones)
    if overrides.get("lr_decay_every") is not None and "lr_milestones" not in overrides:
        overrides["lr_milestones"] = ()
    if not overrides:
        return config
    from dataclasses import asdict

    merged = asdict(config)
    merged["lr_milestones"] = tuple(tuple(m) for m in merged["lr_milestones"])
    merged.update(overrides)
    return TrainingConfig.from_dict(merged)


def _cmd_train(args) -> int:
    from .network import ArchitectureConfig, load_checkpoint, save_checkpoint
    from .training import train

    config = _training_config(args)
    splits = _load_splits(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    initial_model = None
    arch = None
    if args.init_checkpoint:
        initial_model, _ = load_checkpoint(args.init_checkpoint)
    else:
        arch = ArchitectureConfig(
            input_resolution=splits["meta-train"].resolution, channels_per_block=args.channels
        )

    model, log = train(
        splits, config, arch=arch, initial_model=initial_model, checkpoint_dir=out
    )
    save_checkpoint(model, out / "final.ckpt", metadata={"recipe": config.recipe})
    log.write_ndjson(out / "training_log.ndjson")
    (out / "training_config.json").write_text(config.to_json() + "\n", encoding="utf-8")
    if log.validation_records:
        last = log.validation_records[-1]
        if "val_accuracy" in last:
            print(f"final validation accuracy: {last['val_accuracy']:.4f}")
    print(f"checkpoints and log written to {out}")
    return 0


def _build_eval_parser(sub) -> None:
    p = sub.add_parser("eval", help="episodic evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True, metavar="FILE")
    _add_dataset_args(p)
    p.add_argument("--split", default="meta-test", help="which split to evaluate")
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=1)
    p.add_argument("--query-count", type=int, default=15)
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--losses", action="store_true", help="also report mean losses")
    p.add_argument("--json", metavar="FILE", help="write the full report as JSON")
    p.add_argument("--csv", metavar="FILE", help="write per-episode accuracies as CSV")


def _cmd_eval(args) -> int:
    from .data import EpisodeSpec
    from .evaluation import evaluate_episodic
    from .network import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    splits = _load_splits(args)
    if args.split not in splits:
        raise CliError(f"split {args.split!r} not in dataset (has {sorted(splits)})")
    spec = EpisodeSpec(way=args.way, shot=args.shot, query_count=args.query_count)
    report = evaluate_episodic(
        model,
        splits[args.split],
        spec,
        num_episodes=args.episodes,
        seed=args.seed,
        include_losses=args.losses,
    )
    print(report.summary())
    if args.losses and report.mean_losses is not None:
        print(
            f"mean losses: classification {report.mean_losses.classification:.4f}, "
            f"reconstruction {report.mean_losses.reconstruction:.4f}"
        )
    if args.json:
        report.write_json(args.json)
    if args.csv:
        report.write_csv(args.csv)
    return 0


def _build_serve_parser(sub) -> None:
    p = sub.add_parser("serve", help="start the refinement HTTP service")
    p.add_argument("--config", metavar="FILE", help="service config JSON")
    p.add_argument("--models", metavar="DIR", help="directory of .ckpt files")
    p.add_argument("--sessions", metavar="DIR", help="directory for persisted sessions")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument(
        "--cors-origin", action="append", metavar="ORIGIN", help="repeatable CORS allowlist entry"
    )
    p.add_argument("--max-sessions", type=int)


def _service_config(args):
    from .service import ServiceConfig

    config_path = args.config or os.environ.get(SERVICE_CONFIG_ENV)
    base = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            base = json.load(fh)
    if args.models:
        base["model_dir"] = args.models
    if args.sessions:
        base["session_dir"] = args.sessions
    if args.host:
        base["host"] = args.host
    if args.port is not None:
        base["port"] = args.port
    if args.cors_origin:
        base["cors_origins"] = tuple(args.cors_origin)
    if args.max_sessions is not None:
        base["max_sessions"] = args.max_sessions
    if "model_dir" not in base:
        raise CliError("provide --models DIR (or model_dir in the service config)")
    return ServiceConfig.from_dict(base)


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _service_config(args)
    app = create_app(config)
    print(f"serving models from {config.model_dir} on http://{config.host}:{config.port}")
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


def _build_synth_parser(sub) -> None:
    p = sub.add_parser("synth", help="write the synthetic shape benchmark as a PNG tree")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--classes", type=int, default=30)
    p.add_argument("--images-per-class", type=int, default=50)
    p.add_argument("--resolution", type=int, nargs=2, default=(32, 32), metavar=("H", "W"))
    p.add_argument("--seed", type=int, default=0)


def _cmd_synth(args) -> int:
    from .data import generate_synthetic_dataset, save_dataset_tree

    dataset = generate_synthetic_dataset(
        num_classes=args.classes,
        images_per_class=args.images_per_class,
        resolution=tuple(args.resolution),
        seed=args.seed,
    )
    save_dataset_tree(dataset, args.out)
    print(f"wrote {dataset.num_classes} classes x {args.images_per_class} images to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autoprotonet",
        description="Few-shot image classifier with decodable, human-refinable prototypes.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _build_train_parser(sub)
    _build_eval_parser(sub)
    _build_serve_parser(sub)
    _build_synth_parser(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    commands = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "serve": _cmd_serve,
        "synth": _cmd_synth,
    }
    try:
        return commands[args.command](args)
    except (CliError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # checkpoint/dataset errors carry their own messages
        from .data import DatasetError
        from .network import CheckpointError

        if isinstance(exc, (DatasetError, CheckpointError)):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":
    raise SystemExit(main())
