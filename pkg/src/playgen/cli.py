"""Command-line entry point: data generation, training, evaluation, scripted
rollout, and serving.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  All randomness is
governed by ``--seed`` (which overrides the seed in the config file).
``PLAYGEN_DATA_ROOT`` provides the default location for generated datasets.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import (
    ConfigError,
    EnvSpec,
    TrainConfig,
    apply_overrides,
    env_spec_from_dict,
    load_yaml,
    to_dict,
    train_config_from_dict,
)

DATA_ROOT_ENV = "PLAYGEN_DATA_ROOT"


def _data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


def _load_cfg(path: str | None, overrides: list[str], builder, default):
    data = load_yaml(path) if path else {}
    data = apply_overrides(data, overrides or [])
    return builder(data) if data or path else default()


def cmd_gen_data(args: argparse.Namespace) -> int:
    from . import synthenv

    spec = _load_cfg(args.config, args.set, env_spec_from_dict, EnvSpec)
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    out = Path(args.out) if args.out else _data_root() / f"synth-{synthenv.spec_hash(spec)}"
    synthenv.generate_dataset(spec, out)
    counts = ", ".join(f"{k}={v}" for k, v in sorted(spec.sequences.items()))
    print(f"dataset written to {out} ({counts})")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from . import synthenv, train

    cfg = _load_cfg(args.config, args.set, train_config_from_dict, TrainConfig)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    dataset = Path(args.dataset)
    sequences = synthenv.load_dataset(dataset, "train")
    frames = synthenv.frames_tensor(sequences)
    out = Path(args.out) if args.out else Path("runs") / "train"
    final = train.fit(frames, cfg, out, resume_from=args.resume, progress=True)
    print(f"final checkpoint: {final}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from . import evalsuite, synthenv
    from .checkpoint import load_checkpoint

    bundle = load_checkpoint(args.checkpoint)
    sequences = synthenv.load_dataset(args.dataset, args.split)
    template = None
    try:
        template = synthenv.load_sprite(args.dataset)
    except synthenv.DatasetError:
        pass
    report = evalsuite.evaluate_sequences(
        bundle.model, sequences, template=template, classifier_seed=args.seed or 0
    )
    text = report.to_text(Path(args.checkpoint).stem)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        (out / "report.txt").write_text(text + "\n")
        if args.plots:
            evalsuite.plot_histograms(report, out / "displacements.png")
        print(f"report written to {out}")
    return 0


def cmd_rollout(args: argparse.Namespace) -> int:
    import torch

    from .checkpoint import load_checkpoint
    from .imaging import load_frame_png, save_frame_png

    try:
        actions = [int(a) for a in args.actions.split(",") if a != ""]
    except ValueError:
        raise ConfigError(f"--actions must be comma-separated integers, got {args.actions!r}")
    if not actions:
        raise ConfigError("--actions is empty")
    bundle = load_checkpoint(args.checkpoint)
    model = bundle.model
    model.eval()
    if args.frame:
        frame = torch.from_numpy(load_frame_png(args.frame)).unsqueeze(0)
    else:
        if not bundle.gallery:
            raise ConfigError("checkpoint has no gallery; provide --frame")
        from .imaging import png_bytes_to_frame

        frame = torch.from_numpy(png_bytes_to_frame(bundle.gallery[0])).unsqueeze(0)
    with torch.no_grad():
        out = model.forward_sequence(
            frame.unsqueeze(1), mode="play", actions_override=actions
        )
        frames = out.reconstructions[0].numpy()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames, start=1):
        save_frame_png(f, out_dir / f"frame_{i:03d}.png")
    print(f"wrote {len(frames)} frames to {out_dir}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    path = Path(args.checkpoint)
    ckpt_dir = path.parent if path.is_file() else path
    app = create_app(ckpt_dir, ttl_seconds=args.ttl)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="playgen",
        description="Unsupervised playable video generation toolkit",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", help="environment spec YAML")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--config", help="training config YAML")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="run directory for checkpoints and logs")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="directory for report files")
    p.add_argument("--plots", action="store_true", help="write displacement plots")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="generate frames for a scripted action list")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--actions", required=True, help="comma-separated action indices")
    p.add_argument("--out", required=True)
    p.add_argument("--frame", help="initial frame PNG (default: checkpoint gallery)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("serve", help="run the interactive play service")
    p.add_argument("--checkpoint", required=True, help="checkpoint file or directory")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ttl", type=float, default=600.0, help="session idle TTL seconds")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surfaced with context, still a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
