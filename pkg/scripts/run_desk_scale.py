#!/usr/bin/env python3
"""End-to-end desk-scale experiment: generate the default environment, train
the full model and the (no variability, no action-information) ablation on
the same seed, evaluate both on held-out sequences, and print the reports.

Roughly 30-80 minutes on a 2-core CPU; pass --steps to shorten exploratory
runs.
"""

import argparse
import time
from pathlib import Path

import torch

from playgen.config import EnvSpec, LossWeights, TrainConfig
from playgen.evalsuite import evaluate_sequences, plot_histograms
from playgen.model import build_model
from playgen.synthenv import frames_tensor, generate_dataset, load_dataset, load_sprite
from playgen.train import Trainer


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/desk-scale", help="output directory")
    parser.add_argument("--steps", type=int, default=1200)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--skip-ablation", action="store_true")
    parser.add_argument("--plots", action="store_true")
    args = parser.parse_args()

    torch.set_num_threads(max(1, torch.get_num_threads()))
    root = Path(args.out)
    data_dir = root / "data"
    if not (data_dir / "dataset.json").exists():
        print("generating default environment dataset ...")
        generate_dataset(EnvSpec(), data_dir)
    frames = frames_tensor(load_dataset(data_dir, "train"))
    test_seqs = load_dataset(data_dir, "test")
    sprite = load_sprite(data_dir)

    variants = {"full": {}}
    if not args.skip_ablation:
        variants["ablated"] = {"use_variability": False, "use_action_loss": False}

    reports = {}
    for name, switches in variants.items():
        cfg = TrainConfig(
            total_steps=args.steps,
            seed=args.seed,
            weights=LossWeights(
                rec_features=1e-3, rec_actions=1.0, action_info=1.0, prior_kl=1e-3
            ),
        )
        for key, value in switches.items():
            setattr(cfg.model, key, value)
        print(f"== training {name} ({cfg.total_steps} steps, seed {cfg.seed})")
        model = build_model(cfg.model, cfg.seed)
        trainer = Trainer(model, frames, cfg, root / name)
        t0 = time.time()
        trainer.fit(progress=True)
        print(f"{name}: {(time.time() - t0) / 60:.1f} minutes")
        model.eval()
        report = evaluate_sequences(model, test_seqs, template=sprite)
        reports[name] = report
        (root / name / "report.json").write_text(report.to_json())
        if args.plots:
            plot_histograms(report, root / name / "displacements.png")

    for name, report in reports.items():
        print()
        print(report.to_text(name))


if __name__ == "__main__":
    main()
