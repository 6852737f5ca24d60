"""Optimization loop: the two-pass training step, centroid moving averages,
checkpointing with exact resume, and per-step metric logging.

The second pass re-encodes the reconstructed frames and re-runs the action
pipeline on them; the mutual-information and direction-matching terms couple
the two passes so the discrete labels stay recoverable from generated video.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .distributions import DiagonalGaussian, sample_gaussian, sample_standard_gumbel
from .losses import (
    LossTerms,
    PerceptualExtractor,
    action_matching_loss,
    feature_recon_loss,
    frame_pyramid,
    joint_probability_matrix,
    l1_loss,
    mutual_information_loss,
    perceptual_recon_loss,
    prior_kl_loss,
    total_loss,
)
from .model import PlayableModel, build_model
from .networks import CentroidBank

GALLERY_SIZE = 8


def update_centroids(
    bank: CentroidBank,
    labels: torch.Tensor,
    directions: torch.Tensor,
    rate: float | None = None,
) -> CentroidBank:
    """EMA update of action-direction centroids under hard assignments.

    Actions with no assigned sample in the batch keep their centroid.
    """
    rate = bank.update_rate if rate is None else rate
    if not (0 < rate <= 1):
        raise ValueError(f"centroid rate must be in (0, 1], got {rate}")
    labels = labels.reshape(-1)
    directions = directions.reshape(-1, directions.shape[-1]).detach()
    with torch.no_grad():
        for k in range(bank.num_actions):
            assigned = labels == k
            n = int(assigned.sum())
            if n == 0:
                continue
            batch_mean = directions[assigned].mean(dim=0)
            bank.centroids[k].mul_(1.0 - rate).add_(rate * batch_mean)
            bank.counts[k] += n
    return bank


@dataclass
class StepMetrics:
    step: int
    total: float
    terms: LossTerms

    def as_dict(self) -> dict:
        d = {"step": self.step, "total": self.total}
        d.update(self.terms.as_floats())
        return d


class Trainer:
    """Single-thread training driver over an in-memory sequence dataset.

    ``frames`` is a uint8 array [N, T, 3, H, W]; batches are drawn by a
    dedicated numpy generator whose state is checkpointed, so an interrupted
    run resumed from disk replays the exact same batch order and noise.
    """

    def __init__(
        self,
        model: PlayableModel,
        frames: np.ndarray,
        cfg: TrainConfig,
        out_dir: str | Path,
    ):
        cfg.validate()
        if frames.ndim != 5:
            raise ValueError(f"expected [N, T, C, H, W] frames, got {frames.shape}")
        if frames.shape[1] < cfg.sequence_length:
            raise ValueError(
                f"dataset sequences of length {frames.shape[1]} are shorter than "
                f"configured {cfg.sequence_length}"
            )
        self.model = model
        self.frames = frames[:, : cfg.sequence_length]
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
        self.extractor = PerceptualExtractor(
            in_channels=model.cfg.frame_channels, seed=cfg.seed
        )
        self.noise = torch.Generator().manual_seed(cfg.seed)
        self.sampler = np.random.default_rng(cfg.seed)
        self.step = 0
        self._metrics_path = self.out_dir / "metrics.jsonl"

    # ------------------------------------------------------------------

    def sample_batch(self) -> torch.Tensor:
        n = self.frames.shape[0]
        size = min(self.cfg.batch_size, n)
        idx = self.sampler.choice(n, size=size, replace=False)
        batch = torch.from_numpy(self.frames[np.sort(idx)].astype(np.float32) / 255.0)
        return batch

    def train_step(self, batch: torch.Tensor) -> StepMetrics:
        model, cfg = self.model, self.cfg
        model.train()
        out = model.forward_sequence(
            batch, mode="train", prefix=cfg.prefix_steps, generator=self.noise
        )
        steps = out.num_steps
        b = batch.shape[0]

        recon_pyramid = out.stacked_pyramids()
        target_pyramid = frame_pyramid(batch[:, 1:], model.cfg.decoder_scales)
        l1 = l1_loss(recon_pyramid, target_pyramid)
        rec_frames = perceptual_recon_loss(recon_pyramid, target_pyramid, self.extractor)

        # second pass: run encoder and action nets on the reconstructions
        recon = out.reconstructions
        flat_recon = recon.reshape(b * steps, *recon.shape[2:])
        recon_feats = model.encode(flat_recon)
        rec_features = feature_recon_loss(
            out.features[:, 1:].reshape(b * steps, *recon_feats.shape[1:]),
            recon_feats,
        )
        recon_emb = model.action_posterior(
            recon_feats.reshape(b, steps, *recon_feats.shape[1:])
        )
        # the first frame is never reconstructed; its real posterior anchors
        # the first reconstructed transition
        full_mean = torch.cat([out.embeddings.mean[:, :1], recon_emb.mean], dim=1)
        full_var = torch.cat([out.embeddings.variance[:, :1], recon_emb.variance], dim=1)
        recon_dirs = model.transition_distributions(
            DiagonalGaussian(full_mean, full_var)
        )
        eps = torch.randn(
            recon_dirs.mean.shape, generator=self.noise, dtype=recon_dirs.mean.dtype
        )
        d_hat = sample_gaussian(recon_dirs, eps)
        gumbel = sample_standard_gumbel(
            (b, steps, model.cfg.num_actions), self.noise, dtype=d_hat.dtype
        )
        recon_probs, _ = model.classifier(d_hat, model.cfg.tau, gumbel, mode="train")

        rec_actions = action_matching_loss(recon_dirs, out.directions)
        prior = prior_kl_loss(out.directions)
        if model.cfg.use_action_loss:
            joint = joint_probability_matrix(
                out.probs.reshape(-1, model.cfg.num_actions),
                recon_probs.reshape(-1, model.cfg.num_actions),
            )
            action_info = mutual_information_loss(joint)
        else:
            action_info = torch.zeros((), dtype=l1.dtype)

        terms = LossTerms(
            l1=l1,
            rec_frames=rec_frames,
            rec_features=rec_features,
            rec_actions=rec_actions,
            action_info=action_info,
            prior_kl=prior,
        )
        loss = total_loss(terms, cfg.weights)

        self.optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
        self.optimizer.step()

        update_centroids(
            model.centroid_bank,
            out.labels.argmax(dim=-1),
            out.direction_samples,
            cfg.centroid_rate,
        )
        self.step += 1
        detached = LossTerms(
            **{k: torch.as_tensor(v) for k, v in terms.as_floats().items()}
        )
        metrics = StepMetrics(step=self.step, total=float(loss.detach()), terms=detached)
        with self._metrics_path.open("a") as fh:
            fh.write(json.dumps(metrics.as_dict()) + "\n")
        return metrics

    # ------------------------------------------------------------------

    def _gallery(self) -> list[bytes]:
        frames = []
        for i in range(min(GALLERY_SIZE, self.frames.shape[0])):
            img = Image.fromarray(np.moveaxis(self.frames[i, 0], 0, -1))
            buf = io.BytesIO()
            img.save(buf, format="PNG")
            frames.append(buf.getvalue())
        return frames

    def save(self, path: str | Path) -> Path:
        from .config import to_dict

        return save_checkpoint(
            path,
            self.model,
            self.step,
            optimizer=self.optimizer,
            train_config=to_dict(self.cfg),
            torch_rng=self.noise.get_state(),
            sampler_state=self.sampler.bit_generator.state,
            gallery=self._gallery(),
        )

    def restore(self, path: str | Path) -> None:
        bundle = load_checkpoint(path)
        self.model.load_state_dict(bundle.model.state_dict())
        if bundle.optimizer_state is not None:
            self.optimizer.load_state_dict(bundle.optimizer_state)
        if bundle.torch_rng is not None:
            self.noise.set_state(bundle.torch_rng)
        if bundle.sampler_state is not None:
            self.sampler.bit_generator.state = bundle.sampler_state
        self.step = bundle.step

    def fit(self, progress: bool = False) -> Path:
        """Run to ``total_steps``, checkpointing periodically; returns the
        final checkpoint path."""
        cfg = self.cfg
        final = self.out_dir / "final.ckpt"
        while self.step < cfg.total_steps:
            metrics = self.train_step(self.sample_batch())
            if progress and (metrics.step % cfg.log_every == 0 or metrics.step == 1):
                print(
                    f"step {metrics.step:5d}  total {metrics.total:.4f}  "
                    f"l1 {float(metrics.terms.l1):.4f}  "
                    f"mi {float(metrics.terms.action_info):.4f}",
                    flush=True,
                )
            if metrics.step % cfg.checkpoint_every == 0 and metrics.step < cfg.total_steps:
                self.save(self.out_dir / f"step_{metrics.step:06d}.ckpt")
        return self.save(final)


def fit(
    frames: np.ndarray,
    cfg: TrainConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    progress: bool = False,
) -> Path:
    """Convenience wrapper: build a seeded model and train it to completion."""
    model = build_model(cfg.model, cfg.seed, cfg.centroid_rate)
    trainer = Trainer(model, frames, cfg, out_dir)
    if resume_from is not None:
        trainer.restore(resume_from)
    return trainer.fit(progress=progress)
