"""Training objectives: pixel/perceptual/feature reconstruction, the
mutual-information action loss, and the Gaussian matching/prior terms.

All functions are pure and differentiable so each can be finite-difference
checked in isolation.  Pyramids are lists of tensors, coarsest scale first,
with any leading batch/time dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn as nn

from .config import LossWeights
from .distributions import DiagonalGaussian

_LOG_TINY = 1e-30


class TrainingError(RuntimeError):
    """Raised when optimization hits an unrecoverable numeric problem."""


class PerceptualExtractor(nn.Module):
    """Frozen multi-scale convolutional feature maps.

    By default a randomly initialized, permanently frozen 3-stage pyramid: a
    fixed multi-scale projection with no external weight dependency.  Any
    module returning a list of feature maps can be plugged in instead (e.g.
    a pretrained backbone wrapper).
    """

    def __init__(self, in_channels: int = 3, widths: tuple[int, ...] = (16, 32, 64),
                 seed: int = 0):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            stages = []
            ch = in_channels
            for w in widths:
                stages.append(
                    nn.Sequential(nn.Conv2d(ch, w, 3, stride=2, padding=1), nn.ReLU())
                )
                ch = w
            self.stages = nn.ModuleList(stages)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):  # noqa: D102 - stays frozen
        return super().train(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps


def _flatten_steps(x: torch.Tensor, spatial_dims: int = 3) -> torch.Tensor:
    """Collapse leading batch/time dims so dim 0 indexes individual frames."""
    return x.reshape(-1, *x.shape[-spatial_dims:])


def l1_loss(recon_pyramid: list[torch.Tensor], target_pyramid: list[torch.Tensor]) -> torch.Tensor:
    """Mean absolute error, averaged per scale and then across scales."""
    if len(recon_pyramid) != len(target_pyramid):
        raise ValueError(
            f"pyramid depth mismatch: {len(recon_pyramid)} vs {len(target_pyramid)}"
        )
    per_scale = []
    for recon, target in zip(recon_pyramid, target_pyramid):
        if recon.shape != target.shape:
            raise ValueError(
                f"scale shape mismatch: {tuple(recon.shape)} vs {tuple(target.shape)}"
            )
        per_scale.append((recon - target).abs().mean())
    return torch.stack(per_scale).mean()


def perceptual_recon_loss(
    recon_pyramid: list[torch.Tensor],
    target_pyramid: list[torch.Tensor],
    extractor: PerceptualExtractor,
) -> torch.Tensor:
    """L1 distance between extractor feature maps of target and
    reconstruction, averaged over layers, resolutions, and time."""
    per_scale = []
    for recon, target in zip(recon_pyramid, target_pyramid):
        recon_maps = extractor(_flatten_steps(recon))
        target_maps = extractor(_flatten_steps(target))
        layer_losses = [
            (r - t).abs().mean() for r, t in zip(recon_maps, target_maps)
        ]
        per_scale.append(torch.stack(layer_losses).mean())
    return torch.stack(per_scale).mean()


def feature_recon_loss(features, recon_features) -> torch.Tensor:
    """Squared L2 distance between real and reconstructed frame features,
    averaged over steps.

    The gradient is blocked on the real-feature argument: only the
    reconstruction path is trained by this term.
    """
    if isinstance(features, (list, tuple)):
        features = torch.stack(list(features))
    if isinstance(recon_features, (list, tuple)):
        recon_features = torch.stack(list(recon_features))
    if features.shape != recon_features.shape:
        raise ValueError(
            f"feature shape mismatch: {tuple(features.shape)} vs "
            f"{tuple(recon_features.shape)}"
        )
    diff = features.detach() - recon_features
    per_step = diff.reshape(diff.shape[0], -1).pow(2).sum(dim=1)
    return per_step.mean()


def joint_probability_matrix(probs: torch.Tensor, recon_probs: torch.Tensor) -> torch.Tensor:
    """Empirical joint action distribution ``mean_i p_i outer phat_i``."""
    if probs.dim() == 1:
        probs = probs.unsqueeze(0)
        recon_probs = recon_probs.unsqueeze(0)
    probs = probs.reshape(-1, probs.shape[-1])
    recon_probs = recon_probs.reshape(-1, recon_probs.shape[-1])
    if probs.shape != recon_probs.shape:
        raise ValueError("probability batches must have matching shapes")
    if probs.shape[0] == 0:
        raise ValueError("empty probability batch")
    return torch.einsum("ni,nj->ij", probs, recon_probs) / probs.shape[0]


def mutual_information_loss(joint: torch.Tensor) -> torch.Tensor:
    """Negated mutual information of a joint distribution matrix.

    Zero-probability cells contribute exactly zero, so one-hot batches are
    handled without epsilon bias.  The value lies in [-ln K, 0].
    """
    if (joint < 0).any():
        raise ValueError("joint probability matrix has negative entries")
    row = joint.sum(dim=1, keepdim=True)
    col = joint.sum(dim=0, keepdim=True)
    outer = row * col
    mask = joint > 0
    log_ratio = torch.log(joint.clamp_min(_LOG_TINY)) - torch.log(
        outer.clamp_min(_LOG_TINY)
    )
    mi = torch.where(mask, joint * log_ratio, torch.zeros_like(joint)).sum()
    return -mi


def kl_diag_gaussians(q: DiagonalGaussian, p: DiagonalGaussian) -> torch.Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over the
    embedding dimension.  Leading batch dimensions are preserved."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ValueError(
            f"dimension mismatch: {q.mean.shape[-1]} vs {p.mean.shape[-1]}"
        )
    var_ratio = q.variance / p.variance
    mean_term = (p.mean - q.mean).pow(2) / p.variance
    per_dim = 0.5 * (var_ratio + mean_term - 1.0 - torch.log(var_ratio))
    return per_dim.sum(dim=-1)


def action_matching_loss(recon_directions: DiagonalGaussian, directions: DiagonalGaussian) -> torch.Tensor:
    """Mean KL between direction posteriors from reconstructed and real
    frames, KL(recon || real), over a batch of transitions."""
    if recon_directions.mean.numel() == 0:
        raise ValueError("empty batch of direction distributions")
    return kl_diag_gaussians(recon_directions, directions).mean()


def prior_kl_loss(directions: DiagonalGaussian) -> torch.Tensor:
    """Mean KL between direction posteriors and the unit Gaussian prior."""
    if directions.mean.numel() == 0:
        raise ValueError("empty batch of direction distributions")
    prior = DiagonalGaussian(
        torch.zeros_like(directions.mean), torch.ones_like(directions.variance)
    )
    return kl_diag_gaussians(directions, prior).mean()


@dataclass
class LossTerms:
    """The six objective components, unweighted."""

    l1: torch.Tensor
    rec_frames: torch.Tensor
    rec_features: torch.Tensor
    rec_actions: torch.Tensor
    action_info: torch.Tensor
    prior_kl: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            f.name: float(torch.as_tensor(getattr(self, f.name)).detach())
            for f in fields(self)
        }


def total_loss(terms: LossTerms, weights: LossWeights) -> torch.Tensor:
    """Weighted sum of all objective components.

    The two pixel terms enter with weight one; the rest use the configured
    weights.  Any non-finite component aborts with its name.
    """
    for f in fields(terms):
        value = getattr(terms, f.name)
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise TrainingError(f"loss component {f.name!r} is not finite: {value}")
    return (
        terms.l1
        + terms.rec_frames
        + weights.rec_features * terms.rec_features
        + weights.rec_actions * terms.rec_actions
        + weights.action_info * terms.action_info
        + weights.prior_kl * terms.prior_kl
    )


def frame_pyramid(frames: torch.Tensor, scales: int) -> list[torch.Tensor]:
    """Downsample frames into a target pyramid, coarsest first.

    ``frames`` may carry leading batch/time dims; averaging pools by 2 per
    level so the pyramid matches the decoder head resolutions.
    """
    lead = frames.shape[:-3]
    flat = _flatten_steps(frames)
    levels = [flat]
    for _ in range(scales - 1):
        levels.append(torch.nn.functional.avg_pool2d(levels[-1], 2))
    levels = levels[::-1]
    return [lvl.reshape(*lead, *lvl.shape[-3:]) for lvl in levels]
