"""Diagonal Gaussians and the discrete sampling primitives.

The action pipeline manipulates factorized Gaussians: per-frame action
embeddings, and their differences (the action directions).  The difference of
two independent diagonal Gaussians is again diagonal Gaussian with subtracted
means and summed variances, which is what ``action_direction`` computes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import ConfigError

GUMBEL_EPS = 1e-20


@dataclass
class DiagonalGaussian:
    """Mean/variance parameterization; variance entries must stay positive.

    Tensors may carry arbitrary leading batch dimensions; the last dimension
    is the embedding dimension.
    """

    mean: torch.Tensor
    variance: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.variance.shape:
            raise ValueError(
                f"mean/variance shape mismatch: {tuple(self.mean.shape)} vs "
                f"{tuple(self.variance.shape)}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def detach(self) -> "DiagonalGaussian":
        return DiagonalGaussian(self.mean.detach(), self.variance.detach())


def action_direction(e_t: DiagonalGaussian, e_t1: DiagonalGaussian) -> DiagonalGaussian:
    """Distribution of ``e_t1 - e_t`` for independent diagonal Gaussians."""
    if e_t.mean.shape[-1] != e_t1.mean.shape[-1]:
        raise ValueError(
            f"embedding dims differ: {e_t.mean.shape[-1]} vs {e_t1.mean.shape[-1]}"
        )
    return DiagonalGaussian(
        mean=e_t1.mean - e_t.mean,
        variance=e_t1.variance + e_t.variance,
    )


def sample_gaussian(dist: DiagonalGaussian, noise: torch.Tensor) -> torch.Tensor:
    """Reparameterized sample ``mean + sqrt(variance) * noise``.

    Differentiable in both distribution parameters; the caller owns the noise
    so sampling is reproducible and testable.
    """
    if noise.shape != dist.mean.shape:
        raise ValueError(
            f"noise shape {tuple(noise.shape)} != mean shape {tuple(dist.mean.shape)}"
        )
    return dist.mean + torch.sqrt(dist.variance) * noise


def sample_standard_gumbel(
    shape, generator: torch.Generator | None = None, dtype=torch.float32
) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return -torch.log(-torch.log(u + GUMBEL_EPS) + GUMBEL_EPS)


def gumbel_softmax(
    logits: torch.Tensor,
    tau: float,
    gumbel_noise: torch.Tensor | None = None,
    hard: bool = True,
) -> torch.Tensor:
    """Gumbel-Softmax sample over the last dimension.

    With ``hard`` the forward value is the one-hot argmax while gradients are
    those of the soft sample (straight-through estimator).
    """
    if tau <= 0:
        raise ConfigError(f"gumbel temperature must be > 0, got {tau}")
    y = logits if gumbel_noise is None else logits + gumbel_noise
    y = torch.softmax(y / tau, dim=-1)
    if not hard:
        return y
    index = y.argmax(dim=-1, keepdim=True)
    y_hard = torch.zeros_like(y).scatter_(-1, index, 1.0)
    return y_hard - y.detach() + y
