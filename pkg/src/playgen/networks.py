"""The four networks: frame encoder, action nets, recurrent dynamics, decoder.

Everything is intentionally small: the package targets desk-scale runs on a
CPU or a single commodity accelerator, minutes not days.  GroupNorm is used
throughout so outputs are independent of batch composition, which keeps the
determinism contracts (same input, same output) trivially true in eval and
train mode alike.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .distributions import DiagonalGaussian, gumbel_softmax


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(num_groups=min(8, channels), num_channels=channels)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = _norm(channels)
        self.norm2 = _norm(channels)

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.relu(x + h)


class FrameEncoder(nn.Module):
    """Maps a frame [C, H, W] to a feature grid [C_f, H/r, W/r]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        base = cfg.base_channels
        layers: list[nn.Module] = [
            nn.Conv2d(cfg.frame_channels, base, 3, padding=1),
            _norm(base),
            nn.ReLU(inplace=True),
        ]
        ch = base
        for _ in range(cfg.num_downsamples):
            out = min(2 * ch, 4 * base)
            layers += [
                nn.Conv2d(ch, out, 3, stride=2, padding=1),
                _norm(out),
                nn.ReLU(inplace=True),
                ResidualBlock(out),
            ]
            ch = out
        # normalized output pins the feature scale, keeping the
        # feature-reconstruction distance meaningful across training
        layers += [nn.Conv2d(ch, cfg.feature_channels, 1), _norm(cfg.feature_channels)]
        self.net = nn.Sequential(*layers)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.net(frames)


class ActionEmbeddingNet(nn.Module):
    """Posterior over the per-frame action embedding.

    A shallow strided conv stack (with coordinate channels) reduces the
    feature grid while keeping it position-sensitive: global pooling here
    would erase exactly the spatial information that consecutive-frame
    differences need to encode.  Variances are clamped to the configured
    range.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        width = 32
        self.convs = nn.Sequential(
            nn.Conv2d(cfg.feature_channels + 2, width, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        gh = (cfg.grid_height + 3) // 4
        gw = (cfg.grid_width + 3) // 4
        hidden = max(64, 8 * cfg.action_dim)
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(width * gh * gw, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, 2 * cfg.action_dim),
        )
        ys = torch.linspace(-1.0, 1.0, cfg.grid_height)
        xs = torch.linspace(-1.0, 1.0, cfg.grid_width)
        yy, xx = torch.meshgrid(ys, xs, indexing="ij")
        self.register_buffer("coords", torch.stack([yy, xx])[None])
        self.action_dim = cfg.action_dim
        self.log_var_min = float(torch.log(torch.tensor(cfg.var_min)))
        self.log_var_max = float(torch.log(torch.tensor(cfg.var_max)))
        # start with small posterior variance so early direction samples are
        # mean-dominated; otherwise sampling noise swamps the embeddings and
        # their means never receive useful gradient
        with torch.no_grad():
            self.head[-1].bias[self.action_dim:].fill_(-4.0)

    def forward(self, features: torch.Tensor) -> DiagonalGaussian:
        lead = features.shape[:-3]
        flat = features.reshape(-1, *features.shape[-3:])
        coords = self.coords.expand(flat.shape[0], -1, -1, -1).to(flat.dtype)
        h = self.convs(torch.cat([flat, coords], dim=1))
        out = self.head(h).reshape(*lead, 2 * self.action_dim)
        mean, log_var = out.split(self.action_dim, dim=-1)
        log_var = log_var.clamp(self.log_var_min, self.log_var_max)
        return DiagonalGaussian(mean=mean, variance=torch.exp(log_var))


class ActionClassifier(nn.Module):
    """Single linear layer from an action direction to K action logits."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.linear = nn.Linear(cfg.action_dim, cfg.num_actions)
        self.hard = cfg.hard_sampling

    def forward(
        self,
        direction: torch.Tensor,
        tau: float,
        gumbel_noise: torch.Tensor | None = None,
        mode: str = "train",
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (probabilities, one-hot label) over the last dimension.

        Probabilities are the noise-free tempered softmax.  In train mode the
        label is a straight-through Gumbel sample; in eval mode it is the
        noise-free argmax.
        """
        logits = self.linear(direction)
        probs = torch.softmax(logits / tau, dim=-1)
        if mode == "eval":
            index = probs.argmax(dim=-1, keepdim=True)
            label = torch.zeros_like(probs).scatter_(-1, index, 1.0)
        elif mode == "train":
            label = gumbel_softmax(logits, tau, gumbel_noise, hard=self.hard)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return probs, label


class CentroidBank(nn.Module):
    """Expected action direction per discrete action, tracked by EMA.

    Centroids are buffers, not parameters: they are never gradient-trained,
    only updated by the trainer's moving-average rule.  Counters record how
    many samples each action has absorbed.
    """

    def __init__(self, num_actions: int, action_dim: int, update_rate: float = 0.05,
                 init_scale: float = 0.1):
        super().__init__()
        if num_actions < 2:
            raise ValueError("need at least 2 actions")
        self.update_rate = update_rate
        self.register_buffer("centroids", init_scale * torch.randn(num_actions, action_dim))
        self.register_buffer("counts", torch.zeros(num_actions, dtype=torch.long))

    @property
    def num_actions(self) -> int:
        return self.centroids.shape[0]


def variability_embedding(
    direction: torch.Tensor, probs: torch.Tensor, centroids: torch.Tensor
) -> torch.Tensor:
    """Soft residual between a direction and its action centroid:
    ``sum_k p_k (d - c_k)``."""
    if probs.shape[-1] != centroids.shape[0]:
        raise ValueError(
            f"probs have {probs.shape[-1]} actions, bank has {centroids.shape[0]}"
        )
    total = probs.sum(dim=-1, keepdim=True)
    return total * direction - probs @ centroids


class ConvLSTMCell(nn.Module):
    def __init__(self, in_channels: int, hidden_channels: int, kernel: int = 3):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(
            in_channels + hidden_channels, 4 * hidden_channels, kernel, padding=kernel // 2
        )
        # positive forget bias: remember by default early in training
        nn.init.zeros_(self.gates.bias)
        with torch.no_grad():
            self.gates.bias[hidden_channels: 2 * hidden_channels].fill_(1.0)

    def forward(self, x, h, c):
        gates = self.gates(torch.cat([x, h], dim=1))
        i, f, g, o = gates.chunk(4, dim=1)
        c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_next = torch.sigmoid(o) * torch.tanh(c_next)
        return h_next, c_next


class DynamicsNetwork(nn.Module):
    """Convolutional-LSTM stack advancing the environment state.

    The discrete action and the variability embedding are broadcast over the
    feature grid and concatenated channel-wise with the frame features.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        in_ch = cfg.feature_channels + cfg.num_actions + cfg.action_dim
        self.cells = nn.ModuleList(
            ConvLSTMCell(in_ch if layer == 0 else cfg.recurrent_channels,
                         cfg.recurrent_channels)
            for layer in range(cfg.recurrent_layers)
        )

    def forward(self, state, features, action, variability):
        b, _, gh, gw = features.shape
        a_map = action.view(b, -1, 1, 1).expand(-1, -1, gh, gw)
        v_map = variability.view(b, -1, 1, 1).expand(-1, -1, gh, gw)
        x = torch.cat([features, a_map, v_map], dim=1)
        next_layers = []
        for cell, (h, c) in zip(self.cells, state):
            h, c = cell(x, h, c)
            next_layers.append((h, c))
            x = h
        return next_layers


class FrameDecoder(nn.Module):
    """Decodes the recurrent state into a pyramid of frames.

    One sigmoid head per scale, coarsest first, so every output pixel is
    bounded to [0, 1].
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n_up = cfg.num_downsamples
        widths = [max(cfg.base_channels, 2 * cfg.base_channels // 2 ** i)
                  for i in range(n_up + 1)]
        self.stem = nn.Sequential(
            nn.Conv2d(cfg.recurrent_channels, widths[0], 3, padding=1),
            _norm(widths[0]),
            nn.ReLU(inplace=True),
        )
        self.ups = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(widths[i], widths[i + 1], 3, padding=1),
                _norm(widths[i + 1]),
                nn.ReLU(inplace=True),
            )
            for i in range(n_up)
        )
        self._head_offset = (n_up + 1) - cfg.decoder_scales
        self.heads = nn.ModuleList(
            nn.Conv2d(widths[i], cfg.frame_channels, 3, padding=1)
            for i in range(self._head_offset, n_up + 1)
        )

    def forward(self, state) -> list[torch.Tensor]:
        x = self.stem(state[-1][0])
        outputs = []
        for level in range(len(self.ups) + 1):
            if level >= self._head_offset:
                outputs.append(torch.sigmoid(self.heads[level - self._head_offset](x)))
            if level < len(self.ups):
                x = F.interpolate(x, scale_factor=2, mode="nearest")
                x = self.ups[level](x)
        return outputs
