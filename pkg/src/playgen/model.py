"""Sequence-level orchestration of the encoder / action / dynamics / decoder
networks.

Training mode runs the full pipeline on a real sequence: frame features are
encoded once, per-transition action distributions are inferred from
consecutive features, and the recurrent state is rolled forward from the
learned initial state.  Dynamics input features come from real frames for the
first ``prefix`` steps and from the model's own reconstructions afterwards,
so the network sees both regimes it will face.

Play mode is the interactive path: one initial frame, one user-chosen action
per step, variability fixed at zero, fully autoregressive.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ConfigError, ModelConfig
from .distributions import (
    DiagonalGaussian,
    action_direction,
    sample_gaussian,
    sample_standard_gumbel,
)
from .networks import (
    ActionClassifier,
    ActionEmbeddingNet,
    CentroidBank,
    DynamicsNetwork,
    FrameDecoder,
    FrameEncoder,
    variability_embedding,
)


class InputError(ValueError):
    """Raised when runtime inputs (not config) violate a contract."""


@dataclass
class EnvironmentState:
    """Per-layer (hidden, cell) grids of the recurrent dynamics."""

    layers: list[tuple[torch.Tensor, torch.Tensor]]

    @property
    def batch_size(self) -> int:
        return self.layers[0][0].shape[0]

    def detach(self) -> "EnvironmentState":
        return EnvironmentState([(h.detach(), c.detach()) for h, c in self.layers])

    def clone(self) -> "EnvironmentState":
        return EnvironmentState([(h.clone(), c.clone()) for h, c in self.layers])


@dataclass
class ActionResult:
    """Per-transition action quantities: probabilities, one-hot label,
    sampled direction, and variability embedding."""

    probs: torch.Tensor
    label: torch.Tensor
    direction: torch.Tensor
    variability: torch.Tensor


@dataclass
class StepRecord:
    features: torch.Tensor
    action: ActionResult
    state: EnvironmentState
    pyramid: list[torch.Tensor]
    feature_source: str


@dataclass
class SequenceOutput:
    frames: torch.Tensor
    features: torch.Tensor
    embeddings: DiagonalGaussian | None
    directions: DiagonalGaussian | None
    direction_samples: torch.Tensor
    probs: torch.Tensor
    labels: torch.Tensor
    variability: torch.Tensor
    states: list[EnvironmentState]
    pyramids: list[list[torch.Tensor]]
    feature_sources: list[str]

    @property
    def num_steps(self) -> int:
        return len(self.pyramids)

    @property
    def reconstructions(self) -> torch.Tensor:
        """Finest-scale reconstructed frames, stacked [B, steps, C, H, W]."""
        return torch.stack([p[-1] for p in self.pyramids], dim=1)

    def stacked_pyramids(self) -> list[torch.Tensor]:
        """Per-scale stacks [B, steps, C, h, w], coarsest first."""
        scales = len(self.pyramids[0])
        return [
            torch.stack([p[s] for p in self.pyramids], dim=1) for s in range(scales)
        ]

    def step_records(self) -> list[StepRecord]:
        records = []
        for i in range(self.num_steps):
            action = ActionResult(
                probs=self.probs[:, i],
                label=self.labels[:, i],
                direction=self.direction_samples[:, i],
                variability=self.variability[:, i],
            )
            feats = self.features[:, min(i, self.features.shape[1] - 1)]
            records.append(
                StepRecord(
                    features=feats,
                    action=action,
                    state=self.states[i],
                    pyramid=self.pyramids[i],
                    feature_source=self.feature_sources[i],
                )
            )
        return records


class PlayableModel(nn.Module):
    """End-to-end playable video model."""

    def __init__(self, cfg: ModelConfig, centroid_rate: float = 0.05):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = FrameEncoder(cfg)
        self.action_embedding = ActionEmbeddingNet(cfg)
        self.classifier = ActionClassifier(cfg)
        self.centroid_bank = CentroidBank(cfg.num_actions, cfg.action_dim, centroid_rate)
        self.dynamics = DynamicsNetwork(cfg)
        self.decoder = FrameDecoder(cfg)
        self.initial_state_param = nn.Parameter(
            0.02
            * torch.randn(cfg.recurrent_layers, 2, cfg.recurrent_channels,
                          cfg.grid_height, cfg.grid_width)
        )

    # ------------------------------------------------------------------
    # single-step ops

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.dim() != 4:
            raise ConfigError(f"expected [B, C, H, W] frames, got {tuple(frames.shape)}")
        expect = (self.cfg.frame_channels, self.cfg.height, self.cfg.width)
        if tuple(frames.shape[1:]) != expect:
            raise ConfigError(
                f"frame shape {tuple(frames.shape[1:])} does not match config {expect}"
            )
        return self.encoder(frames)

    def action_posterior(self, features: torch.Tensor) -> DiagonalGaussian:
        return self.action_embedding(features)

    def init_state(self, batch_size: int) -> EnvironmentState:
        layers = []
        for layer in range(self.cfg.recurrent_layers):
            h0 = self.initial_state_param[layer, 0].unsqueeze(0).expand(
                batch_size, -1, -1, -1
            )
            c0 = self.initial_state_param[layer, 1].unsqueeze(0).expand(
                batch_size, -1, -1, -1
            )
            layers.append((h0, c0))
        return EnvironmentState(layers)

    def dynamics_step(
        self,
        state: EnvironmentState,
        features: torch.Tensor,
        action: torch.Tensor,
        variability: torch.Tensor,
    ) -> EnvironmentState:
        return EnvironmentState(
            self.dynamics(state.layers, features, action, variability)
        )

    def decode(self, state: EnvironmentState) -> list[torch.Tensor]:
        return self.decoder(state.layers)

    def one_hot(self, action_index: torch.Tensor) -> torch.Tensor:
        if ((action_index < 0) | (action_index >= self.cfg.num_actions)).any():
            raise InputError(
                f"action indices must lie in [0, {self.cfg.num_actions})"
            )
        return torch.nn.functional.one_hot(
            action_index.long(), self.cfg.num_actions
        ).to(self.initial_state_param.dtype)

    # ------------------------------------------------------------------
    # sequence-level paths

    def _frame_batch(self, frames) -> torch.Tensor:
        if isinstance(frames, (list, tuple)):
            frames = torch.stack(list(frames), dim=-4)
        if frames.dim() == 3:
            frames = frames[None, None]
        elif frames.dim() == 4:
            frames = frames[None]
        if frames.dim() != 5:
            raise ConfigError(
                f"expected frames [B, T, C, H, W], got {tuple(frames.shape)}"
            )
        return frames

    def transition_distributions(
        self, embeddings: DiagonalGaussian
    ) -> DiagonalGaussian:
        """Action-direction distributions for consecutive frame embeddings.

        ``embeddings`` holds per-frame posteriors stacked on dim 1.
        """
        prev = DiagonalGaussian(embeddings.mean[:, :-1], embeddings.variance[:, :-1])
        nxt = DiagonalGaussian(embeddings.mean[:, 1:], embeddings.variance[:, 1:])
        return action_direction(prev, nxt)

    def forward_sequence(
        self,
        frames,
        mode: str = "train",
        prefix: int | None = None,
        actions_override: list[int] | torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> SequenceOutput:
        frames = self._frame_batch(frames)
        if mode == "train":
            return self._forward_train(frames, prefix, generator)
        if mode == "play":
            return self._forward_play(frames, actions_override)
        raise ValueError(f"unknown mode {mode!r}")

    def _forward_train(
        self, frames: torch.Tensor, prefix: int | None, generator
    ) -> SequenceOutput:
        b, t = frames.shape[:2]
        if t < 2:
            raise InputError("training sequences need at least 2 frames")
        prefix = t if prefix is None else prefix
        if not (1 <= prefix <= t):
            raise InputError(f"prefix must be in [1, {t}], got {prefix}")
        cfg = self.cfg

        feats = self.encode(frames.reshape(b * t, *frames.shape[2:]))
        feats = feats.reshape(b, t, *feats.shape[1:])
        emb = self.action_posterior(feats)
        directions = self.transition_distributions(emb)

        eps = torch.randn(
            directions.mean.shape, generator=generator, dtype=directions.mean.dtype
        )
        d_sample = sample_gaussian(directions, eps)
        gumbel = sample_standard_gumbel(
            (b, t - 1, cfg.num_actions), generator, dtype=d_sample.dtype
        )
        probs, labels = self.classifier(d_sample, cfg.tau, gumbel, mode="train")
        if not cfg.use_gumbel:
            labels = probs
        if cfg.use_variability:
            variability = variability_embedding(
                d_sample, probs, self.centroid_bank.centroids
            )
        else:
            variability = torch.zeros_like(d_sample)

        state = self.init_state(b)
        states: list[EnvironmentState] = []
        pyramids: list[list[torch.Tensor]] = []
        sources: list[str] = []
        prev_recon: torch.Tensor | None = None
        for i in range(t - 1):
            if i < prefix:
                step_feat = feats[:, i]
                sources.append("real")
            else:
                step_feat = self.encode(prev_recon)
                sources.append("recon")
            state = self.dynamics_step(state, step_feat, labels[:, i], variability[:, i])
            pyramid = self.decode(state)
            prev_recon = pyramid[-1]
            states.append(state)
            pyramids.append(pyramid)

        return SequenceOutput(
            frames=frames,
            features=feats,
            embeddings=emb,
            directions=directions,
            direction_samples=d_sample,
            probs=probs,
            labels=labels,
            variability=variability,
            states=states,
            pyramids=pyramids,
            feature_sources=sources,
        )

    def _forward_play(self, frames: torch.Tensor, actions_override) -> SequenceOutput:
        if actions_override is None:
            raise InputError("play mode requires an action list")
        actions = torch.as_tensor(actions_override, dtype=torch.long)
        if actions.dim() == 1:
            actions = actions.unsqueeze(0).expand(frames.shape[0], -1)
        if ((actions < 0) | (actions >= self.cfg.num_actions)).any():
            raise InputError(
                f"actions must lie in [0, {self.cfg.num_actions}); got "
                f"{sorted(set(actions.flatten().tolist()))}"
            )
        b = frames.shape[0]
        n = actions.shape[1]
        initial = frames[:, 0]
        feats0 = self.encode(initial)

        state = self.init_state(b)
        zeros_v = torch.zeros(b, self.cfg.action_dim, dtype=initial.dtype)
        states, pyramids, sources = [], [], []
        labels = self.one_hot(actions)
        last_frame = initial
        for i in range(n):
            step_feat = feats0 if i == 0 else self.encode(last_frame)
            sources.append("real" if i == 0 else "recon")
            state = self.dynamics_step(state, step_feat, labels[:, i], zeros_v)
            pyramid = self.decode(state)
            last_frame = pyramid[-1]
            states.append(state)
            pyramids.append(pyramid)

        zeros_d = torch.zeros(b, n, self.cfg.action_dim, dtype=initial.dtype)
        return SequenceOutput(
            frames=frames,
            features=feats0.unsqueeze(1),
            embeddings=None,
            directions=None,
            direction_samples=zeros_d,
            probs=labels,
            labels=labels,
            variability=zeros_d.clone(),
            states=states,
            pyramids=pyramids,
            feature_sources=sources,
        )

    # ------------------------------------------------------------------
    # interactive stepping (used by the play service)

    def start_play(self, frame: torch.Tensor) -> tuple[EnvironmentState, torch.Tensor]:
        """Prepare a play session from one initial frame [B, C, H, W]."""
        if frame.dim() == 3:
            frame = frame.unsqueeze(0)
        self.encode(frame)  # shape validation
        return self.init_state(frame.shape[0]), frame

    def play_step(
        self,
        state: EnvironmentState,
        last_frame: torch.Tensor,
        action_index: int,
    ) -> tuple[EnvironmentState, torch.Tensor]:
        """One autoregressive generation step with variability zero."""
        b = last_frame.shape[0]
        label = self.one_hot(torch.full((b,), int(action_index)))
        features = self.encode(last_frame)
        zeros_v = torch.zeros(b, self.cfg.action_dim, dtype=last_frame.dtype)
        next_state = self.dynamics_step(state, features, label, zeros_v)
        frame = self.decode(next_state)[-1]
        return next_state, frame

    @torch.no_grad()
    def infer_actions(self, frames) -> torch.Tensor:
        """Noise-free action labels for consecutive frames of a real sequence.

        Uses posterior means end to end: deterministic for a fixed checkpoint.
        """
        frames = self._frame_batch(frames)
        b, t = frames.shape[:2]
        if t < 2:
            raise InputError("need at least 2 frames to infer actions")
        feats = self.encode(frames.reshape(b * t, *frames.shape[2:]))
        feats = feats.reshape(b, t, *feats.shape[1:])
        emb = self.action_posterior(feats)
        directions = self.transition_distributions(emb)
        _, labels = self.classifier(directions.mean, self.cfg.tau, mode="eval")
        return labels.argmax(dim=-1)


def build_model(cfg: ModelConfig, seed: int, centroid_rate: float = 0.05) -> PlayableModel:
    """Construct a model with seeded, reproducible initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = PlayableModel(cfg, centroid_rate)
    return model
