"""Single-archive checkpoints: parameters, centroids, config, step counter,
optimizer and RNG state, plus a small gallery of initial frames so a served
checkpoint is self-contained."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch

from .config import model_config_from_dict, to_dict
from .model import PlayableModel

FORMAT_TAG = "playgen-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class CheckpointBundle:
    model: PlayableModel
    step: int
    optimizer_state: dict | None
    train_config: dict | None
    torch_rng: torch.Tensor | None
    sampler_state: dict | None
    gallery: list[bytes]


def save_checkpoint(
    path: str | Path,
    model: PlayableModel,
    step: int,
    optimizer: torch.optim.Optimizer | None = None,
    train_config: dict | None = None,
    torch_rng: torch.Tensor | None = None,
    sampler_state: dict | None = None,
    gallery: list[bytes] | None = None,
) -> Path:
    path = Path(path)
    payload: dict[str, Any] = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "model_config": to_dict(model.cfg),
        "centroid_rate": model.centroid_bank.update_rate,
        "model_state": model.state_dict(),
        "step": int(step),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "train_config": train_config,
        "torch_rng": torch_rng,
        "sampler_state": sampler_state,
        "gallery": list(gallery or []),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(payload, tmp)
        tmp.replace(path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except Exception as exc:  # torch raises several unpickling error types
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path} is not a {FORMAT_TAG} archive")
    if payload.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {payload.get('version')!r}"
        )
    cfg = model_config_from_dict(payload["model_config"])
    model = PlayableModel(cfg, centroid_rate=payload.get("centroid_rate", 0.05))
    model.load_state_dict(payload["model_state"])
    return CheckpointBundle(
        model=model,
        step=payload["step"],
        optimizer_state=payload.get("optimizer_state"),
        train_config=payload.get("train_config"),
        torch_rng=payload.get("torch_rng"),
        sampler_state=payload.get("sampler_state"),
        gallery=list(payload.get("gallery", [])),
    )
