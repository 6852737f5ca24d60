"""Deterministic synthetic environment: one sprite on a static textured
canvas, driven by a small discrete action set with per-step jitter.

Datasets are written one directory per sequence with lossless PNG frames and
a JSON metadata document, so everything is inspectable and diffable.  All
randomness derives from (seed, split, sequence index) streams, which makes
generation reproducible and, per sequence, order-independent.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import EnvSpec, to_dict

SCHEMA_VERSION = 1
DATASET_FILE = "dataset.json"
SPRITE_FILE = "sprite.png"
META_FILE = "meta.json"


class DatasetError(RuntimeError):
    """Malformed or incomplete dataset on disk."""


@dataclass
class AnnotatedSequence:
    """Frames plus ground-truth annotations (absent for external data).

    ``positions`` are integer sprite centers in (x, y) pixel coordinates;
    ``deltas[t]`` equals ``positions[t+1] - positions[t]`` exactly.
    """

    name: str
    frames: np.ndarray  # [T, 3, H, W] float32 in [0, 1]
    actions: np.ndarray | None = None  # [T-1] int64
    positions: np.ndarray | None = None  # [T, 2] int64
    deltas: np.ndarray | None = None  # [T-1, 2] int64

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def has_annotations(self) -> bool:
        return self.actions is not None


def spec_hash(spec: EnvSpec) -> str:
    blob = json.dumps(to_dict(spec), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _asset_rng(spec: EnvSpec) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((spec.seed, 0xA55E7)))


def make_background(spec: EnvSpec) -> np.ndarray:
    """Static blocky low-intensity texture shared by every sequence."""
    rng = _asset_rng(spec)
    cells = rng.uniform(0.05, 0.35, size=(3, 8, 8)).astype(np.float32)
    bg = np.kron(cells, np.ones((1, spec.height // 8 + 1, spec.width // 8 + 1), np.float32))
    return np.ascontiguousarray(bg[:, : spec.height, : spec.width])


def make_sprite(spec: EnvSpec) -> np.ndarray:
    """Bright asymmetric sprite: colored quadrants with a white cross core.

    High contrast against the background keeps exact template matching
    unambiguous; the asymmetric quadrants give the encoder orientation cues.
    """
    rng = _asset_rng(spec)
    rng.uniform(size=(3, 8, 8))  # skip the background draw
    s = spec.sprite_size
    quads = rng.uniform(0.55, 0.95, size=(3, 2, 2)).astype(np.float32)
    rep = (s + 1) // 2
    sprite = np.kron(quads, np.ones((1, rep, rep), np.float32))[:, :s, :s]
    sprite[:, s // 2, :] = 1.0
    sprite[:, :, s // 2] = 1.0
    sprite[:, 0, :] = 0.0
    sprite[:, -1, :] = 0.0
    sprite[:, :, 0] = 0.0
    sprite[:, :, -1] = 0.0
    return np.ascontiguousarray(sprite)


def render_frame(background: np.ndarray, sprite: np.ndarray, top_left: tuple[int, int]) -> np.ndarray:
    x, y = top_left
    s = sprite.shape[-1]
    frame = background.copy()
    frame[:, y : y + s, x : x + s] = sprite
    return frame


def _center(top_left: np.ndarray, sprite_size: int) -> np.ndarray:
    return top_left + sprite_size // 2


def generate_sequence(
    spec: EnvSpec,
    rng: np.random.Generator,
    background: np.ndarray,
    sprite: np.ndarray,
    name: str,
) -> AnnotatedSequence:
    s = spec.sprite_size
    max_x, max_y = spec.width - s, spec.height - s
    pos = np.array(
        [
            rng.integers(spec.spawn_margin, max_x - spec.spawn_margin + 1),
            rng.integers(spec.spawn_margin, max_y - spec.spawn_margin + 1),
        ],
        dtype=np.int64,
    )
    displacements = np.array(list(spec.actions.values()), dtype=np.float64)
    t = spec.sequence_length
    actions = rng.integers(0, len(spec.actions), size=t - 1)

    frames = np.empty((t, 3, spec.height, spec.width), dtype=np.float32)
    positions = np.empty((t, 2), dtype=np.int64)
    frames[0] = render_frame(background, sprite, tuple(pos))
    positions[0] = _center(pos, s)
    for i, a in enumerate(actions):
        step = displacements[a] + rng.normal(0.0, spec.jitter, size=2)
        pos = np.clip(pos + np.rint(step).astype(np.int64), 0, [max_x, max_y])
        frames[i + 1] = render_frame(background, sprite, tuple(pos))
        positions[i + 1] = _center(pos, s)

    deltas = positions[1:] - positions[:-1]
    return AnnotatedSequence(
        name=name, frames=frames, actions=actions.astype(np.int64),
        positions=positions, deltas=deltas,
    )


def _to_png(frame: np.ndarray, path: Path) -> None:
    img = np.rint(np.clip(frame, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(np.moveaxis(img, 0, -1)).save(path, format="PNG")


def _from_png(path: Path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return np.moveaxis(img, -1, 0)


def generate_dataset(spec: EnvSpec, out_dir: str | Path) -> Path:
    """Write train/val/test splits under ``out_dir``; fully deterministic for
    a given spec (byte-identical directories on regeneration)."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    background = make_background(spec)
    sprite = make_sprite(spec)
    _to_png(sprite, out / SPRITE_FILE)

    digest = spec_hash(spec)
    for split_index, (split, count) in enumerate(sorted(spec.sequences.items())):
        split_dir = out / split
        split_dir.mkdir(exist_ok=True)
        for i in range(count):
            rng = np.random.default_rng(
                np.random.SeedSequence((spec.seed, split_index, i))
            )
            name = f"seq_{i:05d}"
            seq = generate_sequence(spec, rng, background, sprite, name)
            seq_dir = split_dir / name
            seq_dir.mkdir(exist_ok=True)
            for t in range(seq.length):
                _to_png(seq.frames[t], seq_dir / f"frame_{t:03d}.png")
            meta = {
                "schema_version": SCHEMA_VERSION,
                "actions": seq.actions.tolist(),
                "action_names": spec.action_names,
                "positions": seq.positions.tolist(),
                "deltas": seq.deltas.tolist(),
                "spec_hash": digest,
            }
            (seq_dir / META_FILE).write_text(json.dumps(meta, indent=1))

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "spec": to_dict(spec),
        "spec_hash": digest,
        "action_names": spec.action_names,
        "splits": {k: v for k, v in sorted(spec.sequences.items())},
    }
    (out / DATASET_FILE).write_text(json.dumps(manifest, indent=1))
    return out


def read_manifest(root: str | Path) -> dict:
    path = Path(root) / DATASET_FILE
    if not path.exists():
        raise DatasetError(f"not a dataset directory (missing {path})")
    manifest = json.loads(path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(
            f"{path}: unsupported schema_version {manifest.get('schema_version')!r}"
        )
    return manifest


def load_sprite(root: str | Path) -> np.ndarray:
    path = Path(root) / SPRITE_FILE
    if not path.exists():
        raise DatasetError(f"missing sprite template {path}")
    return _from_png(path)


def _load_sequence(seq_dir: Path) -> AnnotatedSequence:
    frame_paths = sorted(seq_dir.glob("frame_*.png"))
    if not frame_paths:
        raise DatasetError(f"sequence {seq_dir} contains no frames")

    meta = None
    meta_path = seq_dir / META_FILE
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise DatasetError(f"malformed metadata in {meta_path}: {exc}") from exc
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise DatasetError(
                f"{meta_path}: unsupported schema_version {meta.get('schema_version')!r}"
            )

    expected = {f"frame_{t:03d}.png" for t in range(len(frame_paths))}
    found = {p.name for p in frame_paths}
    if expected != found:
        missing = sorted(expected - found)
        raise DatasetError(f"sequence {seq_dir}: missing frame files {missing}")

    frames = np.stack([_from_png(p) for p in frame_paths])
    if meta is None:
        return AnnotatedSequence(name=seq_dir.name, frames=frames)

    actions = np.asarray(meta["actions"], dtype=np.int64)
    positions = np.asarray(meta["positions"], dtype=np.int64)
    deltas = np.asarray(meta["deltas"], dtype=np.int64)
    if len(actions) != len(frames) - 1:
        raise DatasetError(
            f"{meta_path}: {len(actions)} actions for {len(frames)} frames"
        )
    if positions.shape != (len(frames), 2) or deltas.shape != (len(frames) - 1, 2):
        raise DatasetError(f"{meta_path}: annotation shapes inconsistent")
    if not np.array_equal(deltas, positions[1:] - positions[:-1]):
        raise DatasetError(f"{meta_path}: deltas do not match position differences")
    return AnnotatedSequence(
        name=seq_dir.name, frames=frames, actions=actions,
        positions=positions, deltas=deltas,
    )


def load_dataset(root: str | Path, split: str = "train") -> list[AnnotatedSequence]:
    """Load one split; annotation fields stay ``None`` for sequences without
    metadata (external data)."""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise DatasetError(f"missing split directory {split_dir}")
    seq_dirs = sorted(d for d in split_dir.iterdir() if d.is_dir())
    if not seq_dirs:
        raise DatasetError(f"split directory {split_dir} has no sequences")
    return [_load_sequence(d) for d in seq_dirs]


def frames_tensor(sequences: list[AnnotatedSequence]) -> np.ndarray:
    """Stack equal-length sequences into a uint8 array [N, T, 3, H, W]."""
    lengths = {s.length for s in sequences}
    if len(lengths) != 1:
        raise DatasetError(f"sequences have mixed lengths {sorted(lengths)}")
    stack = np.stack([s.frames for s in sequences])
    return np.rint(stack * 255).astype(np.uint8)
