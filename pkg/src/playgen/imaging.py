"""Lossless frame <-> PNG conversion shared by dataset I/O, the CLI, and the
play service, so replayed frames are byte-identical across all surfaces."""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """[C, H, W] float in [0, 1] -> [H, W, C] uint8 with round-half-even."""
    arr = np.asarray(frame, dtype=np.float32)
    img = np.rint(np.clip(arr, 0.0, 1.0) * 255).astype(np.uint8)
    return np.moveaxis(img, 0, -1)


def from_uint8(img: np.ndarray) -> np.ndarray:
    """[H, W, C] uint8 -> [C, H, W] float32 in [0, 1]."""
    return np.moveaxis(np.asarray(img, dtype=np.float32) / 255.0, -1, 0)


def frame_to_png_bytes(frame: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(frame)).save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_frame(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return from_uint8(np.asarray(img))


def save_frame_png(frame: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(frame_to_png_bytes(frame))
    return path


def load_frame_png(path: str | Path) -> np.ndarray:
    return png_bytes_to_frame(Path(path).read_bytes())


def frame_to_base64(frame: np.ndarray) -> str:
    return base64.b64encode(frame_to_png_bytes(frame)).decode("ascii")


def base64_to_frame(data: str) -> np.ndarray:
    return png_bytes_to_frame(base64.b64decode(data))
