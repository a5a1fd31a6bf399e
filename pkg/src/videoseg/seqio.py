"""Sequence loading and PNG persistence.

Layout on disk:
    <root>/JPEGImages/<name>/00000.jpg|png ...
    <root>/Annotations/<name>/00000.png      (indexed palette, value = id)

Outputs are written atomically (temp file + rename) so interrupted runs
never leave half-written rasters behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .core import SequenceStore
from .errors import ConfigError, DataError

VOID_LABEL = 255  # annotation value treated as background

_IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


def index_palette(n: int = 256) -> np.ndarray:
    """Standard bit-interleaved palette used by indexed annotations."""
    palette = np.zeros((n, 3), dtype=np.uint8)
    for i in range(n):
        value = i
        r = g = b = 0
        for shift in range(8):
            r |= ((value >> 0) & 1) << (7 - shift)
            g |= ((value >> 1) & 1) << (7 - shift)
            b |= ((value >> 2) & 1) << (7 - shift)
            value >>= 3
        palette[i] = (r, g, b)
    return palette


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _png_bytes(image: Image.Image) -> bytes:
    import io

    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def save_labelmap_png(path: Path, labels: np.ndarray) -> None:
    if labels.min() < 0 or labels.max() > 255:
        raise DataError(f"label ids outside u8 range in {path}")
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(index_palette().reshape(-1).tolist())
    atomic_write_bytes(Path(path), _png_bytes(img))


def load_labelmap_png(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing annotation file {path}")
    with Image.open(path) as img:
        data = np.array(img.convert("P") if img.mode == "P" else img.convert("L"))
    labels = data.astype(np.int32)
    labels[labels == VOID_LABEL] = 0
    return labels


def save_mask_png(path: Path, mask: np.ndarray) -> None:
    img = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L")
    atomic_write_bytes(Path(path), _png_bytes(img))


def load_mask_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("L")) > 127


def save_image_png(path: Path, image: np.ndarray) -> None:
    img = Image.fromarray(image.astype(np.uint8))
    atomic_write_bytes(Path(path), _png_bytes(img))


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("RGB"))


def atomic_write_json(path: Path, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    atomic_write_bytes(Path(path), text.encode("utf-8"))


def load_sequence(root_path: Path | str, name: str) -> SequenceStore:
    """Load ordered frames and the frame-0 annotation for one sequence."""
    root = Path(root_path)
    frame_dir = root / "JPEGImages" / name
    anno_path = root / "Annotations" / name / "00000.png"
    if not frame_dir.is_dir():
        raise ConfigError(f"missing frame directory {frame_dir}")
    frame_paths = sorted(
        p for p in frame_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not frame_paths:
        raise ConfigError(f"no frames under {frame_dir}")
    annotation = load_labelmap_png(anno_path)
    frames: list[np.ndarray] = []
    shape: tuple[int, int] | None = None
    for p in frame_paths:
        frame = load_image(p)
        if shape is None:
            shape = frame.shape[:2]
        elif frame.shape[:2] != shape:
            raise DataError(f"inconsistent frame size at {p.name} in {name}")
        frames.append(frame)
    if not (annotation > 0).any():
        raise DataError(f"no instances declared in {anno_path}")
    return SequenceStore(name=name, frames=frames, first_annotation=annotation)
