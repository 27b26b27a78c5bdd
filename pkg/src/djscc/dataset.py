"""Procedural desk-scale image corpus.

Eight shape classes rendered at 32x32 with randomized colors, position,
size and a touch of pixel noise; labels double as the semantic
conditioning signal. Images live on disk as PNGs next to a labels.csv,
and in memory as float32 [N,3,H,W] arrays in [-1, 1].
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .rng import stream

SHAPE_CLASSES = ("circle", "ring", "square", "triangle",
                 "cross", "hstripes", "vstripes", "checker")


class EmptyDataset(ValueError):
    """Dataset folder has no usable images."""


@dataclass
class ImageDataset:
    images: np.ndarray   # [N,3,H,W] float32 in [-1,1]
    labels: np.ndarray   # [N] int64, indices into SHAPE_CLASSES
    ids: list[str]

    def __len__(self):
        return self.images.shape[0]


def to_unit(img_u8: np.ndarray) -> np.ndarray:
    """uint8 HWC -> float32 CHW in [-1, 1]."""
    x = img_u8.astype(np.float32) / 127.5 - 1.0
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def from_unit(x: np.ndarray) -> np.ndarray:
    """float CHW in [-1, 1] -> uint8 HWC."""
    y = np.clip((np.asarray(x, dtype=np.float64) + 1.0) * 127.5, 0.0, 255.0)
    return np.ascontiguousarray(np.rint(y).astype(np.uint8).transpose(1, 2, 0))


def save_image(path, x: np.ndarray) -> None:
    Image.fromarray(from_unit(x)).save(path)


def load_image(path) -> np.ndarray:
    return to_unit(np.asarray(Image.open(path).convert("RGB")))


def _smooth(d: np.ndarray, edge: float) -> np.ndarray:
    # signed distance -> soft coverage mask in [0, 1]
    return np.clip(d / edge + 0.5, 0.0, 1.0)


def _render(cls: int, rng, size: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    bg = rng.uniform(-0.9, 0.9, size=3)
    fg = rng.uniform(-0.9, 0.9, size=3)
    while np.max(np.abs(fg - bg)) < 0.6:
        fg = rng.uniform(-0.9, 0.9, size=3)
    cx, cy = rng.uniform(0.38, 0.62, size=2)
    r = rng.uniform(0.18, 0.3)
    edge = 1.5 / size
    name = SHAPE_CLASSES[cls]
    dx, dy = xx - cx, yy - cy
    if name == "circle":
        d = r - np.hypot(dx, dy)
    elif name == "ring":
        w = rng.uniform(0.05, 0.09)
        d = w - np.abs(np.hypot(dx, dy) - r)
    elif name == "square":
        d = r * 0.85 - np.maximum(np.abs(dx), np.abs(dy))
    elif name == "triangle":
        # equilateral, apex up: min over the three edge half-planes
        s3 = math.sqrt(3.0)
        d = np.minimum.reduce([
            (dy + r / 2.0),
            (-dy * 0.5 - dx * (s3 / 2.0) + r / 2.0),
            (-dy * 0.5 + dx * (s3 / 2.0) + r / 2.0),
        ]) * 0.8
    elif name == "cross":
        w = rng.uniform(0.06, 0.1)
        bar1 = np.minimum(w - np.abs(dx), r - np.abs(dy))
        bar2 = np.minimum(w - np.abs(dy), r - np.abs(dx))
        d = np.maximum(bar1, bar2)
    elif name in ("hstripes", "vstripes"):
        f = rng.integers(2, 5)
        phase = rng.uniform(0, 2 * math.pi)
        u = yy if name == "hstripes" else xx
        d = np.sin(2 * math.pi * f * u + phase) * 0.08
    else:  # checker
        f = rng.integers(2, 4)
        px = rng.uniform(0, 2 * math.pi)
        py = rng.uniform(0, 2 * math.pi)
        d = np.sin(2 * math.pi * f * xx + px) * np.sin(2 * math.pi * f * yy + py) * 0.12
    m = _smooth(d, edge)
    img = bg[:, None, None] * (1.0 - m) + fg[:, None, None] * m
    img = img + rng.standard_normal(img.shape) * 0.02
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def generate_dataset(out_dir, count: int, size: int = 32, seed: int = 0,
                     split: str = "train") -> Path:
    """Render count images into out_dir/split plus a labels.csv."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if size % 8:
        raise ValueError(f"size must be divisible by 8, got {size}")
    root = Path(out_dir) / split
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        r = stream(seed, "gen", split, i)
        cls = int(r.integers(0, len(SHAPE_CLASSES)))
        img = _render(cls, r, size)
        name = f"img_{i:05d}.png"
        save_image(root / name, img)
        rows.append((name, cls))
    with open(root / "labels.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["filename", "label"])
        w.writerows(rows)
    return root


def load_dataset(path) -> ImageDataset:
    """Load a folder written by generate_dataset."""
    root = Path(path)
    labels_file = root / "labels.csv"
    if not labels_file.is_file():
        raise EmptyDataset(f"no labels.csv under {root}")
    images, labels, ids = [], [], []
    with open(labels_file, newline="") as f:
        for row in csv.DictReader(f):
            img_path = root / row["filename"]
            if not img_path.is_file():
                raise EmptyDataset(f"listed image missing: {img_path}")
            images.append(load_image(img_path))
            labels.append(int(row["label"]))
            ids.append(Path(row["filename"]).stem)
    if not images:
        raise EmptyDataset(f"labels.csv under {root} lists no images")
    return ImageDataset(np.stack(images), np.asarray(labels, dtype=np.int64), ids)
