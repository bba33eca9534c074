"""Dataset scanning, cropping and the synthetic texture set used for desk-scale
training runs."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .imgio import load_image, save_image

__all__ = [
    "scan_dataset", "center_crop", "random_crop", "FolderDataset",
    "make_texture_dataset", "texture_image",
]


def scan_dataset(directory) -> list:
    """PNG files in lexicographic order; rejects empty directories."""
    d = Path(directory)
    if not d.is_dir():
        raise ValueError(f"{directory}: not a directory")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise ValueError(f"{directory}: no PNG files found")
    return files


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    """Crop the centered size x size window (offset floor((dim - size)/2))."""
    h, w = img.shape[-2], img.shape[-1]
    if h < size or w < size:
        raise ValueError(f"image {img.shape} smaller than crop {size}")
    oy, ox = (h - size) // 2, (w - size) // 2
    return img[..., oy:oy + size, ox:ox + size]


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[-2], img.shape[-1]
    if h < size or w < size:
        raise ValueError(f"image {img.shape} smaller than crop {size}")
    oy = int(rng.integers(0, h - size + 1))
    ox = int(rng.integers(0, w - size + 1))
    return img[..., oy:oy + size, ox:ox + size]


class FolderDataset:
    """All PNGs of a directory held in memory as 3,H,W float arrays."""

    def __init__(self, directory):
        self.paths = scan_dataset(directory)
        self.images = [load_image(p)[0] for p in self.paths]

    def __len__(self):
        return len(self.images)

    def random_batch(self, rng: np.random.Generator, n: int, size: int) -> np.ndarray:
        """n random crops from randomly chosen images, stacked N,3,size,size."""
        out = np.empty((n, 3, size, size))
        for i in range(n):
            img = self.images[int(rng.integers(0, len(self.images)))]
            out[i] = random_crop(img, size, rng)
        return out

    def center_batch(self, size: int, indices=None) -> np.ndarray:
        idx = range(len(self.images)) if indices is None else indices
        return np.stack([center_crop(self.images[i], size) for i in idx])


def texture_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """One synthetic texture: a high-contrast oriented color gradient plus a
    couple of soft sinusoidal stripe fields. 3,size,size in [0, 1].

    The strong low-frequency ramp makes the global image mean a poor local
    predictor, so context-free hole filling scores badly while local color
    propagation remains easy to learn."""
    ys, xs = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    theta = rng.uniform(0, 2 * math.pi)
    ramp = (xs * math.cos(theta) + ys * math.sin(theta) + 1.0) / 2.0
    c0 = rng.uniform(0.02, 0.35, size=3)
    c1 = rng.uniform(0.65, 0.98, size=3)
    if rng.random() < 0.5:
        c0, c1 = c1, c0
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
    for _ in range(2):
        freq = rng.uniform(1.5, 5.0)
        phase = rng.uniform(0, 2 * math.pi)
        ang = rng.uniform(0, math.pi)
        wave = np.sin(2 * math.pi * freq * (xs * math.cos(ang) + ys * math.sin(ang)) + phase)
        amp = rng.uniform(0.04, 0.12, size=3)
        img = img + amp[:, None, None] * wave
    return np.clip(img, 0.0, 1.0)


def make_texture_dataset(directory, n: int, size: int, seed: int) -> list:
    """Write n synthetic texture PNGs; returns the file paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        p = d / f"texture_{i:04d}.png"
        save_image(texture_image(size, rng), p)
        paths.append(p)
    return paths
