"""PNG <-> array conversion. Images are N,C,H,W float in [0, 1]; masks are
H,W uint8 with 1 = invalid (stored as 255 in PNG)."""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

__all__ = ["load_image", "save_image", "load_mask", "save_mask"]


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG into a 1,3,H,W float64 array via v/255."""
    try:
        img = Image.open(path)
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"{path}: not a readable image ({exc})") from None
    if img.mode != "RGB":
        raise ValueError(f"{path}: expected an 8-bit RGB image, got mode {img.mode!r}")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)[None]


def save_image(arr: np.ndarray, path):
    """Write a 1,3,H,W / 3,H,W array to PNG: clamp to [0,1], round half up."""
    a = np.asarray(arr)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError(f"save_image: expected a single image, got {a.shape}")
        a = a[0]
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"save_image: expected 3,H,W layout, got {a.shape}")
    q = np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    """Read a single-channel mask PNG (255 = invalid) into H,W uint8 {0,1}."""
    try:
        img = Image.open(path)
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"{path}: not a readable image ({exc})") from None
    if img.mode not in ("L", "1"):
        img = img.convert("L")
    arr = np.asarray(img)
    return (arr >= 128).astype(np.uint8)


def save_mask(mask: np.ndarray, path):
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"save_mask: expected H,W mask, got {m.shape}")
    Image.fromarray((m.astype(np.uint8) * 255), mode="L").save(path, format="PNG")
