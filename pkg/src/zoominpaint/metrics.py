"""Quality metrics and Laplacian-pyramid frequency-band analysis.

Everything here is plain numpy on [0, 1] images; nothing needs gradients.
Aggregation uses compensated summation (math.fsum) so results do not depend on
accumulation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "PSNR_CAP", "psnr", "ssim", "ms_ssim", "l1_error",
    "LaplacianPyramid", "laplacian_pyramid", "reconstruct", "band_energies",
    "band_metrics", "BAND_NAMES", "MetricsReport", "evaluate_pairs",
    "evaluate_dataset", "hole_l1",
]

PSNR_CAP = 99.0          # reported for identical images (MSE == 0)

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

GAUSS_5TAP = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _channels(img) -> np.ndarray:
    """Normalize H,W / C,H,W / 1,C,H,W layouts to C,H,W."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        return a[None]
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch {a.shape}")
        return a[0]
    if a.ndim != 3:
        raise ValueError(f"unsupported image layout {a.shape}")
    return a


def psnr(pred, target, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); identical images report the documented cap."""
    p, t = _channels(pred), _channels(target)
    if p.shape != t.shape:
        raise ValueError(f"psnr: shape mismatch {p.shape} vs {t.shape}")
    mse = float(np.mean((p - t) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return 10.0 * math.log10(peak * peak / mse)


def l1_error(pred, target) -> float:
    p, t = _channels(pred), _channels(target)
    if p.shape != t.shape:
        raise ValueError(f"l1_error: shape mismatch {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t)))


def hole_l1(pred, target, mask) -> float:
    """Mean absolute error restricted to invalid (mask == 1) pixels."""
    p, t = _channels(pred), _channels(target)
    m = np.asarray(mask) == 1
    if not m.any():
        return 0.0
    return float(np.mean(np.abs(p[:, m] - t[:, m])))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _window_moments(a: np.ndarray, win: np.ndarray):
    """Weighted window means over all valid (fully inside) positions."""
    k = win.shape[0]
    v = sliding_window_view(a, (k, k))
    return np.einsum("ijkl,kl->ij", v, win)


def _ssim_terms(p: np.ndarray, t: np.ndarray, win: np.ndarray, c1: float, c2: float):
    """Per-position luminance*contrast (ssim) and contrast-structure maps."""
    mu_p = _window_moments(p, win)
    mu_t = _window_moments(t, win)
    s_pp = _window_moments(p * p, win) - mu_p * mu_p
    s_tt = _window_moments(t * t, win) - mu_t * mu_t
    s_pt = _window_moments(p * t, win) - mu_p * mu_t
    cs = (2.0 * s_pt + c2) / (s_pp + s_tt + c2)
    lum = (2.0 * mu_p * mu_t + c1) / (mu_p ** 2 + mu_t ** 2 + c1)
    return lum * cs, cs


def _effective_window(h: int, w: int, window: int) -> int:
    k = min(window, h, w)
    if k % 2 == 0:
        k -= 1
    if k < 1:
        raise ValueError(f"image {h}x{w} too small for SSIM")
    return k


def ssim(pred, target, peak: float = 1.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Gaussian-window SSIM, computed per channel and averaged, mean over
    valid window positions. The window shrinks to the largest odd size that
    fits when an image is smaller than 11 pixels."""
    p, t = _channels(pred), _channels(target)
    if p.shape != t.shape:
        raise ValueError(f"ssim: shape mismatch {p.shape} vs {t.shape}")
    k = _effective_window(p.shape[1], p.shape[2], window)
    win = _gaussian_window(k, sigma)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    vals = [float(np.mean(_ssim_terms(pc, tc, win, c1, c2)[0]))
            for pc, tc in zip(p, t)]
    return float(np.mean(vals))


def _avgpool2_np(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    h2, w2 = h - h % 2, w - w % 2
    return a[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))


def ms_ssim(pred, target, peak: float = 1.0, window: int = 11, sigma: float = 1.5,
            k1: float = 0.01, k2: float = 0.03,
            weights=MS_SSIM_WEIGHTS) -> float:
    """Multi-scale SSIM with dyadic 2x2 average-pool downsampling.

    Uses as many scales as keep the final scale at least window-sized (always
    at least one); when fewer than len(weights) scales fit, the truncated
    weights are renormalized to sum to 1 (a single scale reduces to plain
    SSIM). Contrast and luminance terms are clamped at 0 before the weighted
    geometric combination.
    """
    p, t = _channels(pred), _channels(target)
    if p.shape != t.shape:
        raise ValueError(f"ms_ssim: shape mismatch {p.shape} vs {t.shape}")
    h, w = p.shape[1], p.shape[2]
    scales = 1
    while (scales < len(weights)
           and min(h, w) // (2 ** scales) >= window):
        scales += 1
    wts = np.array(weights[:scales])
    wts /= wts.sum()

    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    per_channel = []
    for pc, tc in zip(p, t):
        a, b = pc, tc
        acc = 1.0
        for j in range(scales):
            k = _effective_window(a.shape[0], a.shape[1], window)
            win = _gaussian_window(k, sigma)
            ssim_map, cs_map = _ssim_terms(a, b, win, c1, c2)
            if j < scales - 1:
                term = max(float(np.mean(cs_map)), 0.0)
                acc *= term ** wts[j]
                a, b = _avgpool2_np(a), _avgpool2_np(b)
            else:
                term = max(float(np.mean(ssim_map)), 0.0)
                acc *= term ** wts[j]
        per_channel.append(acc)
    return float(np.mean(per_channel))


# ---------------------------------------------------------------------------
# Laplacian pyramid (Burt-Adelson, 5-tap kernel, edge clamp)
# ---------------------------------------------------------------------------

def _blur_axis(a: np.ndarray, axis: int, kernel: np.ndarray) -> np.ndarray:
    pad = [(0, 0)] * a.ndim
    pad[axis] = (2, 2)
    ap = np.pad(a, pad, mode="edge")
    out = np.zeros_like(a)
    sl = [slice(None)] * a.ndim
    n = a.shape[axis]
    for i, kv in enumerate(kernel):
        sl[axis] = slice(i, i + n)
        out += kv * ap[tuple(sl)]
    return out


def _blur(a: np.ndarray, kernel=GAUSS_5TAP) -> np.ndarray:
    return _blur_axis(_blur_axis(a, -2, kernel), -1, kernel)


def _down(a: np.ndarray) -> np.ndarray:
    return _blur(a)[..., ::2, ::2]


def _up(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    # edge-pad the child BEFORE zero insertion so the clamped extension
    # follows the sample/zero lattice; constants are then preserved exactly
    pad = [(0, 0)] * (a.ndim - 2) + [(1, 1), (1, 1)]
    ap = np.pad(a, pad, mode="edge")
    shape = ap.shape[:-2] + (2 * ap.shape[-2], 2 * ap.shape[-1])
    z = np.zeros(shape, dtype=a.dtype)
    z[..., ::2, ::2] = ap
    # doubled kernel per axis compensates the zero insertion
    up = _blur_axis(_blur_axis(z, -2, 2.0 * GAUSS_5TAP), -1, 2.0 * GAUSS_5TAP)
    return up[..., 2:2 + out_h, 2:2 + out_w]


@dataclass
class LaplacianPyramid:
    """Band-pass levels (level 0 = highest frequency) plus the low-pass
    residual; reconstruction is exact by construction."""

    levels: list
    residual: np.ndarray
    kernel: np.ndarray = field(default_factory=lambda: GAUSS_5TAP.copy())


def laplacian_pyramid(img, levels: int = 2) -> LaplacianPyramid:
    x = _channels(img)
    bands = []
    for _ in range(levels):
        down = _down(x)
        bands.append(x - _up(down, x.shape[-2], x.shape[-1]))
        x = down
    return LaplacianPyramid(levels=bands, residual=x)


def reconstruct(pyr: LaplacianPyramid) -> np.ndarray:
    x = pyr.residual
    for band in reversed(pyr.levels):
        x = band + _up(x, band.shape[-2], band.shape[-1])
    return x


def band_energies(pyr: LaplacianPyramid) -> list:
    return [float((b ** 2).sum()) for b in pyr.levels] + [float((pyr.residual ** 2).sum())]


BAND_NAMES = {0: "high", 1: "mid"}          # residual is "low"


def band_metrics(pred, target, levels: int = 2) -> list:
    """SSIM per corresponding pyramid level, high frequency first, followed by
    the low-pass residual."""
    pp = laplacian_pyramid(pred, levels)
    tp = laplacian_pyramid(target, levels)
    out = [ssim(a, b) for a, b in zip(pp.levels, tp.levels)]
    out.append(ssim(pp.residual, tp.residual))
    return out


# ---------------------------------------------------------------------------
# dataset evaluation
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    ms_ssim: float
    l1_error: float
    per_band_ssim: list
    n_images: int
    hole_l1: float = float("nan")
    per_image: list = field(default_factory=list)


def evaluate_pairs(preds, targets, levels: int = 2, masks=None) -> MetricsReport:
    """Aggregate metrics over aligned prediction/target lists (mean of
    per-image values; compensated sums)."""
    rows = []
    for i, (p, t) in enumerate(zip(preds, targets)):
        row = {
            "psnr": psnr(p, t),
            "ssim": ssim(p, t),
            "ms_ssim": ms_ssim(p, t),
            "l1_error": l1_error(p, t),
            "per_band_ssim": band_metrics(p, t, levels),
        }
        if masks is not None:
            row["hole_l1"] = hole_l1(p, t, masks[i])
        rows.append(row)
    if not rows:
        raise ValueError("no image pairs to evaluate")
    n = len(rows)
    bands = [math.fsum(r["per_band_ssim"][j] for r in rows) / n
             for j in range(levels + 1)]
    return MetricsReport(
        psnr=math.fsum(r["psnr"] for r in rows) / n,
        ssim=math.fsum(r["ssim"] for r in rows) / n,
        ms_ssim=math.fsum(r["ms_ssim"] for r in rows) / n,
        l1_error=math.fsum(r["l1_error"] for r in rows) / n,
        per_band_ssim=bands,
        n_images=n,
        hole_l1=(math.fsum(r["hole_l1"] for r in rows) / n
                 if masks is not None else float("nan")),
        per_image=rows,
    )


def evaluate_dataset(checkpoint_path, dataset_dir, mask_dir=None, mask_spec=None,
                     seed: int = 0, crop: int = None, levels: int = 2) -> MetricsReport:
    """Inpaint every dataset image with the checkpointed model and score the
    results against the originals. Masks come from ``mask_dir`` (cycled in
    lexicographic order) or are sampled from ``mask_spec`` with the given
    seed. Deterministic for fixed inputs."""
    from .checkpoint import load_checkpoint
    from .data import center_crop, scan_dataset
    from .imgio import load_image, load_mask
    from .masks import sample_mask
    from .pipeline import infer, mask_image

    if (mask_dir is None) == (mask_spec is None):
        raise ValueError("provide exactly one of mask_dir or mask_spec")
    models, config, _ = load_checkpoint(checkpoint_path)
    div = models["refine"].required_divisor()
    paths = scan_dataset(dataset_dir)
    mask_paths = scan_dataset(mask_dir) if mask_dir is not None else None
    rng = np.random.default_rng(seed)

    preds, targets, masks = [], [], []
    for i, p in enumerate(paths):
        img = load_image(p)[0]
        size = min(img.shape[1], img.shape[2]) if crop is None else crop
        size -= size % div
        if size < div:
            raise ValueError(f"{p}: too small for the model (needs {div} px)")
        img = center_crop(img, size)
        if mask_paths is not None:
            m = load_mask(mask_paths[i % len(mask_paths)])
            if m.shape != img.shape[1:]:
                m = center_crop(m[None], size)[0]
        else:
            m = sample_mask(mask_spec, size, size, rng)
        out = infer(models, config, img, m)[0]
        preds.append(out)
        targets.append(img)
        masks.append(m)
    return evaluate_pairs(preds, targets, levels=levels, masks=masks)
