"""Procedural brush-stroke mask sampling and statistics.

A mask is a binary H x W uint8 map, 1 = invalid (to inpaint), 0 = valid.
Strokes are polyline chains rasterized as unions of capsules (thick segments
with round caps), which places a joint disc of the stroke thickness at every
vertex. Segment-length bounds are affine in the image diagonal d, so the same
spec adapts to any resolution; thickness is in pixels at the 256 reference
resolution and scales linearly when masks are sampled at other sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MaskSpec", "small_mask_spec", "large_mask_spec",
    "sample_mask", "stroke_polyline", "upscale_mask_nearest", "mask_statistics",
    "effective_thickness_bounds", "REFERENCE_SIZE",
]

REFERENCE_SIZE = 256        # resolution the thickness ranges are calibrated at

TWO_PI = 2.0 * math.pi


@dataclass
class MaskSpec:
    """Random distributions for one brush-stroke mask family.

    Length bounds/moments are (const_px, diag_coeff) pairs resolved as
    const + coeff * d against the image diagonal d. ``alternate_rule`` is
    ("offset", lo, hi) -> a + U{lo, hi} or ("reflect",) -> 2*pi - a, applied
    at every other vertex.
    """

    name: str
    vertex_count: tuple          # (lo, hi) inclusive integer uniform
    length_kind: str             # "uniform" | "normal"
    length_a: tuple              # uniform: lo, normal: mean   (const_px, diag_coeff)
    length_b: tuple              # uniform: hi, normal: std    (const_px, diag_coeff)
    thickness: tuple             # (lo, hi) inclusive integer uniform, px at 256
    first_angle: tuple           # (lo, hi) uniform, radians
    alternate_rule: tuple        # ("offset", lo, hi) | ("reflect",)
    strokes: int = 2             # stroke chains per mask, calibrated against
                                 # the reference ratio statistics

    def validate(self):
        if self.vertex_count[0] > self.vertex_count[1] or self.vertex_count[0] < 1:
            raise ValueError(f"degenerate vertex range {self.vertex_count}")
        if self.thickness[0] > self.thickness[1] or self.thickness[0] < 1:
            raise ValueError(f"degenerate thickness range {self.thickness}")
        if self.length_kind not in ("uniform", "normal"):
            raise ValueError(f"unknown length distribution {self.length_kind!r}")
        if self.strokes < 1:
            raise ValueError("strokes must be >= 1")

    def resolve_length(self, term, d):
        return term[0] + term[1] * d


def small_mask_spec() -> MaskSpec:
    """Small-mask family: short uniform segments that zig-zag back on themselves."""
    return MaskSpec(
        name="small",
        vertex_count=(1, 12),
        length_kind="uniform",
        length_a=(1.0, 0.0),
        length_b=(0.0, 1.0 / 12.0),
        thickness=(5, 30),
        first_angle=(0.0, TWO_PI),
        alternate_rule=("offset", 3.0 * math.pi / 4.0, 5.0 * math.pi / 4.0),
    )


def large_mask_spec() -> MaskSpec:
    """Large-mask family: long normal-length segments mirrored every other vertex."""
    return MaskSpec(
        name="large",
        vertex_count=(4, 12),
        length_kind="normal",
        length_a=(0.0, 1.0 / 8.0),
        length_b=(0.0, 1.0 / 16.0),
        thickness=(12, 40),
        first_angle=(TWO_PI / 5.0 - TWO_PI / 15.0, TWO_PI / 5.0 + TWO_PI / 15.0),
        alternate_rule=("reflect",),
    )


def _stamp_capsule(canvas: np.ndarray, p0, p1, radius: float):
    """Mark every pixel within ``radius`` of the segment p0-p1 as invalid."""
    h, w = canvas.shape
    y0 = max(int(math.floor(min(p0[0], p1[0]) - radius - 1)), 0)
    y1 = min(int(math.ceil(max(p0[0], p1[0]) + radius + 1)), h - 1)
    x0 = max(int(math.floor(min(p0[1], p1[1]) - radius - 1)), 0)
    x1 = min(int(math.ceil(max(p0[1], p1[1]) + radius + 1)), w - 1)
    if y1 < y0 or x1 < x0:
        return
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    py, px = np.meshgrid(ys, xs, indexing="ij")
    vy, vx = p1[0] - p0[0], p1[1] - p0[1]
    vv = vy * vy + vx * vx
    if vv == 0.0:
        d2 = (py - p0[0]) ** 2 + (px - p0[1]) ** 2
    else:
        t = ((py - p0[0]) * vy + (px - p0[1]) * vx) / vv
        np.clip(t, 0.0, 1.0, out=t)
        d2 = (py - (p0[0] + t * vy)) ** 2 + (px - (p0[1] + t * vx)) ** 2
    canvas[y0:y1 + 1, x0:x1 + 1] |= d2 <= radius * radius


def effective_thickness_bounds(spec: MaskSpec, h: int, w: int) -> tuple:
    """Thickness range in pixels after scaling from the reference resolution."""
    scale = min(h, w) / REFERENCE_SIZE
    t_lo = max(1, int(round(spec.thickness[0] * scale)))
    t_hi = max(t_lo, int(round(spec.thickness[1] * scale)))
    return t_lo, t_hi


def stroke_polyline(spec: MaskSpec, h: int, w: int, rng: np.random.Generator):
    """Sample one stroke chain: ((y, x) vertices incl. start, capsule radius).

    Per vertex an angle is drawn (every other vertex transformed by the
    alternate rule) plus a segment length (normal lengths clamped to
    [1, d/2]); endpoints are clamped to the image bounds. Angles are measured
    clockwise from the positive x axis (the y axis points down).
    """
    t_lo, t_hi = effective_thickness_bounds(spec, h, w)
    d = math.hypot(h, w)
    y = rng.uniform(0.0, h - 1.0)
    x = rng.uniform(0.0, w - 1.0)
    n_vertex = int(rng.integers(spec.vertex_count[0], spec.vertex_count[1] + 1))
    thickness = int(rng.integers(t_lo, t_hi + 1))
    points = [(y, x)]
    for i in range(n_vertex):
        angle = rng.uniform(spec.first_angle[0], spec.first_angle[1])
        if i % 2 == 1:
            if spec.alternate_rule[0] == "offset":
                angle = angle + rng.uniform(spec.alternate_rule[1], spec.alternate_rule[2])
            else:
                angle = TWO_PI - angle
        if spec.length_kind == "uniform":
            length = rng.uniform(spec.resolve_length(spec.length_a, d),
                                 spec.resolve_length(spec.length_b, d))
        else:
            mu = spec.resolve_length(spec.length_a, d)
            sd = spec.resolve_length(spec.length_b, d)
            length = float(np.clip(rng.normal(mu, sd), 1.0, d / 2.0))
        y = min(max(y + length * math.sin(angle), 0.0), h - 1.0)
        x = min(max(x + length * math.cos(angle), 0.0), w - 1.0)
        points.append((y, x))
    return points, thickness / 2.0


def sample_mask(spec: MaskSpec, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one random brush-stroke mask, deterministic for a fixed generator."""
    spec.validate()
    t_lo, t_hi = effective_thickness_bounds(spec, h, w)
    if h < 2 * t_hi or w < 2 * t_hi:
        raise ValueError(f"image {h}x{w} too small for stroke thickness up to {t_hi}")
    mask = np.zeros((h, w), dtype=bool)
    last = (0, 0)
    for _ in range(spec.strokes):
        points, radius = stroke_polyline(spec, h, w, rng)
        for p0, p1 in zip(points[:-1], points[1:]):
            _stamp_capsule(mask, p0, p1, radius)
        last = points[-1]
    out = mask.astype(np.uint8)
    ratio = out.mean()
    if ratio >= 1.0:
        raise ValueError("degenerate all-invalid mask sampled; loosen the spec")
    if ratio == 0.0:
        # radius < half a pixel can miss every lattice point; stamp the endpoint
        out[min(int(last[0]), h - 1), min(int(last[1]), w - 1)] = 1
    return out


def upscale_mask_nearest(mask: np.ndarray, s: int) -> np.ndarray:
    """Replicate each mask pixel into an s x s block (ratio preserved exactly)."""
    if s < 1:
        raise ValueError("upscale factor must be >= 1")
    if s == 1:
        return mask.copy()
    return np.repeat(np.repeat(mask, s, axis=0), s, axis=1)


def mask_statistics(spec: MaskSpec, n: int, h: int, w: int, seed: int,
                    bins: int = 100) -> dict:
    """Sample ``n`` masks and report invalid-ratio mean, max and a histogram."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    ratios = np.empty(n)
    for i in range(n):
        ratios[i] = sample_mask(spec, h, w, rng).mean()
    hist, edges = np.histogram(ratios, bins=bins, range=(0.0, 1.0))
    return {
        "mean_ratio": float(ratios.mean()),
        "max_ratio": float(ratios.max()),
        "histogram": hist,
        "bin_edges": edges,
        "ratios": ratios,
    }
