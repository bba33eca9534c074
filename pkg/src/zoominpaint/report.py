"""Delimited reports and their companion matplotlib figures.

Every CLI report path writes the numbers as CSV/text and renders a figure
next to them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "write_csv", "text_table", "save_loss_curves", "save_mask_histogram",
    "save_band_bars",
]


def write_csv(path, header, rows):
    lines = [",".join(str(h) for h in header)]
    for row in rows:
        lines.append(",".join(f"{v:.10e}" if isinstance(v, float) else str(v)
                              for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def text_table(headers, rows) -> str:
    cells = [[str(h) for h in headers]]
    for row in rows:
        cells.append([f"{v:.6f}" if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    out = []
    for j, row in enumerate(cells):
        out.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        if j == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def save_loss_curves(log_path, out_path):
    """Loss-log CSV -> per-term training curves."""
    raw = Path(log_path).read_text().strip().splitlines()
    header = raw[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in raw[1:]])
    if data.size == 0:
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, name in enumerate(header[1:], start=1):
        ax.plot(data[:, 0], data[:, j], label=name, linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_mask_histogram(stats: dict, out_path, title: str, reference=None):
    """Invalid-ratio histogram with mean/max markers; optional reference
    mean/max lines for calibration comparison."""
    fig, ax = plt.subplots(figsize=(7, 4))
    centers = 0.5 * (stats["bin_edges"][:-1] + stats["bin_edges"][1:])
    ax.bar(centers * 100, stats["histogram"], width=1.0, color="#4878a8")
    ax.axvline(stats["mean_ratio"] * 100, color="k", linestyle="-",
               label=f"mean {stats['mean_ratio'] * 100:.2f}%")
    ax.axvline(stats["max_ratio"] * 100, color="k", linestyle=":",
               label=f"max {stats['max_ratio'] * 100:.2f}%")
    if reference is not None:
        ref_mean, ref_max = reference
        ax.axvline(ref_mean * 100, color="#c44e52", linestyle="-",
                   label=f"reference mean {ref_mean * 100:.2f}%")
        ax.axvline(ref_max * 100, color="#c44e52", linestyle=":",
                   label=f"reference max {ref_max * 100:.2f}%")
    ax.set_xlabel("invalid pixel ratio (%)")
    ax.set_ylabel("masks")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_band_bars(band_values: dict, out_path, title="per-band SSIM"):
    """Grouped bars of per-frequency-band metric values; one group per band
    (low / mid / high), one bar per labeled series."""
    bands = ["low", "mid", "high"]
    labels = list(band_values.keys())
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(bands))
    width = 0.8 / max(1, len(labels))
    for i, lab in enumerate(labels):
        vals = band_values[lab]
        ax.bar(x + i * width, vals, width=width, label=lab)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(bands)
    ax.set_ylabel("SSIM")
    ax.set_title(title)
    lo = min(min(v) for v in band_values.values())
    ax.set_ylim(min(0.0, lo), 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
