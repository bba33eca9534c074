"""Command-line surface: gen-masks | train | infer | eval | freq-analyze | stats.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Report-producing
subcommands write delimited output plus a rendered figure under --out.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zoominpaint",
                description="Inpainting with super-resolved refinement: "
                            "zoom in, refine, zoom out.")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    gm = sub.add_parser("gen-masks", parents=[], help="sample brush-stroke mask PNGs "
                        "and a ratio-statistics report")
    gm.add_argument("--spec", choices=("small", "large"), required=True)
    gm.add_argument("--n", type=int, required=True)
    gm.add_argument("--size", type=int, default=256)
    gm.add_argument("--seed", type=int, default=0)
    gm.add_argument("--out", required=True)
    gm.add_argument("--strokes", type=int, default=None)

    st = sub.add_parser("stats", help="mask ratio statistics without writing mask PNGs")
    st.add_argument("--spec", choices=("small", "large"), required=True)
    st.add_argument("--n", type=int, required=True)
    st.add_argument("--size", type=int, default=256)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--out", required=True)
    st.add_argument("--strokes", type=int, default=None)

    tr = sub.add_parser("train", help="run the progressive training loop")
    tr.add_argument("--config", required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int, default=None,
                    help="override the config seed")

    inf = sub.add_parser("infer", help="inpaint one image with a checkpoint")
    inf.add_argument("--image", required=True)
    inf.add_argument("--mask", required=True)
    inf.add_argument("--ckpt", required=True)
    inf.add_argument("--out", required=True, help="output PNG path")
    inf.add_argument("--scale", type=int, default=None,
                     help="expected zoom factor; must match the checkpoint")

    ev = sub.add_parser("eval", help="inpaint a dataset and report metrics")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--masks", default=None, help="directory of mask PNGs")
    ev.add_argument("--mask-spec", choices=("small", "large"), default=None)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--crop", type=int, default=None)
    ev.add_argument("--out", required=True)

    fa = sub.add_parser("freq-analyze", help="per-frequency-band SSIM between "
                        "two image sets")
    fa.add_argument("--pred", required=True)
    fa.add_argument("--target", required=True)
    fa.add_argument("--levels", type=int, default=2)
    fa.add_argument("--out", required=True)
    return p


def _mask_spec(name, strokes):
    from .masks import large_mask_spec, small_mask_spec
    spec = small_mask_spec() if name == "small" else large_mask_spec()
    if strokes is not None:
        spec.strokes = strokes
    return spec


# calibration reference values for the two mask families (mean, max ratio)
MASK_REFERENCE = {"small": (0.043, 0.1575), "large": (0.1512, 0.5024)}


def _mask_report(spec_name, spec, stats, out_dir):
    from .report import save_mask_histogram, text_table, write_csv
    ref = MASK_REFERENCE[spec_name]
    rows = [
        ("mean_ratio", stats["mean_ratio"], ref[0]),
        ("max_ratio", stats["max_ratio"], ref[1]),
    ]
    table = text_table(("statistic", "measured", "reference"), rows)
    (out_dir / "mask_stats.txt").write_text(table)
    sys.stdout.write(table)
    write_csv(out_dir / "mask_stats.csv", ("statistic", "measured", "reference"), rows)
    write_csv(out_dir / "ratio_hist.csv", ("bin_lo", "bin_hi", "count"),
              [(float(lo), float(hi), int(c)) for lo, hi, c in
               zip(stats["bin_edges"][:-1], stats["bin_edges"][1:], stats["histogram"])])
    save_mask_histogram(stats, out_dir / "ratio_hist.png",
                        f"{spec_name} masks, n={int(stats['histogram'].sum())}",
                        reference=ref)


def cmd_gen_masks(args) -> int:
    from .imgio import save_mask
    from .masks import mask_statistics, sample_mask
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = _mask_spec(args.spec, args.strokes)
    rng = np.random.default_rng(args.seed)
    ratios = np.empty(args.n)
    for i in range(args.n):
        m = sample_mask(spec, args.size, args.size, rng)
        ratios[i] = m.mean()
        save_mask(m, out / f"mask_{i:05d}.png")
    hist, edges = np.histogram(ratios, bins=100, range=(0.0, 1.0))
    stats = {"mean_ratio": float(ratios.mean()), "max_ratio": float(ratios.max()),
             "histogram": hist, "bin_edges": edges}
    _mask_report(args.spec, spec, stats, out)
    return 0


def cmd_stats(args) -> int:
    from .masks import mask_statistics
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = _mask_spec(args.spec, args.strokes)
    stats = mask_statistics(spec, args.n, args.size, args.size, seed=args.seed)
    _mask_report(args.spec, spec, stats, out)
    return 0


def cmd_train(args) -> int:
    from .config import parse_config_text
    from .data import FolderDataset
    from .losses import FeatureExtractor
    from .networks import build_models
    from .pipeline import train
    from .report import save_loss_curves

    cfg = parse_config_text(Path(args.config).read_text())
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dtype = np.dtype(cfg.pipeline.dtype)
    models = build_models(cfg.network, seed=cfg.seed, dtype=dtype)
    phi = FeatureExtractor(seed=0, dtype=dtype)
    dataset = FolderDataset(args.data)
    summary = train(models, cfg.schedule(), dataset, cfg.network, cfg.pipeline,
                    cfg.loss, phi, out, seed=cfg.seed)
    (out / "config_used.cfg").write_text(cfg.to_text())
    save_loss_curves(summary["log_path"], out / "loss_curves.png")
    print(f"trained {summary['iterations']} iterations; "
          f"final checkpoint: {summary['final_checkpoint']}")
    return 0


def cmd_infer(args) -> int:
    from .checkpoint import load_checkpoint
    from .imgio import load_image, load_mask, save_image
    from .pipeline import infer

    models, net_cfg, _ = load_checkpoint(args.ckpt)
    if args.scale is not None and args.scale != net_cfg.scale:
        raise ValueError(f"checkpoint zoom factor {net_cfg.scale} disagrees "
                         f"with --scale {args.scale}")
    image = load_image(args.image)
    mask = load_mask(args.mask)
    result = infer(models, net_cfg, image, mask)
    save_image(result, args.out)
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate_dataset
    from .report import save_band_bars, text_table, write_csv

    if (args.masks is None) == (args.mask_spec is None):
        raise ValueError("provide exactly one of --masks or --mask-spec")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = _mask_spec(args.mask_spec, None) if args.mask_spec else None
    report = evaluate_dataset(args.ckpt, args.data, mask_dir=args.masks,
                              mask_spec=spec, seed=args.seed, crop=args.crop)
    headers = ("image", "psnr", "ssim", "ms_ssim", "l1_error", "hole_l1")
    rows = [(i, r["psnr"], r["ssim"], r["ms_ssim"], r["l1_error"], r["hole_l1"])
            for i, r in enumerate(report.per_image)]
    rows.append(("mean", report.psnr, report.ssim, report.ms_ssim,
                 report.l1_error, report.hole_l1))
    write_csv(out / "metrics.csv", headers, rows)
    band_rows = [("low", report.per_band_ssim[-1]),
                 ("mid", report.per_band_ssim[1]),
                 ("high", report.per_band_ssim[0])]
    write_csv(out / "bands.csv", ("band", "ssim"), band_rows)
    table = (text_table(headers, rows[-1:]) + "\n"
             + text_table(("band", "ssim"), band_rows))
    (out / "metrics.txt").write_text(table)
    sys.stdout.write(table)
    save_band_bars({"model": [report.per_band_ssim[-1], report.per_band_ssim[1],
                              report.per_band_ssim[0]]},
                   out / "bands.png")
    return 0


def cmd_freq_analyze(args) -> int:
    from .data import scan_dataset
    from .imgio import load_image
    from .metrics import band_metrics
    from .report import save_band_bars, text_table, write_csv

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    preds = scan_dataset(args.pred)
    targets = scan_dataset(args.target)
    if len(preds) != len(targets):
        raise ValueError(f"image counts differ: {len(preds)} predictions vs "
                         f"{len(targets)} targets")
    per_band = []
    for pp, tp in zip(preds, targets):
        per_band.append(band_metrics(load_image(pp)[0], load_image(tp)[0],
                                     levels=args.levels))
    mean_bands = np.mean(per_band, axis=0)
    names = [f"level{j}" for j in range(args.levels)] + ["residual"]
    labels = ["high", "mid", "low"] if args.levels == 2 else names
    rows = list(zip(reversed(labels), reversed([float(v) for v in mean_bands])))
    write_csv(out / "bands.csv", ("band", "ssim"), rows)
    table = text_table(("band", "ssim"), rows)
    (out / "bands.txt").write_text(table)
    sys.stdout.write(table)
    save_band_bars({"pred-vs-target": [float(v) for v in reversed(mean_bands)]},
                   out / "bands.png",
                   title=f"per-band SSIM over {len(preds)} images")
    return 0


_COMMANDS = {
    "gen-masks": cmd_gen_masks,
    "stats": cmd_stats,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "freq-analyze": cmd_freq_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:
        print(f"zoominpaint {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
