"""Command-line interface.

Subcommands: upscale, analyze, train-toy, compare, calibrate,
init-weights. Exit codes: 0 on success, 2 for usage problems (including
missing input files and unknown presets), 3 for data/format problems,
4 for numeric failures (NaN in a result). Every subcommand is
deterministic given its inputs and seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, archive, autograd, metrics, png_io
from .errors import (
    ArchiveError,
    ConfigError,
    ImageError,
    NumericError,
    ShapeError,
    VapsrError,
)
from .model import PRESETS, ModelConfig, build
from .tensor import Tensor


class _UsageError(Exception):
    pass


def _resolve_preset(name: str) -> ModelConfig:
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise _UsageError(f"unknown preset '{name}'; available presets: {known}")
    return PRESETS[name]


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise _UsageError(f"{p}: file not found")
    return p


def _parse_gt(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise _UsageError(f"--gt must look like 1280x720, got '{text}'") from None
    return h, w


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} contains NaN or Inf")


# ---------------------------------------------------------------------------
# Subcommand handlers


def _cmd_upscale(args) -> int:
    in_path = _require_file(args.input)
    weights_path = _require_file(args.weights)
    preset = _resolve_preset(args.preset) if args.preset else None
    net = archive.load_weights(weights_path, preset)

    img = png_io.load_image(in_path)
    x = Tensor(img[None], copy=False)
    out = net.forward(x)
    _check_finite(out.data, "network output")
    png_io.save_image(args.output, out.data[0])
    n, c, h, w = out.shape
    print(f"{in_path} -> {args.output} ({img.shape[2]}x{img.shape[1]} -> {w}x{h}, "
          f"x{net.config.scale} variant '{net.config.variant_tag}')")
    return 0


def _analyze_preset(config: ModelConfig, gt_h: int, gt_w: int, out_dir: str | None) -> int:
    from . import reports

    costs = analysis.layer_costs(config, gt_h, gt_w)
    summary = {
        "variant": config.variant_tag,
        "scale": config.scale,
        "gt_size": f"{gt_w}x{gt_h}",
        "params": analysis.param_count(config),
        "multi_adds": analysis.multi_adds(config, gt_h, gt_w),
        "attention_rf": analysis.attention_receptive_field(config),
    }
    if out_dir:
        text = reports.write_layer_report(costs, summary, out_dir)
    else:
        header, data = reports.layer_rows(costs)
        text = "\n".join(f"{k}: {v}" for k, v in summary.items()) + "\n\n" \
            + reports.render_table(header, data)
    print(text, end="")
    return 0


def _cmd_analyze(args) -> int:
    from . import reports

    gt_h, gt_w = _parse_gt(args.gt)
    if args.catalog:
        if args.catalog != "roadmap":
            raise _UsageError(f"unknown catalog '{args.catalog}' (only 'roadmap' exists)")
        rows = analysis.roadmap_report(gt_h=gt_h, gt_w=gt_w)
        if args.out:
            text = reports.write_roadmap_report(rows, args.out)
        else:
            header, data = reports.roadmap_rows(rows)
            text = reports.render_table(header, data)
        print(text, end="")
        return 0
    if args.config:
        config = ModelConfig.from_json(_require_file(args.config).read_text())
    else:
        config = _resolve_preset(args.preset)
    return _analyze_preset(config, gt_h, gt_w, args.out)


def _cmd_compare(args) -> int:
    a = png_io.load_image(_require_file(args.image_a))
    b = png_io.load_image(_require_file(args.image_b))
    if a.shape != b.shape:
        raise ShapeError(f"image sizes differ: {a.shape[2]}x{a.shape[1]} vs "
                         f"{b.shape[2]}x{b.shape[1]}")
    ya = metrics.rgb_to_y(a, quantize=args.quantize)
    yb = metrics.rgb_to_y(b, quantize=args.quantize)
    p = metrics.psnr(ya, yb, border_crop=args.border_crop)
    s = metrics.ssim(ya, yb, border_crop=args.border_crop)
    print(f"PSNR: {p:.4f} dB")
    print(f"SSIM: {s:.6f}")
    return 0


def _cmd_train_toy(args) -> int:
    from . import reports

    config = _resolve_preset(args.preset)
    if args.hr:
        hr_img = png_io.load_image(_require_file(args.hr))
        need = args.patch * config.scale
        if hr_img.shape[1] < need or hr_img.shape[2] < need:
            raise ShapeError(f"--hr image must be at least {need}x{need}")
        hr = hr_img[:, :need, :need].astype(np.float64)
        lr = np.clip(metrics.bicubic_resize(hr, args.patch, args.patch), 0.0, 1.0)
        hr_t = Tensor(hr[None].astype(np.float32), copy=False)
        lr_t = Tensor(lr[None].astype(np.float32), copy=False)
    else:
        lr_t, hr_t = autograd.make_overfit_patch(config.scale, args.patch, args.seed)

    result = autograd.train_toy(config, lr_t, hr_t, args.iterations,
                                lr=args.lr, seed=args.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports.write_training_report(result.history, out_dir)
    archive.save_weights(out_dir / "weights.vapw", build(config, params=result.params))
    ema_net = build(config, params=result.ema_params)
    archive.save_weights(out_dir / "weights_ema.vapw", ema_net)

    lines = [f"variant: {config.variant_tag}", f"iterations: {args.iterations}"]
    if result.history:
        first, last = result.history[0][1], result.history[-1][1]
        lines.append(f"l1_first: {first:.6f}")
        lines.append(f"l1_last: {last:.6f}")
        pred = ema_net.forward(lr_t)
        _check_finite(pred.data, "EMA output")
        y_pred = metrics.rgb_to_y(np.clip(pred.data[0], 0.0, 1.0))
        y_ref = metrics.rgb_to_y(hr_t.data[0])
        lines.append(
            f"ema_y_psnr_db: {metrics.psnr(y_pred, y_ref, border_crop=config.scale):.4f}"
        )
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def _cmd_calibrate(args) -> int:
    from . import reports

    rows = analysis.calibration_report()
    if args.out:
        text = reports.write_calibration_report(rows, args.out)
    else:
        header, data = reports.calibration_rows([r for r in rows if r.selected])
        text = reports.render_table(header, data, title="Calibration winners\n")
    print(text, end="")
    return 0


def _cmd_init_weights(args) -> int:
    config = _resolve_preset(args.preset)
    net = build(config, seed=args.seed)
    archive.save_weights(args.output, net)
    print(f"{args.output}: variant '{config.variant_tag}', "
          f"{net.num_params()} parameters, seed {args.seed}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vapsr",
        description="VapSR super-resolution: inference, toy training, and "
                    "complexity analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("upscale", help="super-resolve a PNG with saved weights")
    p.add_argument("--input", required=True, help="low-resolution input PNG")
    p.add_argument("--weights", required=True, help="weight archive (.vapw)")
    p.add_argument("--output", required=True, help="output PNG path")
    p.add_argument("--preset", help="require the archive to match this preset")
    p.set_defaults(func=_cmd_upscale)

    p = sub.add_parser("analyze", help="parameter / Multi-Adds / receptive-field report")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", help="analyze one named preset")
    group.add_argument("--config", help="analyze a config JSON file")
    group.add_argument("--catalog", help="analyze a whole catalog ('roadmap')")
    p.add_argument("--gt", default="1280x720",
                   help="ground-truth output size WxH for Multi-Adds (default 1280x720)")
    p.add_argument("--out", help="directory for report.csv / report.txt / report.png")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("train-toy", help="overfit one synthetic patch (desk-scale training)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", default="toy_x4", help="model preset (default toy_x4)")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch", type=int, default=16, help="LR patch side (default 16)")
    p.add_argument("--hr", help="optional HR PNG to crop the patch from")
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("compare", help="Y-channel PSNR/SSIM between two PNGs")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--border-crop", type=int, default=0)
    p.add_argument("--quantize", action="store_true",
                   help="round to the 8-bit grid before converting to Y")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("calibrate", help="re-run the preset calibration sweep")
    p.add_argument("--out", help="directory for calibration.csv / .txt / .png")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("init-weights", help="save freshly initialized weights for a preset")
    p.add_argument("--preset", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_init_weights)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ArchiveError, ConfigError, ImageError, ShapeError, VapsrError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
